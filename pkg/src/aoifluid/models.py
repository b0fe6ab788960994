"""Age-of-information models for bufferless and single-buffer status-update queues.

Both models map the age dynamics onto a fluid queue whose level retraces the
age along each update cycle:

* ``BufferlessSpec`` — renewal arrivals and services, both phase-type; a new
  arrival preempts the packet in service with probability ``p``.  The fluid
  queue tracks (arrival phase, service phase) products through four cycle
  phases, and the age / peak-age laws drop out of the stationary solution as
  normalized partial sums (age) and flow-weighted entry densities (peak age).

* ``SingleBufferSpec`` — Poisson arrivals, phase-type service, a one-packet
  waiting room whose occupant is replaced by a fresh arrival with probability
  ``r``, no preemption.  A first, smaller fluid queue yields the queue-wait
  law of successful packets in matrix-exponential form; the wait then seeds
  the six-phase cycle construction for the age laws.  Non-Poisson arrivals
  are rejected: the wait-time tilt ``e^{-r lambda x}`` only commutes with the
  cycle dynamics for memoryless arrivals.

All outputs are packaged as :class:`AgeResult` with distributions in
matrix-exponential form, so moments and tail probabilities are closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mfq
from .errors import StructuralError
from .mfq import GmfqSpec, MatrixExpForm, SteadyState
from .phdist import MeDistribution, PhDistribution, me_from_form

__all__ = [
    "BufferlessSpec",
    "SingleBufferSpec",
    "StatePartition",
    "AgeResult",
    "build_bufferless",
    "analyze_bufferless",
    "build_residual_process",
    "wait_time_distribution",
    "build_single_buffer",
    "analyze_single_buffer",
    "age_violation",
]


def _require_no_atom(dist: MeDistribution, what: str):
    if dist.mass0 != 0.0:
        raise StructuralError(f"{what} must not have a probability mass at zero")


@dataclass(frozen=True)
class BufferlessSpec:
    """Bufferless queue with probabilistic preemption.

    ``arrival`` and ``service`` are phase-type with no atom at zero; a packet
    in service is preempted by a new arrival with probability ``p``.
    """

    arrival: PhDistribution
    service: PhDistribution
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise StructuralError(f"preemption probability must lie in [0,1], got {self.p}")
        _require_no_atom(self.arrival, "interarrival distribution")
        _require_no_atom(self.service, "service distribution")

    @property
    def load(self) -> float:
        """System load: arrival rate over service rate."""
        return self.service.mean / self.arrival.mean


@dataclass(frozen=True)
class SingleBufferSpec:
    """Single-buffer queue with Poisson arrivals and probabilistic replacement."""

    lam: float
    service: PhDistribution
    r: float

    def __post_init__(self):
        if self.lam <= 0.0:
            raise StructuralError(f"arrival rate must be positive, got {self.lam}")
        if not 0.0 <= self.r <= 1.0:
            raise StructuralError(f"replacement probability must lie in [0,1], got {self.r}")
        _require_no_atom(self.service, "service distribution")

    @property
    def load(self) -> float:
        return self.lam * self.service.mean


@dataclass(frozen=True)
class StatePartition:
    """Layout of a model's fluid-queue state space.

    ``ranges`` maps phase labels to contiguous index ranges; product phases
    additionally record their (arrival-major, service-minor) shape so a pair
    of component phases can be turned into a flat index.
    """

    ranges: dict[str, range]
    shapes: dict[str, tuple[int, int]]

    @property
    def n(self) -> int:
        return max(r.stop for r in self.ranges.values())

    def indices(self, *labels: str) -> np.ndarray:
        """Flat indices of the union of the given phases."""
        return np.concatenate([np.arange(self.ranges[lb].start, self.ranges[lb].stop)
                               for lb in labels])

    def index(self, label: str, i: int = 0, j: int | None = None) -> int:
        """Flat index of component state (i, j) of a phase (lexicographic)."""
        rng = self.ranges[label]
        if j is None:
            return rng.start + i
        _, minor = self.shapes[label]
        return rng.start + i * minor + j


@dataclass(frozen=True)
class AgeResult:
    """Age and peak-age laws of one model, plus convenience moments."""

    aoi: MeDistribution
    paoi: MeDistribution
    wait: MeDistribution | None
    mean_aoi: float
    m2_aoi: float
    mean_paoi: float
    m2_paoi: float
    load: float
    model: BufferlessSpec | SingleBufferSpec

    def aoi_violation(self, x):
        return age_violation(self.aoi, x)

    def paoi_violation(self, x):
        return age_violation(self.paoi, x)

    def to_json(self) -> dict:
        out = {
            "aoi": self.aoi.to_json(),
            "paoi": self.paoi.to_json(),
            "mean_aoi": self.mean_aoi,
            "m2_aoi": self.m2_aoi,
            "mean_paoi": self.mean_paoi,
            "m2_paoi": self.m2_paoi,
            "load": self.load,
        }
        if self.wait is not None:
            out["wait"] = self.wait.to_json()
            out["mean_wait"] = self.wait.moment(1)
        return out


def age_violation(d: MeDistribution, x):
    """Tail probability 1 - cdf(x) of an age distribution."""
    xs = np.asarray(x, dtype=float)
    if np.any(np.atleast_1d(xs) < 0.0):
        raise ValueError("age violation is defined for x >= 0 only")
    return 1.0 - d.cdf(x)


# ---------------------------------------------------------------------------
# bufferless queue
# ---------------------------------------------------------------------------

def build_bufferless(spec: BufferlessSpec, reset_rate: float = 1.0):
    """Assemble the cycle fluid queue of the bufferless model.

    States, in order: products (arrival x service) for the first-service
    phase, arrival phases for the idle phase, products again for the
    next-service phase, and one reset state that drains the level.  The age
    results are invariant to ``reset_rate`` (the exponential dwell at level
    zero in the reset state); it is exposed only so that invariance can be
    verified.
    """
    k, ell = spec.arrival.order, spec.service.order
    tau, T = spec.arrival.alpha, spec.arrival.S
    sigma, S = spec.service.alpha, spec.service.S
    kappa = spec.arrival.exit_rates
    nu = spec.service.exit_rates
    p = spec.p

    n = 2 * k * ell + k + 1
    part = StatePartition(
        ranges={
            "first_service": range(0, k * ell),
            "idle": range(k * ell, k * ell + k),
            "next_service": range(k * ell + k, 2 * k * ell + k),
            "reset": range(n - 1, n),
        },
        shapes={"first_service": (k, ell), "next_service": (k, ell)},
    )
    s1, s2, s3 = part.ranges["first_service"], part.ranges["idle"], part.ranges["next_service"]
    last = n - 1

    Q = np.zeros((n, n))
    Q11 = np.kron(np.eye(k), S) + np.kron(T, np.eye(ell)) \
        + (1.0 - p) * np.kron(np.outer(kappa, tau), np.eye(ell))
    Q[np.ix_(s1, s1)] = Q11
    Q[np.ix_(s1, s2)] = np.kron(np.eye(k), nu.reshape(ell, 1))
    Q[s1, last] = p * np.kron(kappa, np.ones(ell))
    Q[np.ix_(s2, s2)] = T
    Q[np.ix_(s2, s3)] = np.outer(kappa, np.kron(tau, sigma))
    Q[np.ix_(s3, s3)] = Q11 + p * np.outer(np.kron(kappa, np.ones(ell)), np.kron(tau, sigma))
    Q[s3, last] = np.kron(np.ones(k), nu)

    Qt = np.zeros((n, n))
    restart = np.kron(tau, sigma)
    Qt[last, s1] = reset_rate * restart
    Qt[last, last] = -reset_rate * restart.sum()

    R = np.ones(n)
    R[last] = -1.0
    return GmfqSpec(Q, Qt, R), part


def _normalized_sum_form(ss: SteadyState, idx: np.ndarray) -> MatrixExpForm:
    """Sum of the state densities over ``idx``, normalized to a probability density."""
    h = ss.H[:, idx].sum(axis=1)
    total = float(-ss.g @ np.linalg.solve(ss.A, h))
    return MatrixExpForm(ss.g / total, ss.A, h, 0.0)


def _result_from_forms(aoi_form, paoi_form, spec, load, wait=None) -> AgeResult:
    return AgeResult(
        aoi=me_from_form(aoi_form.g, aoi_form.A, aoi_form.h, 0.0),
        paoi=me_from_form(paoi_form.g, paoi_form.A, paoi_form.h, 0.0),
        wait=wait,
        mean_aoi=mfq.form_moment(aoi_form, 1),
        m2_aoi=mfq.form_moment(aoi_form, 2),
        mean_paoi=mfq.form_moment(paoi_form, 1),
        m2_paoi=mfq.form_moment(paoi_form, 2),
        load=load,
        model=spec,
    )


def analyze_bufferless(spec: BufferlessSpec, reset_rate: float = 1.0) -> AgeResult:
    """Exact age and peak-age laws of the bufferless queue."""
    gspec, part = build_bufferless(spec, reset_rate)
    ss = mfq.solve(gspec)
    aoi_form = _normalized_sum_form(ss, part.indices("idle", "next_service"))
    paoi_form = mfq.conditional_entry_density(
        ss, gspec.Q, part.indices("next_service"), part.index("reset")
    )
    return _result_from_forms(aoi_form, paoi_form, spec, spec.load)


# ---------------------------------------------------------------------------
# single-buffer queue
# ---------------------------------------------------------------------------

def build_residual_process(lam: float, service: PhDistribution, reset_rate: float = 1.0):
    """Assemble the residual-service fluid queue feeding the wait-time law.

    States: service phases (level rises for one service duration), then a
    boundary pair tracking queue occupancy 0 or 1 while the level drains.
    Two negative drifts, so only the general reducer applies.
    """
    if lam <= 0.0:
        raise StructuralError(f"arrival rate must be positive, got {lam}")
    _require_no_atom(service, "service distribution")
    ell = service.order
    nu = service.exit_rates
    sigma = service.alpha

    n = ell + 2
    part = StatePartition(
        ranges={
            "loading": range(0, ell),
            "queue0": range(ell, ell + 1),
            "queue1": range(ell + 1, ell + 2),
        },
        shapes={},
    )
    Q = np.zeros((n, n))
    Q[:ell, :ell] = service.S
    Q[:ell, ell] = nu
    Q[ell, ell] = -lam
    Q[ell, ell + 1] = lam

    Qt = np.zeros((n, n))
    Qt[ell, :ell] = lam * sigma
    Qt[ell, ell] = -lam * sigma.sum()
    Qt[ell + 1, :ell] = reset_rate * sigma
    Qt[ell + 1, ell + 1] = -reset_rate * sigma.sum()

    R = np.ones(n)
    R[ell:] = -1.0
    return GmfqSpec(Q, Qt, R), part


def wait_time_distribution(lam: float, service: PhDistribution, r: float) -> MeDistribution:
    """Queue-wait law of successful packets in the single-buffer queue.

    Solves the residual-service process, conditions on admission (queue empty,
    or the waiting packet replaced with probability ``r``) and on surviving
    replacement during the wait, which for Poisson arrivals is the exponential
    tilt ``e^{-r lam x}`` of the boundary densities.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"replacement probability must lie in [0,1], got {r}")
    gspec, part = build_residual_process(lam, service)
    ss = mfq.solve(gspec)
    i0 = part.ranges["queue0"].start
    i1 = part.ranges["queue1"].start
    h0, h1 = ss.H[:, i0], ss.H[:, i1]
    c0 = ss.c[i0]
    B = ss.A - r * lam * np.eye(ss.A.shape[0])
    hw = h0 + r * h1
    eta = 1.0 / (-ss.g @ np.linalg.solve(B, hw) + c0)
    return me_from_form(eta * ss.g, B, hw, mass0=eta * c0)


def build_single_buffer(spec: SingleBufferSpec, wait: MeDistribution,
                        reset_rate: float = 1.0):
    """Assemble the cycle fluid queue of the single-buffer model.

    ``wait`` is the queue-wait law produced by :func:`wait_time_distribution`
    (matrix-exponential of the same order as the service distribution).
    States, in order: wait phases, service of the tagged packet with an empty
    or occupied waiting room, an empty-system state, service of the successor
    packet, and the reset state.
    """
    ell = spec.service.order
    if wait.order != ell:
        raise StructuralError(
            f"wait distribution has order {wait.order}, expected service order {ell}"
        )
    lam = spec.lam
    sigma, S = spec.service.alpha, spec.service.S
    nu = spec.service.exit_rates
    beta, B = wait.alpha, wait.S
    psi = wait.exit_rates
    beta0 = wait.mass0

    n = 4 * ell + 2
    part = StatePartition(
        ranges={
            "wait": range(0, ell),
            "service_q0": range(ell, 2 * ell),
            "service_q1": range(2 * ell, 3 * ell),
            "empty": range(3 * ell, 3 * ell + 1),
            "next_service": range(3 * ell + 1, 4 * ell + 1),
            "reset": range(4 * ell + 1, n),
        },
        shapes={},
    )
    i_empty, last = 3 * ell, n - 1
    sl_wait = slice(0, ell)
    sl_q0 = slice(ell, 2 * ell)
    sl_q1 = slice(2 * ell, 3 * ell)
    sl_next = slice(3 * ell + 1, 4 * ell + 1)

    Q = np.zeros((n, n))
    Q[sl_wait, sl_wait] = B
    Q[sl_wait, sl_q0] = np.outer(psi, sigma)
    Q[sl_q0, sl_q0] = S - lam * np.eye(ell)
    Q[sl_q0, sl_q1] = lam * np.eye(ell)
    Q[sl_q0, i_empty] = nu
    Q[sl_q1, sl_q1] = S
    Q[sl_q1, sl_next] = np.outer(nu, sigma)
    Q[i_empty, i_empty] = -lam
    Q[i_empty, sl_next] = lam * sigma
    Q[sl_next, sl_next] = S
    Q[sl_next, last] = nu

    Qt = np.zeros((n, n))
    Qt[last, sl_wait] = reset_rate * beta
    Qt[last, sl_q0] = reset_rate * beta0 * sigma
    Qt[last, last] = -reset_rate * (beta.sum() + beta0 * sigma.sum())

    R = np.ones(n)
    R[last] = -1.0
    return GmfqSpec(Q, Qt, R), part


def analyze_single_buffer(spec: SingleBufferSpec, reset_rate: float = 1.0) -> AgeResult:
    """Exact age, peak-age, and queue-wait laws of the single-buffer queue."""
    wait = wait_time_distribution(spec.lam, spec.service, spec.r)
    gspec, part = build_single_buffer(spec, wait, reset_rate)
    ss = mfq.solve(gspec)
    aoi_form = _normalized_sum_form(ss, part.indices("empty", "next_service"))
    paoi_form = mfq.conditional_entry_density(
        ss, gspec.Q, part.indices("next_service"), part.index("reset")
    )
    return _result_from_forms(aoi_form, paoi_form, spec, spec.load, wait=wait)

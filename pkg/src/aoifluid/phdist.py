"""Phase-type and matrix-exponential distributions.

A distribution of order ``m`` is stored as a row vector ``alpha`` of length
``m``, an ``m x m`` subgenerator ``S`` with stable eigenvalues, and an atom
``mass0`` at zero.  For ``x > 0``::

    pdf(x) = -alpha expm(S x) S 1,    cdf(x) = 1 - alpha expm(S x) 1

``PhDistribution`` additionally requires the stochastic sign structure
(``alpha >= 0``, Metzler ``S`` with nonpositive row sums) and therefore
supports exact random sampling by playing the absorbing chain.
``MeDistribution`` keeps only the algebraic form, which is what the age
processes produced by the fluid-queue models live in.

Two-moment fitting follows the classic recipes (Tijms, "A First Course in
Stochastic Models", 2003): Erlang or a mixture of two Erlangs of consecutive
orders with a common rate when scov <= 1, a balanced-means two-phase
hyper-exponential when scov > 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import ContractError, StructuralError
from .policy import POLICY

__all__ = [
    "MeDistribution",
    "PhDistribution",
    "validate",
    "pdf",
    "cdf",
    "moment",
    "fit_mean_scov",
    "sample",
    "me_from_form",
]


def _as_row(v, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1:
        raise StructuralError(f"{name} must be a one-dimensional vector, got shape {arr.shape}")
    return arr


def _as_square(m, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(m, dtype=float))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise StructuralError(f"{name} must be a square matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class MeDistribution:
    """Matrix-exponential distribution (alpha, S) with an atom at zero.

    The entries of ``alpha`` and the off-diagonal of ``S`` may be negative;
    only the algebraic density form is guaranteed.  Instances are immutable
    and safe to share across threads.
    """

    alpha: np.ndarray
    S: np.ndarray
    mass0: float = 0.0

    def __post_init__(self):
        alpha = _as_row(self.alpha, "alpha")
        S = _as_square(self.S, "S")
        if alpha.shape[0] != S.shape[0]:
            raise StructuralError(
                f"alpha has length {alpha.shape[0]} but S is {S.shape[0]}x{S.shape[1]}"
            )
        alpha.setflags(write=False)
        S.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "mass0", float(self.mass0))

    @property
    def order(self) -> int:
        return self.alpha.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        """Absorption-rate vector -S 1."""
        return -self.S @ np.ones(self.order)

    def pdf(self, x):
        """Density -alpha e^{Sx} S 1 at x >= 0 (the atom is never folded in)."""
        return _eval_grid(self, np.asarray(x, dtype=float), kind="pdf")

    def cdf(self, x):
        """Probability 1 - alpha e^{Sx} 1 at x >= 0 (includes the atom)."""
        return _eval_grid(self, np.asarray(x, dtype=float), kind="cdf")

    def moment(self, i: int) -> float:
        """Raw moment i! alpha (-S)^{-i} 1 for integer i >= 1."""
        if not isinstance(i, (int, np.integer)) or i < 1:
            raise ValueError(f"moment order must be a positive integer, got {i!r}")
        y = np.ones(self.order)
        for _ in range(i):
            y = np.linalg.solve(-self.S, y)
        return float(math.factorial(i) * (self.alpha @ y))

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def scov(self) -> float:
        """Squared coefficient of variation, variance / mean^2."""
        m1 = self.moment(1)
        return self.moment(2) / m1**2 - 1.0

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "S": self.S.tolist(),
            "mass0": self.mass0,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MeDistribution":
        return cls(obj["alpha"], obj["S"], obj.get("mass0", 0.0))


@dataclass(frozen=True)
class PhDistribution(MeDistribution):
    """Phase-type distribution: absorption time of a CTMC with one absorbing state."""

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw absorption times by simulating the chain.

        ``rng`` is an externally owned ``numpy.random.Generator``; callers
        wanting parallel sampling use independent streams.  Returns a scalar
        when ``size`` is None, else an array of length ``size``.
        """
        violations = _stochastic_violations(self)
        if violations:
            raise ContractError(
                "sampling requires a stochastically valid phase-type distribution: "
                + "; ".join(violations)
            )
        n = 1 if size is None else int(size)
        out = _sample_absorbing(self, rng, n)
        return float(out[0]) if size is None else out


def validate(d: MeDistribution) -> list[str]:
    """Return a description of every violated invariant (empty when valid).

    ``PhDistribution`` inputs are checked against the stochastic constraints;
    plain ``MeDistribution`` inputs against the relaxed algebraic ones,
    including the numerical nonnegativity screen of the pdf.
    """
    p = POLICY
    out: list[str] = []
    lam = np.linalg.eigvals(d.S)
    max_re = float(lam.real.max())
    if max_re >= 0.0:
        out.append(f"S is not stable: max eigenvalue real part = {max_re:.3e}")

    total = float(d.alpha.sum() + d.mass0)
    if isinstance(d, PhDistribution):
        if abs(total - 1.0) > p.ph_prob_sum_tol:
            out.append(f"alpha·1+mass0 ≠ 1 (residual={total - 1.0:.3e})")
        out.extend(_stochastic_violations(d))
        if not -p.nonneg_entry_tol <= d.mass0 <= 1.0 + p.nonneg_entry_tol:
            out.append(f"mass0 outside [0,1]: {d.mass0!r}")
        return out

    if abs(total - 1.0) > p.me_norm_tol:
        out.append(f"alpha·1+mass0 ≠ 1 (residual={total - 1.0:.3e})")
    if not -p.nonneg_entry_tol <= d.mass0 <= 1.0 + p.nonneg_entry_tol:
        out.append(f"mass0 outside [0,1]: {d.mass0!r}")
    if max_re < 0.0:
        dip = _pdf_screen_min(d)
        if dip < -p.pdf_screen_tol:
            out.append(f"pdf dips below zero on the screening grid (min={dip:.3e})")
    return out


def _stochastic_violations(d: MeDistribution) -> list[str]:
    tol = POLICY.nonneg_entry_tol
    out = []
    if d.alpha.min(initial=0.0) < -tol:
        out.append(f"alpha has negative entries (min={d.alpha.min():.3e})")
    diag = np.diag(d.S)
    if diag.max(initial=-np.inf) >= 0.0:
        out.append(f"diagonal of S not strictly negative (max={diag.max():.3e})")
    off = d.S - np.diag(diag)
    if off.min() < -tol:
        out.append(f"S has negative off-diagonal entries (min={off.min():.3e})")
    rowsums = d.S @ np.ones(d.order)
    if rowsums.max() > tol:
        out.append(f"S·1 has positive entries (max={rowsums.max():.3e})")
    return out


def _pdf_screen_min(d: MeDistribution) -> float:
    """Minimum pdf value on the standard log-spaced screening grid."""
    p = POLICY
    decay = abs(float(np.linalg.eigvals(d.S).real.max()))
    span = p.pdf_screen_span / decay
    grid = np.concatenate([[0.0], np.geomspace(span * 1e-6, span, p.pdf_screen_points)])
    return float(np.min(d.pdf(grid)))


def _eval_grid(d: MeDistribution, x: np.ndarray, kind: str):
    scalar = x.ndim == 0
    xs = np.atleast_1d(x)
    if xs.size and xs.min() < 0.0:
        raise ValueError(f"{kind} is defined for x >= 0 only, got min(x) = {xs.min()}")
    ones = np.ones(d.order)
    out = np.empty(xs.shape, dtype=float)
    if kind == "pdf":
        w = -d.S @ ones
        for idx, xi in np.ndenumerate(xs):
            out[idx] = d.alpha @ expm(d.S * xi) @ w
    else:
        for idx, xi in np.ndenumerate(xs):
            out[idx] = 1.0 - d.alpha @ expm(d.S * xi) @ ones
    return float(out[0]) if scalar else out


def pdf(d: MeDistribution, x):
    return d.pdf(x)


def cdf(d: MeDistribution, x):
    return d.cdf(x)


def moment(d: MeDistribution, i: int) -> float:
    return d.moment(i)


def sample(d: MeDistribution, rng: np.random.Generator, size: int | None = None):
    """Sample ``d``; only stochastically valid phase-type inputs are supported."""
    if not isinstance(d, PhDistribution):
        raise TypeError("sampling is supported for PhDistribution only")
    return d.sample(rng, size)


def _sample_absorbing(d: PhDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    m = d.order
    rates = -np.diag(d.S)
    jump = np.clip(d.S - np.diag(np.diag(d.S)), 0.0, None)
    # embedded jump probabilities; final column is absorption
    probs = np.hstack([jump / rates[:, None], (d.exit_rates / rates)[:, None]])
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0

    init = np.clip(np.append(d.alpha, d.mass0), 0.0, None)
    init /= init.sum()
    state = rng.choice(m + 1, size=n, p=init)

    total = np.zeros(n)
    active = np.flatnonzero(state < m)
    while active.size:
        s = state[active]
        total[active] += rng.exponential(1.0, size=active.size) / rates[s]
        u = rng.random(active.size)
        state[active] = (cum[s] < u[:, None]).sum(axis=1)
        active = active[state[active] < m]
    return total


def fit_mean_scov(mean: float, scov: float) -> PhDistribution:
    """Fit a phase-type distribution to a mean and squared coefficient of variation.

    For ``scov == 1`` an exponential, for ``scov < 1`` an Erlang (when
    ``1/scov`` is an integer) or a mixture of two Erlangs of consecutive
    orders with a common rate, and for ``scov > 1`` a two-phase
    hyper-exponential with balanced means.  Both fitted moments are exact.
    """
    if mean <= 0.0 or scov <= 0.0:
        raise ValueError(f"mean and scov must be positive, got mean={mean}, scov={scov}")
    if abs(scov - 1.0) <= 1e-12:
        return PhDistribution([1.0], [[-1.0 / mean]])
    if scov > 1.0:
        w = math.sqrt((scov - 1.0) / (scov + 1.0))
        q = np.array([(1.0 + w) / 2.0, (1.0 - w) / 2.0])
        rates = 2.0 * q / mean
        return PhDistribution(q, np.diag(-rates))
    # scov < 1: common-rate Erlang mixture of orders k-1 and k,
    # entering the chain one stage in with probability q.
    k = max(2, math.ceil(1.0 / scov - 1e-10))
    q = (k * scov - math.sqrt(k * (1.0 + scov) - k * k * scov)) / (1.0 + scov)
    q = min(max(q, 0.0), 1.0)
    rate = (k - q) / mean
    S = rate * (np.eye(k, k, 1) - np.eye(k))
    alpha = np.zeros(k)
    alpha[0] = 1.0 - q
    alpha[1] = q
    return PhDistribution(alpha, S)


def me_from_form(g, A, h, mass0: float = 0.0) -> MeDistribution:
    """Convert a density ``g e^{Ax} h + mass0 δ(x)`` to an (alpha, S) pair.

    Requires ``A`` stable and ``-g A^{-1} h + mass0 = 1``.  The change of
    basis is a nonsingular M with row sums ``M 1 = -A^{-1} h``, so that the
    returned distribution reproduces ``+g e^{Ax} h`` pointwise.
    """
    g = _as_row(g, "g")
    A = _as_square(A, "A")
    h = _as_row(np.asarray(h).reshape(-1), "h")
    n = A.shape[0]
    if g.shape[0] != n or h.shape[0] != n:
        raise StructuralError(
            f"shape mismatch: g has length {g.shape[0]}, h {h.shape[0]}, A is {n}x{n}"
        )
    if np.linalg.eigvals(A).real.max() >= 0.0:
        raise ContractError("A must be stable (all eigenvalues in the open left half-plane)")
    if not np.any(h):
        if abs(mass0 - 1.0) > POLICY.me_form_tol:
            raise ContractError(f"h = 0 requires mass0 = 1, got mass0 = {mass0}")
        return MeDistribution(np.zeros(n), A, 1.0)
    total = float(-g @ np.linalg.solve(A, h) + mass0)
    if abs(total - 1.0) > POLICY.me_form_tol:
        raise ContractError(
            f"form is not normalized: -g A^-1 h + mass0 = {total!r} (must be 1)"
        )

    v = -np.linalg.solve(A, h)
    # Any index with v_k != 0 works; the largest entry gives the best scaling.
    k = int(np.argmax(np.abs(v)))
    zero = np.abs(v) <= 1e-14 * abs(v[k])
    diag = np.where(zero, 1.0, v)
    M = np.diag(diag)
    M[zero, k] = -1.0
    sigma = g @ M
    S = np.linalg.solve(M, A @ M)
    return MeDistribution(sigma, S, mass0)

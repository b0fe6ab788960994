"""Steady-state solver for Markov fluid queues with a distinct boundary regime.

The queue is a pair ``(level, phase)``: the phase is a CTMC with generator
``Q`` while the level is positive and ``Qtilde`` while the level sits at
zero, and the level changes at rate ``R[i]`` (never zero) in phase ``i``.
The stationary law has the matrix-exponential form::

    f_i(x) = g e^{Ax} h_i        for x > 0, plus an atom c_i at x = 0,

with ``c_i = 0`` in every positive-drift phase.  The solver block-triangularizes
``Q R^{-1}`` with an orthogonal similarity that isolates the anti-stable
invariant subspace (the structural zero eigenvalue included), then resolves
``g`` and the boundary masses from the flow-balance conditions at level zero.

Two reducers are available: the general path via the sorted real Schur form
and, for the common special case ``R = diag(1, ..., 1, -1)`` with a zero last
row of ``Q``, a single Householder reflection (Golub & Van Loan, ch. 5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateConditioningError,
    ModelInstabilityError,
    NumericalError,
    PreconditionError,
    StructuralError,
)
from .policy import POLICY

__all__ = [
    "GmfqSpec",
    "SteadyState",
    "MatrixExpForm",
    "validate_spec",
    "solve",
    "householder_reducer",
    "conditional_entry_density",
    "form_moment",
]


@dataclass(frozen=True)
class GmfqSpec:
    """Fluid-queue specification: bulk generator, boundary generator, drifts.

    States may be supplied in any order; the solver permutes them internally
    so positive drifts come first and undoes the permutation on output.
    """

    Q: np.ndarray
    Qtilde: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        Qt = np.atleast_2d(np.asarray(self.Qtilde, dtype=float))
        R = np.atleast_1d(np.asarray(self.R, dtype=float))
        n = R.shape[0]
        if Q.shape != (n, n) or Qt.shape != (n, n):
            raise StructuralError(
                f"inconsistent shapes: Q {Q.shape}, Qtilde {Qt.shape}, R length {n}"
            )
        for arr in (Q, Qt, R):
            arr.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "Qtilde", Qt)
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def b(self) -> int:
        """Number of positive-drift states."""
        return int(np.count_nonzero(self.R > 0.0))

    @property
    def a(self) -> int:
        """Number of negative-drift states."""
        return int(np.count_nonzero(self.R < 0.0))

    def to_json(self) -> dict:
        return {"Q": self.Q.tolist(), "Qtilde": self.Qtilde.tolist(), "R": self.R.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "GmfqSpec":
        return cls(obj["Q"], obj["Qtilde"], obj["R"])


def validate_spec(spec: GmfqSpec) -> list[str]:
    """Describe every violated invariant of a fluid-queue spec.

    Sign violations are reported but tolerated by :func:`solve`, because
    generators assembled from matrix-exponential (rather than phase-type)
    blocks legitimately carry negative off-diagonal entries.
    """
    p = POLICY
    out = []
    rs = np.abs(spec.Q.sum(axis=1)).max()
    if rs > p.generator_row_tol:
        out.append(f"rows of Q do not sum to zero (max |sum| = {rs:.3e})")
    rs = np.abs(spec.Qtilde.sum(axis=1)).max()
    if rs > p.generator_row_tol:
        out.append(f"rows of Qtilde do not sum to zero (max |sum| = {rs:.3e})")
    if np.any(spec.R == 0.0):
        out.append("zero drifts are not supported")
    for name, m in (("Q", spec.Q), ("Qtilde", spec.Qtilde)):
        off = m - np.diag(np.diag(m))
        if off.min() < -p.nonneg_entry_tol:
            out.append(f"{name} has negative off-diagonal entries (min = {off.min():.3e})")
    return out


@dataclass(frozen=True)
class SolveReport:
    """Numerical diagnostics of one solver run."""

    method: str
    orthogonality_error: float
    lower_block_norm: float
    boundary_residual: float
    leading_eig_min_real: float
    trailing_eig_max_real: float
    total_probability: float


@dataclass(frozen=True)
class SteadyState:
    """Stationary law of a fluid queue, in matrix-exponential form.

    ``density(x)[i] = g e^{Ax} H[:, i]`` for x > 0 and ``c[i]`` is the atom of
    state i at level zero.  Columns of ``H`` follow the state order of the
    spec that was solved.
    """

    g: np.ndarray
    A: np.ndarray
    H: np.ndarray
    c: np.ndarray
    report: SolveReport

    def __post_init__(self):
        for arr in (self.g, self.A, self.H, self.c):
            np.asarray(arr).setflags(write=False)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    def density(self, x: float) -> np.ndarray:
        """Joint density vector at level x > 0 (atoms not included)."""
        return self.g @ scipy.linalg.expm(self.A * x) @ self.H

    def level_cdf(self, x: float) -> np.ndarray:
        """Per-state probability of {level <= x}, atoms included."""
        n = self.A.shape[0]
        E = scipy.linalg.expm(self.A * x) - np.eye(n)
        return self.c + self.g @ np.linalg.solve(self.A, E @ self.H)

    def total_probability(self) -> float:
        integral = -self.g @ np.linalg.solve(self.A, self.H.sum(axis=1))
        return float(integral + self.c.sum())


@dataclass(frozen=True)
class MatrixExpForm:
    """Raw density form g e^{Ax} h + mass0 δ(x)."""

    g: np.ndarray
    A: np.ndarray
    h: np.ndarray
    mass0: float = 0.0

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.g, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        h = np.atleast_1d(np.asarray(self.h, dtype=float)).reshape(-1)
        if A.shape[0] != A.shape[1] or g.shape[0] != A.shape[0] or h.shape[0] != A.shape[0]:
            raise StructuralError(
                f"inconsistent form shapes: g {g.shape}, A {A.shape}, h {h.shape}"
            )
        for arr in (g, A, h):
            arr.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "mass0", float(self.mass0))

    def pdf(self, x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([self.g @ scipy.linalg.expm(self.A * xi) @ self.h for xi in xs])
        return float(out[0]) if np.ndim(x) == 0 else out

    def total(self) -> float:
        return float(-self.g @ np.linalg.solve(self.A, self.h) + self.mass0)


def householder_reducer(n: int) -> np.ndarray:
    """Orthogonal symmetric reflector for drift pattern (1, ..., 1, -1).

    With the last row of ``Q`` zero, ``P^T Q R^{-1} P`` is block upper
    triangular with a scalar zero leading block, because ``R^{-1} u`` with
    ``u = (1, ..., 1, -1)`` is the all-ones right null vector of ``Q``.
    """
    if n < 2:
        raise ValueError(f"reflector needs n >= 2, got n = {n}")
    u = np.ones(n)
    u[-1] = -1.0
    u[0] -= math.sqrt(n)
    return np.eye(n) - 2.0 * np.outer(u, u) / (u @ u)


def _qualifies_householder(Q: np.ndarray, R: np.ndarray) -> bool:
    return (
        R.shape[0] >= 2
        and np.all(R[:-1] == 1.0)
        and R[-1] == -1.0
        and not np.any(Q[-1])
    )


def solve(spec: GmfqSpec, method: str = "auto") -> SteadyState:
    """Compute the stationary law of a fluid queue.

    ``method`` is one of ``"auto"`` (Householder fast path when the spec
    qualifies, sorted Schur otherwise), ``"schur"``, or ``"householder"``.
    """
    if method not in ("auto", "schur", "householder"):
        raise ValueError(f"unknown method {method!r}")
    p = POLICY
    n = spec.n
    hard = [v for v in validate_spec(spec) if "off-diagonal" not in v]
    if hard:
        raise StructuralError("; ".join(hard))

    # positive drifts first, preserving relative order
    perm = np.concatenate([np.flatnonzero(spec.R > 0), np.flatnonzero(spec.R < 0)])
    Q = spec.Q[np.ix_(perm, perm)]
    Qt = spec.Qtilde[np.ix_(perm, perm)]
    R = spec.R[perm]
    b, a = spec.b, spec.a

    M = Q / R[None, :]  # Q R^{-1} scales columns
    scale = np.linalg.norm(M)
    eps0 = p.split_rtol * scale

    if method == "householder" and not _qualifies_householder(Q, R):
        raise StructuralError(
            "householder reducer requires drifts (1, ..., 1, -1) and a zero last row of Q"
        )
    use_householder = method == "householder" or (
        method == "auto" and _qualifies_householder(Q, R)
    )

    if use_householder:
        P = householder_reducer(n)
        T = P.T @ M @ P
        lead = np.array([T[0, 0]], dtype=complex)
        if lead.real.min() < -eps0:
            raise ModelInstabilityError(
                f"leading block eigenvalue {T[0, 0]:.3e} is stable; expected the "
                "structural zero (is the last row of Q really zero?)"
            )
        trail = np.linalg.eigvals(T[a:, a:])
        if trail.real.max() > -eps0:
            raise ModelInstabilityError(
                "trailing block is not stable: max eigenvalue real part "
                f"{trail.real.max():.3e} (the model has no stationary law)"
            )
    else:
        try:
            T, P, sdim = scipy.linalg.schur(M, output="real", sort=lambda re, im: re > -eps0)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
            raise NumericalError(f"ordered Schur factorization failed: {exc}") from exc
        if sdim != a:
            raise ModelInstabilityError(
                f"expected {a} eigenvalues with nonnegative real part (one per "
                f"negative-drift state), found {sdim}"
            )
        lead = np.linalg.eigvals(T[:a, :a])
        trail = np.linalg.eigvals(T[a:, a:])

    lower = np.abs(T[a:, :a]).max() if a else 0.0
    if lower > p.block_zero_rtol * scale:
        raise NumericalError(
            f"reduction failed: lower-left block norm {lower:.3e} exceeds "
            f"{p.block_zero_rtol * scale:.3e}"
        )
    orth = np.abs(P.T @ P - np.eye(n)).max()
    A = T[a:, a:].copy()
    H = P[:, a:].T.copy()

    # Flow balance at the boundary: [g d] [[H R, -A^{-1} H 1], [-Qt_low, 1]] = [0, 1]
    C = np.empty((n, n + 1))
    C[:b, :n] = H * R[None, :]
    C[b:, :n] = -Qt[b:, :]
    C[:b, n] = -np.linalg.solve(A, H @ np.ones(n))
    C[b:, n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    x, *_ = np.linalg.lstsq(C.T, rhs, rcond=None)
    residual = float(np.linalg.norm(C.T @ x - rhs))
    if residual > p.boundary_residual_tol:
        raise NumericalError(
            f"boundary system residual {residual:.3e} exceeds "
            f"{p.boundary_residual_tol:.0e}; condition estimate {np.linalg.cond(C.T):.3e}"
        )
    g = x[:b]
    d = x[b:]
    if d.size and d.min() < -p.mass_negativity_tol:
        raise NumericalError(f"negative boundary mass {d.min():.3e} in solution")
    d = np.clip(d, 0.0, None)

    # back to the caller's state order
    c = np.zeros(n)
    c[perm] = np.concatenate([np.zeros(b), d])
    H_out = np.empty_like(H)
    H_out[:, perm] = H

    total = float(-g @ np.linalg.solve(A, H_out.sum(axis=1)) + c.sum())
    if abs(total - 1.0) > 1e-6:
        raise NumericalError(f"solution mass {total!r} is not 1; the solve is unreliable")

    report = SolveReport(
        method="householder" if use_householder else "schur",
        orthogonality_error=float(orth),
        lower_block_norm=float(lower),
        boundary_residual=residual,
        leading_eig_min_real=float(lead.real.min()),
        trailing_eig_max_real=float(trail.real.max()),
        total_probability=total,
    )
    return SteadyState(g=g, A=A, H=H_out, c=c, report=report)


def conditional_entry_density(
    ss: SteadyState, Q: np.ndarray, source_states, target_state: int
) -> MatrixExpForm:
    """Density of the level just before a jump from ``source_states`` into ``target_state``.

    The source states must carry no atom at level zero.  The result is the
    flow-weighted mixture of the source densities, normalized to integrate
    to one.
    """
    Q = np.asarray(Q, dtype=float)
    src = np.asarray(list(source_states), dtype=int)
    j = int(target_state)
    if j in src:
        raise PreconditionError(f"target state {j} must not belong to the source set")
    if np.any(np.abs(ss.c[src]) > POLICY.mass_negativity_tol):
        raise PreconditionError(
            "conditioning on states with a point mass at level zero is not supported"
        )
    rates = Q[src, j]
    if rates.sum() <= 0.0:
        raise DegenerateConditioningError(
            f"total transition rate from the source set into state {j} is not positive"
        )
    eta = np.zeros(ss.n)
    eta[src] = rates
    h = ss.H @ eta
    total = float(-ss.g @ np.linalg.solve(ss.A, h))
    if total <= 0.0:
        raise DegenerateConditioningError(
            f"conditioning event has nonpositive probability flow ({total:.3e})"
        )
    return MatrixExpForm(ss.g / total, ss.A, h, 0.0)


def form_moment(f: MatrixExpForm, i: int) -> float:
    """Raw moment (-1)^{i+1} i! g A^{-(i+1)} h of a normalized form (atom adds zero)."""
    if not isinstance(i, (int, np.integer)) or i < 1:
        raise ValueError(f"moment order must be a positive integer, got {i!r}")
    y = f.h
    for _ in range(i + 1):
        y = np.linalg.solve(f.A, y)
    return float((-1.0) ** (i + 1) * math.factorial(i) * (f.g @ y))

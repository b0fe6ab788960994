"""Reference validation suite: golden values, closed forms, and cross-checks.

Every check compares package output against an independent target: exact
values known for benchmark operating points of these queue families,
closed-form solutions of tiny fluid queues derived by hand, a brute-force
CTMC discretization of the fluid level, and the discrete-event simulator.
The suite backs the ``validate`` CLI command; the pytest acceptance module
drives the same checks.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import mfq
from .models import (
    BufferlessSpec,
    SingleBufferSpec,
    analyze_bufferless,
    analyze_single_buffer,
    build_bufferless,
    build_residual_process,
    build_single_buffer,
    wait_time_distribution,
)
from .phdist import MeDistribution, PhDistribution, fit_mean_scov
from .simulator import SimConfig, simulate

__all__ = ["CheckResult", "run_validate", "CHECK_NAMES", "ctmc_level_cdf", "quantile"]


def _exponential(rate: float) -> PhDistribution:
    return PhDistribution([1.0], [[-rate]])


# Golden operating points: exact E[age] (and E[age^2] where known) for the
# preemptive bufferless queue and the replacement single-buffer queue,
# cross-checked against published closed-form results for these families.
BUFFERLESS_GOLDEN = [
    # (arrival rate, service scov order j, mean, second moment), service E(1, j)
    dict(lam=0.5, j=2, mean=3.1250, m2=14.5312),
    dict(lam=0.5, j=4, mean=3.2036, m2=14.8310),
    dict(lam=1.5, j=2, mean=2.0417, m2=6.0035),
    dict(lam=1.5, j=4, mean=2.3830, m2=7.8910),
]
BUFFERLESS_SWAPPED_GOLDEN = [
    # Erlang E(1, j) interarrivals, exponential service with rate mu
    dict(mu=0.5, j=2, mean=2.7500, m2=12.0000),
    dict(mu=1.5, j=2, mean=1.4167, m2=2.8889),
    dict(mu=0.5, j=4, mean=2.6250, m2=11.1250),
    dict(mu=1.5, j=4, mean=1.2917, m2=2.3472),
]
SINGLE_BUFFER_GOLDEN = [
    dict(lam=0.5, j=2, mean=3.1089),
    dict(lam=0.5, j=4, mean=3.0786),
    dict(lam=1.5, j=2, mean=2.0996),
    dict(lam=1.5, j=4, mean=2.0226),
]

GOLDEN_DIGITS_TOL = 5e-5      # agreement to four fractional digits
GOLDEN_ROW_SECONDS = 1.0
SIM_SUP_TOL = 5e-3            # analytic vs empirical cdf, 50-point grid
SIM_SCENARIO_SECONDS = 60.0
CTMC_SUP_TOL = 5e-3
CTMC_STEP = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    runtime: float
    lines: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "runtime_seconds": self.runtime,
            "lines": self.lines,
        }


class _Recorder:
    """Collects labeled comparisons; the injected offset exists for self-tests."""

    def __init__(self, perturb: float = 0.0):
        self.lines: list[str] = []
        self.passed = True
        self.perturb = perturb

    def close(self, label: str, actual: float, expected: float, tol: float):
        actual = actual + self.perturb
        ok = abs(actual - expected) <= tol
        self._note(label, f"got {actual:.10g}, want {expected:.10g} (tol {tol:.1e})", ok)

    def below(self, label: str, value: float, bound: float):
        value = value + self.perturb
        ok = value <= bound
        self._note(label, f"value {value:.6g} <= bound {bound:.6g}", ok)

    def holds(self, label: str, condition: bool, detail: str = ""):
        self._note(label, detail, bool(condition))

    def _note(self, label: str, detail: str, ok: bool):
        status = "ok" if ok else "FAIL"
        self.lines.append(f"[{status:4s}] {label}: {detail}" if detail else f"[{status:4s}] {label}")
        self.passed = self.passed and ok


def quantile(d: MeDistribution, q: float) -> float:
    """Invert the cdf by bracketing and bisection."""
    hi = 10.0 * max(d.moment(1), 1e-12)
    while d.cdf(hi) < q:
        hi *= 2.0
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if d.cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    return hi


def ctmc_level_cdf(spec: mfq.GmfqSpec, xmax: float, xs: np.ndarray,
                   step: float = CTMC_STEP) -> np.ndarray:
    """Brute-force oracle: discretize the fluid level into a fine-grid CTMC.

    The level becomes a birth-death coordinate moved at rate ``|R_i| / step``;
    phase transitions follow ``Q`` off the boundary and ``Qtilde`` in the
    bottom cell of the sticky (negative-drift) states.  Returns the per-state
    cumulative mass below each entry of ``xs``.  Only meaningful for specs
    whose generators are honest CTMC generators.
    """
    n, R = spec.n, spec.R
    nb = int(np.ceil(xmax / step)) + 1
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(np.asarray(r, dtype=np.int64).ravel())
        cols.append(np.asarray(c, dtype=np.int64).ravel())
        vals.append(np.broadcast_to(v, rows[-1].shape).astype(float).ravel())

    off = ~np.eye(n, dtype=bool)
    ii, jj = np.nonzero(off & (spec.Q != 0.0))
    if ii.size:
        bins = np.arange(1, nb)[:, None]
        put(bins * n + ii, bins * n + jj, np.tile(spec.Q[ii, jj], nb - 1))
    # bottom cell: boundary generator for sticky states, bulk generator otherwise
    for i in range(n):
        src = spec.Qtilde if R[i] < 0 else spec.Q
        for j in range(n):
            if j != i and src[i, j] != 0.0:
                put([i], [j], [src[i, j]])
    pos = np.flatnonzero(R > 0)
    neg = np.flatnonzero(R < 0)
    if pos.size:
        bins = np.arange(0, nb - 1)[:, None]
        put(bins * n + pos, (bins + 1) * n + pos, np.tile(R[pos] / step, nb - 1))
    if neg.size:
        bins = np.arange(1, nb)[:, None]
        put(bins * n + neg, (bins - 1) * n + neg, np.tile(-R[neg] / step, nb - 1))

    N = nb * n
    G = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    ).tocsr()
    G = G - scipy.sparse.diags(np.asarray(G.sum(axis=1)).ravel())

    # stationary law: fix the last state's weight at 1, solve the rest, renormalize
    A = G.T.tocsr()
    lhs = A[: N - 1, : N - 1].tocsc()
    rhs = -A[: N - 1, N - 1].toarray().ravel()
    pi = np.empty(N)
    pi[: N - 1] = scipy.sparse.linalg.spsolve(lhs, rhs, permc_spec="NATURAL")
    pi[N - 1] = 1.0
    pi /= pi.sum()
    mass = pi.reshape(nb, n)
    cum = np.cumsum(mass, axis=0)
    idx = np.minimum((np.asarray(xs) / step).astype(int), nb - 1)
    return cum[idx, :]


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------

def _check_golden_table(rec: _Recorder, cycles: int):
    for row in BUFFERLESS_GOLDEN:
        t0 = time.perf_counter()
        res = analyze_bufferless(BufferlessSpec(
            arrival=_exponential(row["lam"]), service=fit_mean_scov(1.0, 1.0 / row["j"]), p=1.0))
        dt = time.perf_counter() - t0
        tag = f"preemptive lam={row['lam']} E(1,{row['j']})"
        rec.close(f"{tag} mean age", res.mean_aoi, row["mean"], GOLDEN_DIGITS_TOL)
        rec.close(f"{tag} second moment", res.m2_aoi, row["m2"], GOLDEN_DIGITS_TOL)
        rec.below(f"{tag} runtime [s]", dt, GOLDEN_ROW_SECONDS)
    for row in BUFFERLESS_SWAPPED_GOLDEN:
        t0 = time.perf_counter()
        res = analyze_bufferless(BufferlessSpec(
            arrival=fit_mean_scov(1.0, 1.0 / row["j"]), service=_exponential(row["mu"]), p=1.0))
        dt = time.perf_counter() - t0
        tag = f"preemptive mu={row['mu']} arrivals E(1,{row['j']})"
        rec.close(f"{tag} mean age", res.mean_aoi, row["mean"], GOLDEN_DIGITS_TOL)
        rec.close(f"{tag} second moment", res.m2_aoi, row["m2"], GOLDEN_DIGITS_TOL)
        rec.below(f"{tag} runtime [s]", dt, GOLDEN_ROW_SECONDS)
    for row in SINGLE_BUFFER_GOLDEN:
        t0 = time.perf_counter()
        res = analyze_single_buffer(SingleBufferSpec(
            lam=row["lam"], service=fit_mean_scov(1.0, 1.0 / row["j"]), r=1.0))
        dt = time.perf_counter() - t0
        tag = f"replacement lam={row['lam']} E(1,{row['j']})"
        rec.close(f"{tag} mean age", res.mean_aoi, row["mean"], GOLDEN_DIGITS_TOL)
        rec.below(f"{tag} runtime [s]", dt, GOLDEN_ROW_SECONDS)


def _check_insensitivity(rec: _Recorder, cycles: int):
    # Without preemption and with unit-rate Poisson arrivals, the mean peak
    # age is 1/lam + 2/mu whatever the service shape.
    for scov in (0.25, 0.5, 1.0, 2.0, 4.0):
        res = analyze_bufferless(BufferlessSpec(
            arrival=_exponential(1.0), service=fit_mean_scov(1.0, scov), p=0.0))
        rec.close(f"mean peak age at service scov {scov}", res.mean_paoi, 3.0, 1e-8)


def _interior_minimum(scov: float) -> tuple[bool, str]:
    service = fit_mean_scov(2.0, scov)           # load 2 at unit arrival rate
    ps = np.round(np.arange(0.0, 1.0001, 0.05), 10)
    means = [analyze_bufferless(BufferlessSpec(_exponential(1.0), service, p)).mean_aoi
             for p in ps]
    interior = min(means[1:-1])
    ok = interior < means[0] and interior < means[-1]
    return ok, f"min interior {interior:.6g} vs endpoints {means[0]:.6g}, {means[-1]:.6g}"


def _check_optimum(rec: _Recorder, cycles: int):
    # Note: at load 2 and service scov 0.25 the sweep is in fact monotone in p
    # (confirmed by simulation), so the first assertion fails; the companion
    # line shows the interior optimum that does exist at service scov 0.5.
    ok, detail = _interior_minimum(0.25)
    rec.holds("interior preemption optimum at service scov 0.25", ok, detail)
    ok, detail = _interior_minimum(0.5)
    rec.holds("interior preemption optimum at service scov 0.5", ok, detail)
    rs = np.round(np.arange(0.0, 1.0001, 0.1), 10)
    service = fit_mean_scov(2.0, 0.25)
    rmeans = [analyze_single_buffer(SingleBufferSpec(1.0, service, r)).mean_aoi for r in rs]
    rec.holds(
        "full replacement minimizes mean age",
        rmeans[-1] == min(rmeans),
        f"mean age at r=1 is {rmeans[-1]:.6g}, sweep minimum {min(rmeans):.6g}",
    )


def _check_structural(rec: _Recorder, cycles: int):
    spec = BufferlessSpec(_exponential(0.5), fit_mean_scov(1.0, 0.5), p=1.0)
    gspec, _ = build_bufferless(spec)
    hh = mfq.solve(gspec, method="householder")
    sch = mfq.solve(gspec, method="schur")
    rec.below("householder orthogonality error", hh.report.orthogonality_error, 1e-12)
    rec.below("schur orthogonality error", sch.report.orthogonality_error, 1e-12)
    scale = np.linalg.norm(gspec.Q / gspec.R[None, :])
    rec.below("householder lower-left block (relative)",
              hh.report.lower_block_norm / scale, 1e-10)
    rec.below("schur lower-left block (relative)",
              sch.report.lower_block_norm / scale, 1e-10)
    xs = np.linspace(0.01, 25.0, 60)
    dens = max(float(np.abs(hh.density(x) - sch.density(x)).max()) for x in xs)
    rec.below("reducer agreement on densities", dens, 1e-9)
    rec.below("reducer agreement on boundary masses", float(np.abs(hh.c - sch.c).max()), 1e-9)

    worst = 0.0
    for row in BUFFERLESS_GOLDEN:
        g, _ = build_bufferless(
            BufferlessSpec(_exponential(row["lam"]), fit_mean_scov(1.0, 1.0 / row["j"]), 1.0))
        worst = max(worst, abs(mfq.solve(g).report.total_probability - 1.0))
    for row in SINGLE_BUFFER_GOLDEN:
        sb = SingleBufferSpec(row["lam"], fit_mean_scov(1.0, 1.0 / row["j"]), 1.0)
        g, _ = build_residual_process(sb.lam, sb.service)
        worst = max(worst, abs(mfq.solve(g).report.total_probability - 1.0))
        wait = wait_time_distribution(sb.lam, sb.service, sb.r)
        g, _ = build_single_buffer(sb, wait)
        worst = max(worst, abs(mfq.solve(g).report.total_probability - 1.0))
    rec.below("total probability drift across solves", worst, 1e-9)


def _check_closed_forms(rec: _Recorder, cycles: int):
    # two-state on-off fluid queue, boundary generator equal to the bulk one
    a, b = 2.0, 1.0
    Q = np.array([[-a, a], [b, -b]])
    ss = mfq.solve(mfq.GmfqSpec(Q, Q, [1.0, -1.0]))
    c2 = (a - b) / (a + b)
    err = abs(ss.c[1] - c2) + abs(ss.c[0])
    for x in (0.0, 0.2, 1.0, 3.0):
        want = b * c2 * np.exp(-(a - b) * x)
        err = max(err, float(np.abs(ss.density(x) - want).max()))
    rec.below("on-off fluid queue vs hand solution", err, 1e-8)

    # residual-service process with exponential service: explicit solution
    lam, mu = 0.75, 1.25
    gspec, part = build_residual_process(lam, _exponential(mu))
    ss = mfq.solve(gspec)
    K = 1.0 / (2.0 / mu + (mu + lam**2) / (lam * (lam + mu)))
    c0_want = mu * K / (lam * (lam + mu))
    c1_want = lam * K / (lam + mu)
    err = max(abs(ss.c[1] - c0_want), abs(ss.c[2] - c1_want), abs(ss.c[0]))
    for x in (0.0, 0.4, 2.0):
        want = K * np.exp(-mu * x) * np.array([1.0, mu / (lam + mu), lam / (lam + mu)])
        err = max(err, float(np.abs(ss.density(x) - want).max()))
    rec.below("residual process vs hand solution", err, 1e-8)

    # censored on queue states, the occupancy must match the three-state
    # birth-death law of the finite queue
    rho = lam / mu
    pi = np.array([1.0, rho, rho**2])
    pi /= pi.sum()
    p_idle = ss.c[1]
    p_serving = -ss.g @ np.linalg.solve(ss.A, ss.H[:, 1])
    p_full = -ss.g @ np.linalg.solve(ss.A, ss.H[:, 2])
    total = p_idle + p_serving + p_full
    got = np.array([p_idle, p_serving, p_full]) / total
    rec.below("censored occupancy vs birth-death law", float(np.abs(got - pi).max()), 1e-8)


def _check_grid_oracle(rec: _Recorder, cycles: int):
    a, b = 2.0, 1.0
    Q = np.array([[-a, a], [b, -b]])
    spec = mfq.GmfqSpec(Q, Q, [1.0, -1.0])
    ss = mfq.solve(spec)
    _compare_with_ctmc(rec, "on-off fluid queue", spec, ss)

    gspec, _ = build_residual_process(0.75, _exponential(1.25))
    _compare_with_ctmc(rec, "residual process", gspec, mfq.solve(gspec))

    bspec, _ = build_bufferless(BufferlessSpec(_exponential(0.5), fit_mean_scov(1.0, 0.5), 1.0))
    _compare_with_ctmc(rec, "bufferless cycle process (n=6)", bspec, mfq.solve(bspec))


def _compare_with_ctmc(rec: _Recorder, label: str, spec, ss):
    mean_level = float(ss.g @ np.linalg.solve(ss.A, np.linalg.solve(ss.A, ss.H.sum(axis=1))))
    xmax = 40.0 * max(mean_level, 0.1)
    xs = np.linspace(0.0, xmax * 0.6, 120)
    oracle = ctmc_level_cdf(spec, xmax, xs)
    analytic = np.vstack([ss.level_cdf(x) for x in xs])
    rec.below(f"{label}: sup distance to CTMC oracle",
              float(np.abs(oracle - analytic).max()), CTMC_SUP_TOL)


def _sim_scenarios_poisson():
    for model in ("bufferless", "single_buffer"):
        for policy in (0.0, 1.0):
            for rho in (0.75, 1.25):
                for scov in (0.25, 4.0):
                    yield model, policy, rho, scov


def _check_simulation(rec: _Recorder, cycles: int):
    seed = 20240
    for model, policy, rho, scov in _sim_scenarios_poisson():
        seed += 1
        service = fit_mean_scov(rho, scov)     # unit arrival rate
        if model == "bufferless":
            res = analyze_bufferless(BufferlessSpec(_exponential(1.0), service, policy))
        else:
            res = analyze_single_buffer(SingleBufferSpec(1.0, service, policy))
        t0 = time.perf_counter()
        sim = simulate(SimConfig(model=model, arrival=_exponential(1.0), service=service,
                                 p=policy, r=policy, cycles=cycles, seed=seed))
        dt = time.perf_counter() - t0
        label = f"{model} policy={policy} rho={rho} scov={scov}"
        grid = np.linspace(0.0, quantile(res.paoi, 0.999), 50)
        sup_aoi = float(np.abs(res.aoi.cdf(grid) - sim.aoi_cdf(grid)).max())
        sup_paoi = float(np.abs(res.paoi.cdf(grid) - sim.paoi_cdf(grid)).max())
        rec.below(f"{label}: age cdf sup distance", sup_aoi, SIM_SUP_TOL)
        rec.below(f"{label}: peak-age cdf sup distance", sup_paoi, SIM_SUP_TOL)
        rec.below(f"{label}: runtime [s]", dt, SIM_SCENARIO_SECONDS)


def _check_ph_arrivals(rec: _Recorder, cycles: int):
    seed = 31337
    for policy in (0.0, 1.0):
        for rho in (0.75, 1.25):
            for scov_arr in (0.25, 4.0):
                seed += 1
                arrival = fit_mean_scov(1.0, scov_arr)
                service = fit_mean_scov(rho, 0.2)
                res = analyze_bufferless(BufferlessSpec(arrival, service, policy))
                t0 = time.perf_counter()
                sim = simulate(SimConfig(model="bufferless", arrival=arrival,
                                         service=service, p=policy, cycles=cycles, seed=seed))
                dt = time.perf_counter() - t0
                label = f"renewal arrivals p={policy} rho={rho} scov_arr={scov_arr}"
                grid = np.linspace(0.0, quantile(res.paoi, 0.999), 50)
                sup_aoi = float(np.abs(res.aoi.cdf(grid) - sim.aoi_cdf(grid)).max())
                sup_paoi = float(np.abs(res.paoi.cdf(grid) - sim.paoi_cdf(grid)).max())
                rec.below(f"{label}: age cdf sup distance", sup_aoi, SIM_SUP_TOL)
                rec.below(f"{label}: peak-age cdf sup distance", sup_paoi, SIM_SUP_TOL)
                rec.below(f"{label}: runtime [s]", dt, SIM_SCENARIO_SECONDS)


def _check_age_violation(rec: _Recorder, cycles: int):
    # Erlang arrivals, near-deterministic service modeled by a high-order Erlang
    lam, order = 0.45, 100
    arrival = fit_mean_scov(1.0 / lam, 0.5)
    service = fit_mean_scov(1.0, 1.0 / order)
    res = analyze_bufferless(BufferlessSpec(arrival, service, p=0.0))
    sim = simulate(SimConfig(model="bufferless", arrival=arrival, service=service,
                             p=0.0, cycles=cycles, seed=4242))
    for x in (2.0, 4.0, 6.0, 8.0, 10.0):
        analytic = res.aoi_violation(x)
        empirical = 1.0 - sim.aoi_cdf(x)
        rec.close(f"tail probability at x={x}", analytic, empirical, 1e-2)


def _check_policy_trends(rec: _Recorder, cycles: int):
    # full replacement dominates plain FCFS dropping at sampled points
    for rho in (0.5, 1.0, 1.5):
        for scov in (0.25, 1.0, 4.0):
            service = fit_mean_scov(rho, scov)
            m0 = analyze_single_buffer(SingleBufferSpec(1.0, service, 0.0)).mean_aoi
            m1 = analyze_single_buffer(SingleBufferSpec(1.0, service, 1.0)).mean_aoi
            rec.holds(f"replacement dominance rho={rho} scov={scov}", m1 <= m0 + 1e-12,
                      f"r=1 gives {m1:.6g}, r=0 gives {m0:.6g}")
    # mean age degrades monotonically in arrival-time variability at unit load
    service = fit_mean_scov(1.0, 1.0)
    means = [analyze_bufferless(BufferlessSpec(fit_mean_scov(1.0, s), service, 0.0)).mean_aoi
             for s in (0.25, 1.0, 4.0)]
    rec.holds("arrival variability degrades mean age",
              means[0] < means[1] < means[2],
              f"means {means[0]:.6g} < {means[1]:.6g} < {means[2]:.6g}")


CHECKS = {
    "golden-table": _check_golden_table,
    "insensitivity": _check_insensitivity,
    "optimum": _check_optimum,
    "structural": _check_structural,
    "closed-forms": _check_closed_forms,
    "grid-oracle": _check_grid_oracle,
    "simulation": _check_simulation,
    "renewal-arrivals": _check_ph_arrivals,
    "age-violation": _check_age_violation,
    "policy-trends": _check_policy_trends,
}
CHECK_NAMES = tuple(CHECKS)


def run_validate(checks: list[str] | None = None, cycles: int = 10**6,
                 perturb: float = 0.0) -> list[CheckResult]:
    """Run the validation suite and return one result per check.

    ``checks`` selects a subset by name (all by default); ``cycles`` sizes the
    simulation-based checks; ``perturb`` offsets every computed value before
    comparison and exists so harness failures are detectable in tests.
    """
    names = list(CHECK_NAMES) if checks is None else list(checks)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)} (known: {', '.join(CHECK_NAMES)})")
    out = []
    for name in names:
        rec = _Recorder(perturb)
        t0 = time.perf_counter()
        CHECKS[name](rec, cycles)
        out.append(CheckResult(name=name, passed=rec.passed,
                               runtime=time.perf_counter() - t0, lines=rec.lines))
    return out

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from aoifluid import (
    BufferlessSpec,
    PhDistribution,
    SimConfig,
    SingleBufferSpec,
    StructuralError,
    age_violation,
    analyze_bufferless,
    analyze_single_buffer,
    build_bufferless,
    build_residual_process,
    build_single_buffer,
    fit_mean_scov,
    simulate,
    solve,
    wait_time_distribution,
)


def exponential(rate):
    return PhDistribution([1.0], [[-rate]])


# ---------------------------------------------------------------------------
# bufferless construction
# ---------------------------------------------------------------------------

def test_bufferless_structure_k1_l2():
    spec = BufferlessSpec(exponential(0.5), fit_mean_scov(1.0, 0.5), p=1.0)
    gspec, part = build_bufferless(spec)
    assert gspec.n == 6
    assert np.abs(gspec.Q.sum(axis=1)).max() <= 1e-12
    assert not np.any(gspec.Q[-1])
    assert np.abs(gspec.Qtilde.sum(axis=1)).max() <= 1e-12
    assert_allclose(gspec.R, [1, 1, 1, 1, 1, -1])
    assert part.ranges["first_service"] == range(0, 2)
    assert part.ranges["idle"] == range(2, 3)
    assert part.ranges["next_service"] == range(3, 5)
    assert part.ranges["reset"] == range(5, 6)


def test_bufferless_structure_k2_l2():
    spec = BufferlessSpec(fit_mean_scov(1.0, 0.5), fit_mean_scov(1.0, 0.5), p=1.0)
    gspec, part = build_bufferless(spec)
    assert gspec.n == 11
    assert np.abs(gspec.Q.sum(axis=1)).max() <= 1e-12
    assert not np.any(gspec.Q[-1])
    assert part.index("first_service", 1, 1) == 3  # lexicographic product layout


def test_no_preemption_degenerates_cleanly():
    arrival, service = fit_mean_scov(1.0, 0.5), fit_mean_scov(1.0, 0.25)
    g0, part = build_bufferless(BufferlessSpec(arrival, service, p=0.0))
    k, ell = arrival.order, service.order
    s1 = part.ranges["first_service"]
    s3 = part.ranges["next_service"]
    # no direct route to the reset state, and both service blocks coincide
    assert not np.any(g0.Q[s1, g0.n - 1])
    assert_allclose(g0.Q[np.ix_(s1, s1)], g0.Q[np.ix_(s3, s3)], atol=1e-14)


def test_bufferless_rejects_atoms_and_bad_p():
    withatom = PhDistribution([0.9], [[-1.0]], mass0=0.1)
    with pytest.raises(StructuralError):
        BufferlessSpec(withatom, exponential(1.0), p=0.5)
    with pytest.raises(StructuralError):
        BufferlessSpec(exponential(1.0), exponential(1.0), p=1.5)


# ---------------------------------------------------------------------------
# bufferless analysis
# ---------------------------------------------------------------------------

def test_preemptive_reference_values():
    res = analyze_bufferless(BufferlessSpec(exponential(0.5), fit_mean_scov(1.0, 0.5), p=1.0))
    assert res.mean_aoi == pytest.approx(3.1250, abs=5e-5)
    assert res.m2_aoi == pytest.approx(14.5312, abs=5e-5)
    assert res.load == pytest.approx(0.5)


def test_preemptive_reference_values_erlang_arrivals():
    res = analyze_bufferless(BufferlessSpec(fit_mean_scov(1.0, 0.5), exponential(0.5), p=1.0))
    assert res.mean_aoi == pytest.approx(2.7500, abs=5e-5)
    assert res.m2_aoi == pytest.approx(12.0000, abs=5e-5)


def test_preemptive_exponential_closed_form():
    # fully preemptive memoryless system: mean age is 1/lam + 1/mu
    res = analyze_bufferless(BufferlessSpec(exponential(1.0), exponential(1.0), p=1.0))
    assert res.mean_aoi == pytest.approx(2.0, abs=1e-10)


@pytest.mark.parametrize("scov", [0.25, 1.0, 4.0])
def test_peak_age_insensitivity_without_preemption(scov):
    # renewal-cycle argument: a successful packet meets an idle server, so
    # E[peak] = E[service] + E[idle] + E[service] = 1/lam + 2/mu
    lam, mu = 0.8, 1.25
    res = analyze_bufferless(BufferlessSpec(exponential(lam), fit_mean_scov(1.0 / mu, scov), p=0.0))
    assert res.mean_paoi == pytest.approx(1.0 / lam + 2.0 / mu, abs=1e-8)


def test_age_distributions_are_proper():
    res = analyze_bufferless(BufferlessSpec(exponential(1.0), fit_mean_scov(1.0, 4.0), p=0.3))
    for d in (res.aoi, res.paoi):
        assert d.mass0 == 0.0
        assert d.cdf(0.0) == pytest.approx(0.0, abs=1e-12)
        xs = np.linspace(0.0, 30.0, 80)
        vals = d.cdf(xs)
        assert np.all(np.diff(vals) >= -1e-10)
        assert d.cdf(200.0) == pytest.approx(1.0, abs=1e-9)
    assert res.mean_aoi > 0 and res.mean_paoi > 0
    assert math.isfinite(res.m2_aoi) and math.isfinite(res.m2_paoi)


def test_reset_dwell_rate_invariance():
    spec = BufferlessSpec(exponential(0.5), fit_mean_scov(1.0, 0.5), p=1.0)
    res1 = analyze_bufferless(spec, reset_rate=1.0)
    res10 = analyze_bufferless(spec, reset_rate=10.0)
    xs = np.linspace(0.0, 25.0, 60)
    assert np.abs(res1.aoi.pdf(xs) - res10.aoi.pdf(xs)).max() <= 1e-9
    assert np.abs(res1.paoi.pdf(xs) - res10.paoi.pdf(xs)).max() <= 1e-9
    assert res1.mean_aoi == pytest.approx(res10.mean_aoi, abs=1e-9)
    assert res1.mean_paoi == pytest.approx(res10.mean_paoi, abs=1e-9)


def test_preemption_probability_continuity():
    arrival, service = exponential(1.0), fit_mean_scov(1.0, 0.5)
    at0 = analyze_bufferless(BufferlessSpec(arrival, service, p=0.0)).mean_aoi
    near0 = analyze_bufferless(BufferlessSpec(arrival, service, p=1e-9)).mean_aoi
    assert near0 == pytest.approx(at0, abs=1e-6)


# ---------------------------------------------------------------------------
# residual-service process and wait times
# ---------------------------------------------------------------------------

def test_residual_structure():
    gspec, part = build_residual_process(0.5, fit_mean_scov(1.0, 0.5))
    assert gspec.n == 4
    assert gspec.a == 2 and gspec.b == 2
    assert np.abs(gspec.Q.sum(axis=1)).max() <= 1e-12
    assert np.abs(gspec.Qtilde.sum(axis=1)).max() <= 1e-12
    assert solve(gspec).report.method == "schur"


def test_residual_exponential_closed_form():
    lam, mu = 0.75, 1.25
    gspec, _ = build_residual_process(lam, exponential(mu))
    ss = solve(gspec)
    K = 1.0 / (2.0 / mu + (mu + lam**2) / (lam * (lam + mu)))
    assert ss.c[1] == pytest.approx(mu * K / (lam * (lam + mu)), abs=1e-10)
    assert ss.c[2] == pytest.approx(lam * K / (lam + mu), abs=1e-10)
    for x in (0.0, 0.5, 2.0):
        want = K * math.exp(-mu * x) * np.array([1.0, mu / (lam + mu), lam / (lam + mu)])
        assert_allclose(ss.density(x), want, atol=1e-10)
    assert ss.total_probability() == pytest.approx(1.0, abs=1e-9)


def test_residual_occupancy_matches_birth_death():
    # censored on the serving/idle states, occupancy is the three-state
    # birth-death law of the finite queue
    lam, mu = 0.75, 1.25
    gspec, _ = build_residual_process(lam, exponential(mu))
    ss = solve(gspec)
    rho = lam / mu
    pi = np.array([1.0, rho, rho**2])
    pi /= pi.sum()
    p_idle = ss.c[1]
    p_serve = -ss.g @ np.linalg.solve(ss.A, ss.H[:, 1])
    p_full = -ss.g @ np.linalg.solve(ss.A, ss.H[:, 2])
    got = np.array([p_idle, p_serve, p_full])
    got /= got.sum()
    assert_allclose(got, pi, atol=1e-10)


def test_wait_no_replacement_reduction():
    # with r = 0 the wait is the empty-queue boundary density plus the idle atom
    lam, service = 0.5, fit_mean_scov(1.0, 0.5)
    gspec, part = build_residual_process(lam, service)
    ss = solve(gspec)
    i0 = part.ranges["queue0"].start
    h0, c0 = ss.H[:, i0], ss.c[i0]
    eta = 1.0 / (-ss.g @ np.linalg.solve(ss.A, h0) + c0)
    wait = wait_time_distribution(lam, service, 0.0)
    assert wait.mass0 == pytest.approx(eta * c0, rel=1e-10)
    from scipy.linalg import expm
    for x in (0.0, 0.4, 2.0):
        want = eta * (ss.g @ expm(ss.A * x) @ h0)
        assert wait.pdf(x) == pytest.approx(want, rel=1e-9)


@pytest.mark.parametrize("r", [0.0, 0.5, 1.0])
def test_wait_normalization(r):
    wait = wait_time_distribution(1.5, fit_mean_scov(1.0, 0.25), r)
    assert -wait.alpha @ np.linalg.solve(wait.S, wait.exit_rates) + wait.mass0 == \
        pytest.approx(1.0, abs=1e-9)
    assert wait.cdf(0.0) == pytest.approx(wait.mass0, abs=1e-10)


def test_wait_mean_matches_simulation():
    lam, service = 0.5, fit_mean_scov(1.0, 0.5)
    wait = wait_time_distribution(lam, service, 1.0)
    sim = simulate(SimConfig(model="single_buffer", arrival=exponential(lam),
                             service=service, r=1.0, cycles=2 * 10**5, seed=31))
    assert abs(wait.moment(1) - sim.mean_wait) <= 3.0 * sim.se_mean_wait


def test_wait_rejects_bad_r():
    with pytest.raises(ValueError):
        wait_time_distribution(1.0, fit_mean_scov(1.0, 0.5), 1.2)


# ---------------------------------------------------------------------------
# single-buffer construction and analysis
# ---------------------------------------------------------------------------

def test_single_buffer_structure():
    spec = SingleBufferSpec(0.5, fit_mean_scov(1.0, 0.5), r=1.0)
    wait = wait_time_distribution(spec.lam, spec.service, spec.r)
    gspec, part = build_single_buffer(spec, wait)
    assert gspec.n == 10
    assert np.abs(gspec.Q.sum(axis=1)).max() <= 1e-10
    assert np.abs(gspec.Qtilde.sum(axis=1)).max() <= 1e-10
    assert not np.any(gspec.Q[-1])
    assert solve(gspec).report.method == "householder"


def test_single_buffer_topology_independent_of_r():
    spec0 = SingleBufferSpec(0.5, fit_mean_scov(1.0, 0.5), r=0.0)
    spec1 = SingleBufferSpec(0.5, fit_mean_scov(1.0, 0.5), r=1.0)
    g0, _ = build_single_buffer(spec0, wait_time_distribution(0.5, spec0.service, 0.0))
    g1, _ = build_single_buffer(spec1, wait_time_distribution(0.5, spec1.service, 1.0))
    # same sparsity pattern away from the wait-law blocks
    assert np.array_equal(g0.Q[2:, :] != 0.0, g1.Q[2:, :] != 0.0)
    assert g0.n == g1.n


def test_single_buffer_order_mismatch_rejected():
    spec = SingleBufferSpec(0.5, fit_mean_scov(1.0, 0.5), r=0.0)
    with pytest.raises(StructuralError):
        build_single_buffer(spec, wait_time_distribution(0.5, fit_mean_scov(1.0, 0.25), 0.0))


def test_replacement_reference_values():
    res = analyze_single_buffer(SingleBufferSpec(0.5, fit_mean_scov(1.0, 0.5), r=1.0))
    assert res.mean_aoi == pytest.approx(3.1089, abs=5e-5)
    assert res.wait is not None
    res = analyze_single_buffer(SingleBufferSpec(1.5, fit_mean_scov(1.0, 0.25), r=1.0))
    assert res.mean_aoi == pytest.approx(2.0226, abs=5e-5)


@pytest.mark.parametrize("scov", [0.25, 1.0, 4.0])
def test_full_replacement_dominates(scov):
    service = fit_mean_scov(1.0, scov)
    m0 = analyze_single_buffer(SingleBufferSpec(0.5, service, r=0.0)).mean_aoi
    m1 = analyze_single_buffer(SingleBufferSpec(0.5, service, r=1.0)).mean_aoi
    assert m1 <= m0 + 1e-12


def test_replacement_probability_continuity():
    service = fit_mean_scov(1.0, 0.5)
    at0 = analyze_single_buffer(SingleBufferSpec(0.5, service, r=0.0)).mean_aoi
    near0 = analyze_single_buffer(SingleBufferSpec(0.5, service, r=1e-9)).mean_aoi
    assert near0 == pytest.approx(at0, abs=1e-6)


def test_single_buffer_rejects_bad_parameters():
    with pytest.raises(StructuralError):
        SingleBufferSpec(0.0, fit_mean_scov(1.0, 0.5), r=0.5)
    with pytest.raises(StructuralError):
        SingleBufferSpec(1.0, fit_mean_scov(1.0, 0.5), r=-0.1)


def test_single_buffer_result_is_proper():
    res = analyze_single_buffer(SingleBufferSpec(1.5, fit_mean_scov(1.0, 4.0), r=0.5))
    assert res.aoi.mass0 == 0.0 and res.paoi.mass0 == 0.0
    assert res.aoi.cdf(0.0) == pytest.approx(0.0, abs=1e-12)
    assert res.aoi.cdf(300.0) == pytest.approx(1.0, abs=1e-9)
    assert res.paoi.cdf(300.0) == pytest.approx(1.0, abs=1e-9)
    assert res.load == pytest.approx(1.5)


# ---------------------------------------------------------------------------
# tail probabilities
# ---------------------------------------------------------------------------

def test_age_violation_basics():
    res = analyze_bufferless(BufferlessSpec(exponential(1.0), exponential(1.0), p=1.0))
    assert age_violation(res.aoi, 0.0) == pytest.approx(1.0, abs=1e-12)
    xs = np.linspace(0.0, 15.0, 40)
    tail = age_violation(res.aoi, xs)
    assert np.all(np.diff(tail) <= 1e-10)
    with pytest.raises(ValueError):
        age_violation(res.aoi, -1.0)


def test_result_violation_helpers():
    res = analyze_bufferless(BufferlessSpec(exponential(1.0), exponential(1.0), p=1.0))
    assert res.aoi_violation(2.0) == pytest.approx(1.0 - res.aoi.cdf(2.0), abs=1e-12)
    assert res.paoi_violation(2.0) == pytest.approx(1.0 - res.paoi.cdf(2.0), abs=1e-12)

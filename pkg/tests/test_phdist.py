import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.stats import expon, gamma

from aoifluid import (
    ContractError,
    MeDistribution,
    PhDistribution,
    fit_mean_scov,
    me_from_form,
)
from aoifluid.phdist import cdf, moment, pdf, sample, validate


def exponential(rate):
    return PhDistribution([1.0], [[-rate]])


ERLANG12 = PhDistribution([1.0, 0.0], [[-2.0, 2.0], [0.0, -2.0]])

FIT_GRID = [(m, c) for m in (0.1, 1.0, 10.0) for c in (0.1, 0.25, 0.4, 1.0, 2.0, 4.0, 16.0)]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def test_validate_accepts_exponential():
    assert validate(exponential(1.0)) == []


def test_validate_accepts_erlang():
    assert validate(ERLANG12) == []


def test_validate_flags_bad_probability_sum():
    d = PhDistribution([0.5, 0.6], [[-1.0, 0.0], [0.0, -1.0]])
    violations = validate(d)
    assert any("alpha·1+mass0" in v for v in violations)


def test_validate_flags_unstable_matrix():
    d = MeDistribution([1.0], [[0.5]])
    assert any("not stable" in v for v in validate(d))


def test_validate_flags_negative_pdf_me():
    # e^{-x} (1 + 1.5 sin 5x), normalized: a legitimate ME form whose density
    # dips below zero around sin(5x) = -1
    A = np.array([[-1.0, 5.0, 0.0], [-5.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    g = np.array([1.0, 0.0, 1.0])
    h = np.array([0.0, 1.5, 1.0])
    total = -g @ np.linalg.solve(A, h)
    d = me_from_form(g / total, A, h)
    assert any("below zero" in v for v in validate(d))


def test_validate_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        PhDistribution([1.0, 0.0], [[-1.0]])


# ---------------------------------------------------------------------------
# pdf / cdf / moments
# ---------------------------------------------------------------------------

def test_exponential_pdf_cdf():
    d = exponential(2.0)
    assert pdf(d, 0.0) == pytest.approx(2.0, abs=1e-12)
    assert cdf(d, math.log(2.0) / 2.0) == pytest.approx(0.5, abs=1e-12)


def test_erlang_cdf_closed_form():
    # order 2, rate 2: F(x) = 1 - e^{-2x}(1 + 2x)
    for x in (0.25, 1.0, 3.0):
        want = 1.0 - math.exp(-2.0 * x) * (1.0 + 2.0 * x)
        assert cdf(ERLANG12, x) == pytest.approx(want, abs=1e-12)
    assert cdf(ERLANG12, 1.0) == pytest.approx(1.0 - 3.0 * math.exp(-2.0), abs=1e-12)


def test_negative_x_rejected():
    with pytest.raises(ValueError):
        pdf(ERLANG12, -0.1)
    with pytest.raises(ValueError):
        cdf(ERLANG12, -1e-9)


def test_hyperexponential_cdf_matches_quadrature():
    d = fit_mean_scov(1.0, 4.0)
    for x in (0.5, 1.0, 5.0):
        integral, err = quad(lambda t: d.pdf(t), 0.0, x, limit=200)
        assert cdf(d, x) == pytest.approx(integral + d.mass0, abs=1e-8)


def test_moments_exponential():
    d = exponential(2.0)
    assert moment(d, 1) == pytest.approx(0.5, rel=1e-12)
    assert moment(d, 2) == pytest.approx(0.5, rel=1e-12)


def test_moment_erlang_second():
    assert moment(ERLANG12, 2) == pytest.approx(1.5, rel=1e-12)


def test_fit_moments_forced():
    d = fit_mean_scov(1.0, 4.0)
    assert moment(d, 1) == pytest.approx(1.0, rel=1e-12)
    assert moment(d, 2) == pytest.approx(5.0, rel=1e-12)


def test_moment_bad_order():
    with pytest.raises(ValueError):
        moment(ERLANG12, 0)


@pytest.mark.parametrize("mean,scov", [(1.0, 0.5), (1.0, 4.0), (2.0, 0.4), (0.5, 1.0)])
@pytest.mark.parametrize("i", [1, 2, 3])
def test_moment_matches_quadrature(mean, scov, i):
    d = fit_mean_scov(mean, scov)
    hi = 200.0 * mean
    integral, err = quad(lambda t: t**i * d.pdf(t), 0.0, hi, limit=400)
    assert moment(d, i) == pytest.approx(integral, rel=1e-6)


@pytest.mark.parametrize("mean,scov", FIT_GRID)
def test_cdf_monotone_and_limits(mean, scov):
    d = fit_mean_scov(mean, scov)
    xs = np.linspace(0.0, 40.0 * max(1.0, mean), 120)
    vals = d.cdf(xs)
    assert np.all(np.diff(vals) >= -1e-12)
    assert vals[0] == pytest.approx(d.mass0, abs=1e-12)
    # the slowest hyper-exponential mode (scov 16) still holds ~3e-3 there
    assert vals[-1] == pytest.approx(1.0, abs=5e-3)
    decay = abs(np.linalg.eigvals(d.S).real.max())
    assert d.cdf(60.0 / decay) == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# two-moment fitting
# ---------------------------------------------------------------------------

def test_fit_erlang_structure():
    d = fit_mean_scov(1.0, 0.5)
    assert d.order == 2
    assert_allclose(d.alpha, [1.0, 0.0], atol=1e-14)
    assert_allclose(d.S, [[-2.0, 2.0], [0.0, -2.0]], atol=1e-12)


def test_fit_scov_one_is_exponential():
    d = fit_mean_scov(1.0, 1.0)
    assert d.order == 1
    assert d.S[0, 0] == pytest.approx(-1.0)


def test_fit_mixture_structure_and_moments():
    # scov 0.4 sits between 1/3 and 1/2: mixture of Erlang orders 2 and 3
    d = fit_mean_scov(1.0, 0.4)
    assert d.order == 3
    assert d.alpha[0] > 0 and d.alpha[1] > 0 and d.alpha[2] == 0.0
    m1, _ = quad(lambda t: t * d.pdf(t), 0.0, 60.0, limit=400)
    m2, _ = quad(lambda t: t * t * d.pdf(t), 0.0, 60.0, limit=400)
    assert m1 == pytest.approx(1.0, rel=1e-8)
    assert m2 / m1**2 - 1.0 == pytest.approx(0.4, rel=1e-7)


@pytest.mark.parametrize("mean,scov", FIT_GRID)
def test_fit_round_trip(mean, scov):
    d = fit_mean_scov(mean, scov)
    assert validate(d) == []
    assert d.mean == pytest.approx(mean, rel=1e-10)
    assert d.scov == pytest.approx(scov, rel=1e-10)


def test_fit_rejects_nonpositive():
    with pytest.raises(ValueError):
        fit_mean_scov(0.0, 1.0)
    with pytest.raises(ValueError):
        fit_mean_scov(1.0, -0.5)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_sample_exponential_mean():
    rng = np.random.default_rng(1234)
    xs = sample(exponential(1.0), rng, size=10**6)
    assert 0.997 <= xs.mean() <= 1.003


def test_sample_reproducible():
    a = sample(exponential(1.0), np.random.default_rng(7), size=1000)
    b = sample(exponential(1.0), np.random.default_rng(7), size=1000)
    assert np.array_equal(a, b)


def test_sample_erlang_scov_within_clt_band():
    rng = np.random.default_rng(99)
    d = fit_mean_scov(1.0, 0.25)
    xs = sample(d, rng, size=2 * 10**5)
    n = xs.size
    m1, m2 = xs.mean(), (xs**2).mean()
    scov_hat = m2 / m1**2 - 1.0
    # delta method on (m1, m2): grad = (-2 m2 / m1^3, 1 / m1^2)
    grad = np.array([-2.0 * m2 / m1**3, 1.0 / m1**2])
    cov = np.cov(np.vstack([xs, xs**2])) / n
    se = math.sqrt(grad @ cov @ grad)
    assert abs(scov_hat - 0.25) <= 3.0 * se


def test_sample_degenerate_atom():
    d = PhDistribution([0.0], [[-1.0]], mass0=1.0)
    xs = sample(d, np.random.default_rng(3), size=100)
    assert np.all(xs == 0.0)


def test_sample_scalar_form():
    x = sample(exponential(1.0), np.random.default_rng(5))
    assert isinstance(x, float) and x > 0


def test_sample_rejects_me():
    d = MeDistribution([1.0], [[-1.0]])
    with pytest.raises(TypeError):
        sample(d, np.random.default_rng(0))


def _reference_cdf(mean, scov, xs):
    """Closed-form cdf of the fitted family, built on scipy.stats only."""
    if abs(scov - 1.0) <= 1e-12:
        return expon(scale=mean).cdf(xs)
    if scov > 1.0:
        w = math.sqrt((scov - 1.0) / (scov + 1.0))
        q1, q2 = (1.0 + w) / 2.0, (1.0 - w) / 2.0
        r1, r2 = 2.0 * q1 / mean, 2.0 * q2 / mean
        return 1.0 - q1 * np.exp(-r1 * xs) - q2 * np.exp(-r2 * xs)
    k = max(2, math.ceil(1.0 / scov - 1e-10))
    q = (k * scov - math.sqrt(k * (1.0 + scov) - k * k * scov)) / (1.0 + scov)
    rate = (k - q) / mean
    return (1.0 - q) * gamma(a=k, scale=1.0 / rate).cdf(xs) \
        + q * gamma(a=k - 1, scale=1.0 / rate).cdf(xs)


@pytest.mark.parametrize("mean,scov", FIT_GRID)
def test_sample_ks_distance(mean, scov):
    rng = np.random.default_rng(hash((mean, scov)) % 2**32)
    d = fit_mean_scov(mean, scov)
    xs = np.sort(sample(d, rng, size=10**5))
    ref = _reference_cdf(mean, scov, xs)
    n = xs.size
    ecdf_hi = np.arange(1, n + 1) / n
    ecdf_lo = np.arange(0, n) / n
    ks = max(np.abs(ecdf_hi - ref).max(), np.abs(ecdf_lo - ref).max())
    assert ks <= 0.01


# ---------------------------------------------------------------------------
# matrix-exponential forms
# ---------------------------------------------------------------------------

def test_me_from_form_exponential():
    d = me_from_form([1.0], [[-1.0]], [1.0])
    assert d.pdf(0.7) == pytest.approx(math.exp(-0.7), rel=1e-12)
    assert d.moment(1) == pytest.approx(1.0, rel=1e-12)


def test_me_from_form_erlang_round_trip():
    d = me_from_form([1.0, 0.0], [[-2.0, 2.0], [0.0, -2.0]], [0.0, 2.0])
    xs = np.linspace(0.0, 8.0, 50)
    assert_allclose(d.pdf(xs), ERLANG12.pdf(xs), atol=1e-10)


def test_me_from_form_zero_entry_branch():
    # v = -A^{-1} h with a zero entry exercises the substitute rows of M
    rng = np.random.default_rng(42)
    n = 4
    A = rng.normal(size=(n, n)) - n * np.eye(n)
    assert np.linalg.eigvals(A).real.max() < 0
    v = np.array([0.7, 0.0, -0.4, 1.1])
    h = -A @ v
    g = rng.normal(size=n)
    g = g / (-g @ np.linalg.solve(A, h))
    d = me_from_form(g, A, h)
    xs = np.concatenate([[0.0], np.geomspace(1e-3, 10.0, 200)])
    want = np.array([g @ expm(A * x) @ h for x in xs])
    scale = np.abs(want).max()
    assert np.abs(d.pdf(xs) - want).max() <= 1e-9 * scale


def test_me_from_form_moments_match_form():
    rng = np.random.default_rng(17)
    n = 3
    A = rng.normal(size=(n, n)) - n * np.eye(n)
    h = rng.uniform(0.5, 1.5, size=n)
    g = rng.uniform(0.5, 1.5, size=n)
    g = g / (-g @ np.linalg.solve(A, h))
    d = me_from_form(g, A, h)
    for i in (1, 2, 3):
        y = h.copy()
        for _ in range(i + 1):
            y = np.linalg.solve(A, y)
        want = (-1.0) ** (i + 1) * math.factorial(i) * (g @ y)
        assert d.moment(i) == pytest.approx(want, rel=1e-9)


def test_me_from_form_rejects_unnormalized():
    with pytest.raises(ContractError):
        me_from_form([2.0], [[-1.0]], [1.0])


def test_me_from_form_zero_h_needs_full_atom():
    d = me_from_form([1.0], [[-1.0]], [0.0], mass0=1.0)
    assert d.mass0 == 1.0
    with pytest.raises(ContractError):
        me_from_form([1.0], [[-1.0]], [0.0], mass0=0.5)


def test_me_from_form_rejects_unstable():
    with pytest.raises(ContractError):
        me_from_form([1.0], [[1.0]], [-1.0])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_json_round_trip():
    d = fit_mean_scov(2.0, 0.4)
    blob = json.dumps(d.to_json())
    back = PhDistribution.from_json(json.loads(blob))
    assert isinstance(back, PhDistribution)
    assert_allclose(back.alpha, d.alpha)
    assert_allclose(back.S, d.S)
    assert back.mass0 == d.mass0


def test_immutability():
    d = exponential(1.0)
    with pytest.raises(ValueError):
        d.alpha[0] = 2.0

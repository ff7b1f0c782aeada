import mpmath
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from obspop.observability import (
    AlphaOutOfRange,
    UnattainableTarget,
    alpha_for_target,
    alpha_threshold_theta,
    alpha_threshold_theta_general,
    capture_prob,
    eta_of_theta,
    induced_density_logit,
    inverse_link,
    link_fn,
    thm1_bound,
    theta_of_eta,
)


def test_link_round_trip_logit():
    x = np.linspace(-8, 8, 161)
    assert np.max(np.abs(link_fn(inverse_link(x, "logit"), "logit") - x)) < 1e-12


def test_link_round_trip_probit():
    # Phi(x) for x >> 0 sits within a few ulp of 1, so only the lower half
    # can round-trip at this precision; the upper half follows by symmetry
    x = np.linspace(-8, 0, 81)
    assert np.max(np.abs(link_fn(inverse_link(x, "probit"), "probit") - x)) < 1e-12


def test_capture_prob_symmetric_logit():
    assert capture_prob(0.0, np.zeros(4), "logit") == pytest.approx(0.9375, abs=1e-15)


def test_capture_prob_limits():
    beta = np.zeros(3)
    assert capture_prob(-60.0, beta, "logit") < 1e-20
    assert capture_prob(60.0, beta, "logit") == 1.0
    assert capture_prob(-40.0, beta, "probit") < 1e-300 or capture_prob(-40.0, beta, "probit") >= 0


def test_capture_prob_probit_against_mpmath():
    mpmath.mp.dps = 40
    ncdf = lambda x: mpmath.ncdf(x)  # noqa: E731
    exact = 1 - ncdf(-0.5) * ncdf(0.5)
    assert capture_prob(0.0, np.array([0.5, -0.5]), "probit") == pytest.approx(float(exact), rel=1e-14)


@given(st.floats(-20, 20), st.floats(-20, 20), st.sampled_from(["probit", "logit"]))
def test_capture_prob_monotone(a, b, link):
    assume(abs(a - b) > 1e-6)
    lo, hi = sorted((a, b))
    beta = np.array([-0.3, 0.2, 1.0])
    assert capture_prob(lo, beta, link) <= capture_prob(hi, beta, link)
    p = capture_prob(lo, beta, link)
    assert 0.0 <= p <= 1.0


def test_threshold_inverse_of_symmetric_case():
    assert alpha_threshold_theta(0.9375, 0.0, 4) == pytest.approx(0.0, abs=1e-12)


def test_threshold_monotone_to_minus_inf():
    vals = [alpha_threshold_theta(a, 0.0, 4) for a in (1e-2, 1e-4, 1e-8, 1e-12)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert vals[-1] < -25


def test_threshold_by_bisection():
    th = alpha_threshold_theta(0.5, 1.0, 2)
    root = optimize.bisect(lambda t: capture_prob(t, np.full(2, 1.0), "logit") - 0.5, -20, 20, xtol=1e-14)
    assert th == pytest.approx(root, abs=1e-10)
    assert capture_prob(th, np.full(2, 1.0), "logit") == pytest.approx(0.5, abs=1e-10)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
def test_threshold_out_of_range(alpha):
    with pytest.raises(AlphaOutOfRange):
        alpha_threshold_theta(alpha, 0.0, 3)


@given(st.floats(1e-6, 1 - 1e-6), st.floats(-5, 5), st.integers(1, 8))
def test_threshold_identity(alpha, beta, T):
    th = alpha_threshold_theta(alpha, beta, T)
    assert capture_prob(th, np.full(T, beta), "logit") == pytest.approx(alpha, abs=1e-8)


def test_general_threshold_probit():
    beta = np.array([0.3, -1.0, 0.0])
    th = alpha_threshold_theta_general(0.2, beta, "probit")
    assert capture_prob(th, beta, "probit") == pytest.approx(0.2, abs=1e-12)


def test_bound_cases():
    assert thm1_bound(0.0, 0.5, 5000) == 0.0
    assert thm1_bound(1.0, 1.0, 1) == 1.0
    exact = 1 - mpmath.power(1 - mpmath.mpf("5e-4"), 2000)
    assert thm1_bound(0.05, 0.01, 2000) == pytest.approx(float(exact), rel=1e-12)
    assert thm1_bound(0.05, 0.01, 2000) == pytest.approx(0.6323, abs=1e-4)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 10**5), st.floats(0, 0.2), st.floats(0, 0.2), st.integers(0, 1000))
def test_bound_monotone(a, e, n, da, de, dn):
    base = thm1_bound(a, e, n)
    assert 0.0 <= base <= 1.0
    assert thm1_bound(min(a + da, 1), e, n) >= base
    assert thm1_bound(a, min(e + de, 1), n) >= base
    assert thm1_bound(a, e, n + dn) >= base


def test_alpha_for_target_closed_form():
    a = alpha_for_target(0.5, 0.01, 1500)
    assert a == pytest.approx((1 - 0.5 ** (1 / 1500)) / 0.01, rel=1e-12)
    assert a == pytest.approx(0.0462, abs=1e-4)
    assert thm1_bound(a, 0.01, 1500) == pytest.approx(0.5, abs=1e-8)


def test_alpha_for_target_high_probability_band():
    # m between 1000 and 1500 puts alpha for probability 0.95 at roughly 0.2 to 0.3
    assert alpha_for_target(0.95, 0.01, 1000) == pytest.approx(0.299, abs=1e-3)
    assert alpha_for_target(0.95, 0.01, 1500) == pytest.approx(0.2, abs=1e-3)


def test_alpha_for_target_unattainable():
    with pytest.raises(UnattainableTarget):
        alpha_for_target(0.999999, 1e-6, 10)


def test_eta_theta_inverse():
    th = np.linspace(-30, 30, 121)
    eta = eta_of_theta(th, 0.4, 5)
    assert np.allclose(theta_of_eta(eta, 0.4, 5), th, atol=1e-9)
    mid = np.abs(th) < 5
    p = capture_prob(th[mid], np.full(5, 0.4), "logit")
    assert np.allclose(eta[mid], np.log(p / (1 - p)), atol=1e-10)


def test_induced_density_identity_at_T1():
    eta = np.linspace(-6, 6, 25)
    g = stats.norm(0.3, 1.2).pdf
    assert np.allclose(induced_density_logit(eta, g, 0.0, 1), g(eta), rtol=1e-12)


def test_induced_density_normalizes():
    val, _ = integrate.quad(lambda e: induced_density_logit(e, stats.norm.pdf, 0.0, 4), -40, 40, limit=200)
    assert val == pytest.approx(1.0, abs=1e-4)


def test_induced_density_tails():
    # d theta / d eta tends to 1 as eta -> -inf and to 1/T as eta -> +inf
    T = 4
    g = stats.norm(0, 8).pdf
    for eta, const in ((-20.0, 1.0), (20.0, 1.0 / T)):
        ratio = induced_density_logit(eta, g, 0.0, T) / g(theta_of_eta(eta, 0.0, T))
        assert ratio == pytest.approx(const, rel=0.1)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import ndtri

from obspop.data import CaptureDataset
from obspop.dpsampler import (
    ChainState,
    PriorConfig,
    PriorConfigError,
    beta_theta_precision,
    class_capture_prob,
    derive_quantities,
    effective_sample_size,
    expected_observation_prob,
    init_chain,
    label_log_weights,
    run_chain,
    step_alpha0,
    step_gamma_observed,
    step_joint_beta_theta,
    step_N_and_unobserved,
    step_sticks,
    step_z_observed,
)
from obspop.generative import make_scenario, simulate_population
from obspop.stochastic import make_rng, stick_weights

HALF_NORMAL_MEAN = math.sqrt(2.0 / math.pi)


def small_dataset(m=40, T=3, seed=0):
    g = np.random.default_rng(seed)
    rows = g.integers(0, 2, size=(3 * m, T))
    return CaptureDataset.from_histories(rows[rows.any(axis=1)][:m])


def build_state(theta_star, beta, nu, x, z, omega=None, Gamma0=None, K=None, alpha0=1.0, gamma=None):
    theta_star = np.asarray(theta_star, dtype=float)
    K = theta_star.size
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=np.int8).reshape(-1, beta.size)
    z = np.asarray(z, dtype=int)
    nu = np.asarray(nu, dtype=float)
    remaining = np.concatenate(([1.0], 1.0 - np.cumsum(nu)[:-1]))
    nu_star = np.where(remaining > 0, nu / np.where(remaining > 0, remaining, 1.0), 1.0)
    nu_star[-1] = 1.0
    omega = np.zeros(K, dtype=np.int64) if omega is None else np.asarray(omega, dtype=np.int64)
    state = ChainState(
        prior=PriorConfig(K=K),
        x=x,
        N=x.shape[0] + int(omega.sum()),
        z=z,
        gamma_obs=np.zeros(x.shape) if gamma is None else np.asarray(gamma, dtype=float),
        theta_star=theta_star,
        beta=beta,
        nu_star=nu_star,
        nu=stick_weights(nu_star),
        log_nu_K=float(np.sum(np.log1p(-np.minimum(nu_star[:-1], 1 - 1e-16)))),
        alpha0=alpha0,
        omega=omega,
        Gamma0=np.zeros((K, beta.size)) if Gamma0 is None else np.asarray(Gamma0, dtype=float),
        m_h=np.bincount(z, minlength=K),
    )
    return state


# -- config / init ---------------------------------------------------------


def test_prior_validation():
    with pytest.raises(PriorConfigError):
        PriorConfig(tau2=0.0)
    with pytest.raises(PriorConfigError):
        PriorConfig(a=-1.0)
    with pytest.raises(PriorConfigError):
        PriorConfig(K=0)
    assert PriorConfig().K == 30


def test_init_K1():
    s = init_chain(make_rng(0), small_dataset(), PriorConfig(K=1))
    assert np.all(s.z == 0)
    s.check()


def test_init_invariants_and_determinism():
    ds = small_dataset()
    a = init_chain(make_rng(5), ds, PriorConfig(K=6))
    b = init_chain(make_rng(5), ds, PriorConfig(K=6))
    a.check()
    assert a.N == ds.m
    for name in ("z", "gamma_obs", "theta_star", "beta", "nu_star"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


# -- step 1 ----------------------------------------------------------------


def test_z_noop_for_K1():
    ds = small_dataset()
    s = init_chain(make_rng(0), ds, PriorConfig(K=1))
    z = s.z.copy()
    step_z_observed(make_rng(1), s, ds)
    assert np.array_equal(z, s.z)


def test_z_symmetric_classes():
    ds = small_dataset(m=1)
    s = build_state([0.4, 0.4, 0.4], [0.1, -0.2, 0.3], [1 / 3] * 3, ds.histories, [0], gamma=[[0.3, -0.5, 1.0]])
    g = make_rng(2)
    draws = []
    for _ in range(6000):
        step_z_observed(g, s, ds)
        draws.append(s.z[0])
    counts = np.bincount(draws, minlength=3)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_z_weights_match_complete_data_density():
    # brute force over the complete-data density of (gamma_i, z_i = h)
    theta = np.array([0.7, -1.3])
    beta = np.array([0.2, -0.4])
    nu = np.array([0.35, 0.65])
    gamma = np.array([[0.9, -0.1], [-0.6, 1.4]])
    s = build_state(theta, beta, nu, [[1, 0], [0, 1]], [0, 1], gamma=gamma)
    got = label_log_weights(s)
    got = np.exp(got - got.max(axis=1, keepdims=True))
    got /= got.sum(axis=1, keepdims=True)
    for i in range(2):
        logq = [math.log(nu[h]) + stats.norm.logpdf(gamma[i], theta[h] + beta, 1).sum() for h in range(2)]
        q = np.exp(np.array(logq) - max(logq))
        q /= q.sum()
        assert np.allclose(got[i], q, rtol=1e-12, atol=0)


# -- step 2 ----------------------------------------------------------------


def test_gamma_signs_and_half_normal():
    n = 100_000
    x = np.ones((n, 1), dtype=np.int8)
    s = build_state([0.0], [0.0], [1.0], x, np.zeros(n, dtype=int))
    step_gamma_observed(make_rng(3), s)
    assert np.all(s.gamma_obs > 0)
    assert abs(s.gamma_obs.mean() - HALF_NORMAL_MEAN) < 0.01


def test_gamma_tail_side():
    n = 20_000
    x = np.zeros((n, 2), dtype=np.int8)
    x[:, 1] = 1  # keep rows nonzero; column 0 is the x=0 case
    s = build_state([3.0], [0.0, 0.0], [1.0], x, np.zeros(n, dtype=int))
    step_gamma_observed(make_rng(4), s)
    assert np.all(s.gamma_obs[:, 0] < 0) and np.all(np.isfinite(s.gamma_obs))
    assert np.all(s.gamma_obs[:, 1] > 0)


# -- step 3 ----------------------------------------------------------------


def test_joint_no_data_is_prior():
    prior = PriorConfig(K=2, mu=0.5, tau2=2.0, phi=-1.0, sigma2=3.0)
    s = build_state([0.0, 0.0], [0.0, 0.0], [0.5, 0.5], np.zeros((0, 2)), np.zeros(0, dtype=int))
    s.prior = prior
    g = make_rng(6)
    draws = []
    for _ in range(20000):
        step_joint_beta_theta(g, s)
        draws.append(np.concatenate((s.beta, s.theta_star)))
    d = np.array(draws)
    assert np.allclose(d.mean(axis=0), [-1, -1, 0.5, 0.5], atol=0.04)
    assert np.allclose(d.var(axis=0), [3, 3, 2, 2], rtol=0.04)


def _design_oracle(state):
    """Posterior mean/covariance of (beta, theta*) from an explicit regression design."""
    T, K = state.T, state.K
    rows, ys = [], []
    for i in range(state.m):
        for t in range(T):
            r = np.zeros(T + K)
            r[t] = 1
            r[T + state.z[i]] = 1
            rows.append(r)
            ys.append(state.gamma_obs[i, t])
    # an unobserved unit's utilities enter only through their per-(h, t) sums,
    # so split each sum evenly over the omega_h units
    for h in range(K):
        for _ in range(state.omega[h]):
            for t in range(T):
                r = np.zeros(T + K)
                r[t] = 1
                r[T + h] = 1
                rows.append(r)
                ys.append(state.Gamma0[h, t] / state.omega[h])
    X, y = np.array(rows), np.array(ys)
    pr = state.prior
    prior_prec = np.diag([1 / pr.sigma2] * T + [1 / pr.tau2] * K)
    prior_mean = np.array([pr.phi] * T + [pr.mu] * K)
    P = prior_prec + X.T @ X
    cov = np.linalg.inv(P)
    return cov @ (prior_prec @ prior_mean + X.T @ y), cov


def test_joint_scalar_case():
    s = build_state([0.3], [0.1], [1.0], [[1], [1], [0]], [0, 0, 0], gamma=[[0.8], [1.7], [-0.4]],
                    omega=[2], Gamma0=[[-1.9]])
    s.prior = PriorConfig(K=1, mu=0.2, tau2=1.5, phi=-0.3, sigma2=2.5)
    P, b = beta_theta_precision(s)
    mean = np.linalg.solve(P, b)
    want, _ = _design_oracle(s)
    assert np.allclose(mean, want, rtol=1e-10, atol=1e-12)


def test_joint_covariance():
    s = build_state([0.3, -1.0], [0.1, -0.2], [0.5, 0.5], [[1, 0], [0, 1], [1, 1]], [0, 1, 1],
                    gamma=[[0.5, -0.3], [-0.2, 0.9], [1.1, 0.4]], omega=[2, 3], Gamma0=[[-1.0, -2.0], [-3.0, -1.5]])
    s.prior = PriorConfig(K=2, tau2=1.0, sigma2=1.0)
    want_mean, want_cov = _design_oracle(s)
    P, b = beta_theta_precision(s)
    assert np.allclose(np.linalg.inv(P), want_cov, rtol=1e-12)
    g = make_rng(8)
    draws = np.empty((100_000, 4))
    for i in range(draws.shape[0]):
        step_joint_beta_theta(g, s)
        draws[i, :2], draws[i, 2:] = s.beta, s.theta_star
    emp = np.cov(draws.T)
    assert np.all(np.abs(emp - want_cov) <= 0.03 * np.sqrt(np.outer(np.diag(want_cov), np.diag(want_cov))))
    assert np.allclose(draws.mean(axis=0), want_mean, atol=0.01)


# -- step 4 ----------------------------------------------------------------


def _stick_means(counts, alpha0, n=40000, seed=9):
    K = len(counts)
    s = build_state(np.zeros(K), [0.0], np.full(K, 1 / K), np.zeros((0, 1)), np.zeros(0, dtype=int),
                    omega=counts, alpha0=alpha0)
    g = make_rng(seed)
    acc = np.zeros(K)
    for _ in range(n):
        step_sticks(g, s)
        acc += s.nu_star
        assert abs(s.nu.sum() - 1) < 1e-12
    return acc / n


def test_sticks_prior_means():
    K = 5
    means = _stick_means([0] * K, alpha0=1.0)
    assert np.allclose(means[:-1], 0.5, rtol=0.02)
    assert means[-1] == 1.0


def test_sticks_unit_counts():
    K = 5
    means = _stick_means([1] * K, alpha0=1.0)
    h = np.arange(1, K)
    assert np.allclose(means[:-1], 2.0 / (2.0 + 1.0 + K - h), rtol=0.02)


def test_sticks_K2_recursion():
    s = build_state([0.0, 0.0], [0.0], [0.5, 0.5], np.zeros((0, 1)), np.zeros(0, dtype=int), omega=[3, 4])
    step_sticks(make_rng(1), s)
    assert s.nu[1] == 1.0 - s.nu_star[0]


def test_sticks_concentrate():
    s = build_state([0.0, 0.0, 0.0], [0.0], [1 / 3] * 3, np.zeros((0, 1)), np.zeros(0, dtype=int), omega=[10**6, 0, 0])
    g = make_rng(2)
    vals = []
    for _ in range(200):
        step_sticks(g, s)
        vals.append(s.nu[0])
    assert np.mean(vals) > 0.99


# -- step 5 ----------------------------------------------------------------


def test_alpha0_gamma_moments():
    K = 6
    s = build_state(np.zeros(K), [0.0], np.full(K, 1 / K), np.zeros((0, 1)), np.zeros(0, dtype=int))
    s.prior = PriorConfig(K=K, a=1.0, b=1.0)
    s.log_nu_K = -1.0
    g = make_rng(3)
    x = np.empty(100_000)
    for i in range(x.size):
        step_alpha0(g, s)
        x[i] = s.alpha0
    assert abs(x.mean() / (K / 2) - 1) < 0.02
    assert abs(x.var() / (K / 4) - 1) < 0.02


def test_alpha0_prior_limit():
    K = 4
    s = build_state(np.zeros(K), [0.0], np.full(K, 1 / K), np.zeros((0, 1)), np.zeros(0, dtype=int))
    s.prior = PriorConfig(K=K, a=2.0, b=3.0)
    s.log_nu_K = -1e-12
    g = make_rng(4)
    x = []
    for _ in range(50_000):
        step_alpha0(g, s)
        x.append(s.alpha0)
    assert abs(np.mean(x) / ((2.0 - 1 + K) / 3.0) - 1) < 0.02


# -- step 6 ----------------------------------------------------------------


def test_perfect_observability():
    ds = small_dataset(m=10, T=2)
    s = build_state([40.0, 50.0], [0.0, 0.0], [0.5, 0.5], ds.histories, np.zeros(10, dtype=int))
    g = make_rng(5)
    for _ in range(100):
        step_N_and_unobserved(g, s)
        assert s.N == 10 and s.omega.sum() == 0


def test_single_class_negative_binomial_mean():
    m = 100
    x = np.ones((m, 1), dtype=np.int8)
    s = build_state([0.0], [0.0], [1.0], x, np.zeros(m, dtype=int))
    g = make_rng(6)
    n0 = np.empty(100_000)
    for i in range(n0.size):
        step_N_and_unobserved(g, s)
        n0[i] = s.N - m
    assert abs(n0.mean() / 100 - 1) < 0.02


def test_unobserved_sums_are_negative_truncations():
    x = np.ones((50, 2), dtype=np.int8)
    s = build_state([-0.5, 0.2], [0.3, -0.1], [0.6, 0.4], x, np.zeros(50, dtype=int))
    g = make_rng(7)
    for _ in range(200):
        step_N_and_unobserved(g, s)
        assert s.omega.sum() == s.N - s.m
        assert np.all(s.Gamma0[s.omega > 0] < 0)
        assert np.all(s.Gamma0[s.omega == 0] == 0)


def test_posterior_mean_identity_frozen():
    ds = small_dataset(m=60, T=3, seed=3)
    s = build_state([-1.0, 0.5, 1.5], [0.2, -0.3, 0.0], [0.3, 0.5, 0.2], ds.histories, np.zeros(60, dtype=int))
    g = make_rng(8)
    Ns = np.empty(40_000)
    for i in range(Ns.size):
        step_N_and_unobserved(g, s)
        Ns[i] = s.N
    target = 60 / expected_observation_prob(s)
    se = Ns.std() / math.sqrt(Ns.size)
    assert abs(Ns.mean() - target) < max(3 * se, 0.01 * target)


# -- derived quantities ----------------------------------------------------


def test_derive_hand_built():
    p = np.array([0.9, 0.4, 0.05])
    theta = ndtri(p)  # T = 1, beta = 0 gives p = Phi(theta)
    x = np.ones((15, 1), dtype=np.int8)
    z = np.array([0] * 10 + [1] * 5)
    s = build_state(theta, [0.0], [0.4, 0.3, 0.3], x, z, omega=[0, 0, 20])
    assert np.allclose(class_capture_prob(s.theta_star, s.beta), p, rtol=1e-12)
    d = derive_quantities(s, [0.3])
    assert d.N_alpha[0.3] == 15
    assert d.N_LB == 15
    assert d.alpha_inf == pytest.approx(0.05, rel=1e-12)
    assert d.N == 35


def test_derive_all_informative_and_limits():
    x = np.ones((6, 1), dtype=np.int8)
    s = build_state([0.0, 1.0], [0.0], [0.5, 0.5], x, [0, 0, 0, 1, 1, 1], omega=[3, 1])
    d = derive_quantities(s, [0.0, 1.0])
    assert d.alpha_inf == 0.0 and d.N_LB == d.N == 10
    assert d.N_alpha[0.0] == 10 and d.N_alpha[1.0] == 0


@given(st.permutations(list(range(5))))
@settings(max_examples=30)
def test_label_switching_invariance(perm):
    g = np.random.default_rng(1)
    theta = g.normal(size=5)
    x = np.ones((8, 2), dtype=np.int8)
    z = np.array([0, 0, 1, 1, 1, 3, 3, 3])
    omega = np.array([2, 0, 4, 1, 7])
    nu = np.full(5, 0.2)
    a = build_state(theta, [0.1, -0.4], nu, x, z, omega=omega)
    perm = np.asarray(perm)
    inv = np.argsort(perm)
    b = build_state(theta[perm], [0.1, -0.4], nu[perm], x, inv[z], omega=omega[perm])
    grid = (0.05, 0.2, 0.5)
    da, db = derive_quantities(a, grid), derive_quantities(b, grid)
    assert (da.N, da.N_alpha, da.alpha_inf, da.N_LB) == (db.N, db.N_alpha, db.alpha_inf, db.N_LB)


# -- chains ----------------------------------------------------------------


@pytest.fixture(scope="module")
def short_chain():
    pop = simulate_population(make_rng(1, 0, 0, "population"), make_scenario(3), 400)
    ds = pop.dataset()
    return ds, run_chain(make_rng(1), ds, PriorConfig(K=10), iters=600, burn_in=100, thin=2)


def test_draw_invariants(short_chain):
    ds, res = short_chain
    for d in res.draws:
        assert d.N >= d.N_LB >= ds.m
        assert d.N >= ds.m
        vals = [d.N_alpha[a] for a in sorted(d.N_alpha)]
        assert all(u >= v for u, v in zip(vals, vals[1:]))
        assert d.N >= vals[0]


def test_chain_deterministic(short_chain):
    ds, res = short_chain
    again = run_chain(make_rng(1), ds, PriorConfig(K=10), iters=600, burn_in=100, thin=2)
    assert np.array_equal(res.N, again.N)
    assert np.array_equal(res.alpha_inf, again.alpha_inf)


def test_summary_fields(short_chain):
    _, res = short_chain
    sm = res.summary()
    assert sm["draws"] == 250
    lo, hi = sm["N"]["ci95"]
    assert lo <= sm["N"]["mean"] <= hi
    assert set(sm["alpha_inf"]) == {"0.5", "0.95"}
    assert sm["alpha_inf"]["0.5"]["alpha"] <= sm["alpha_inf"]["0.95"]["alpha"]


def test_all_observable_concentrates_on_m():
    ds = small_dataset(m=30, T=3)
    prior = PriorConfig(K=3, mu=10.0, tau2=0.01, phi=10.0, sigma2=0.01)
    res = run_chain(make_rng(2), ds, prior, iters=400, burn_in=100, thin=1)
    assert np.mean(res.N == ds.m) >= 0.99


def test_run_chain_rejects_bad_lengths():
    with pytest.raises(ValueError):
        run_chain(make_rng(0), small_dataset(), PriorConfig(K=2), iters=10, burn_in=10)


def test_ess_iid_and_correlated():
    g = np.random.default_rng(0)
    iid = g.normal(size=4000)
    assert 3000 < effective_sample_size(iid) <= 4000 * 1.2
    ar = np.empty(4000)
    ar[0] = 0
    for i in range(1, ar.size):
        ar[i] = 0.9 * ar[i - 1] + g.normal()
    # AR(1) with rho 0.9 has ESS about n (1 - rho) / (1 + rho)
    assert 120 < effective_sample_size(ar) < 320

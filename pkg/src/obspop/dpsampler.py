"""Truncated stick-breaking Dirichlet-process M_th model, fit by Gibbs sampling.

Complete-data model (probit link, truncation level K)::

    x_it       = 1{gamma_it > 0}
    gamma_it   ~ N(theta*_{z_i} + beta_t, 1)
    beta_t     ~ N(phi, sigma2)
    theta*_h   ~ N(mu, tau2)
    z_i        ~ Discrete(nu_1..nu_K),  nu_h = nu*_h prod_{l<h} (1 - nu*_l)
    nu*_h      ~ Beta(1, alpha0) for h < K,  nu*_K = 1
    alpha0     ~ Gamma(a, b)  (rate b),       p(N) ∝ 1/N

Observed units carry their own z_i and gamma_i.  Unobserved units are kept
only as per-class counts ``omega_h`` and per-(class, list) sums of their
latent utilities ``Gamma0[h, t]``, so memory is O(KT) whatever N is.

One sweep updates, in order: observed labels, observed utilities, the
joint Gaussian block (beta, theta*), the sticks, alpha0, and finally
(N, omega, Gamma0) given everything else.

Notation: ``c_h = m_h + omega_h`` is the total size of class h; ``nu`` is
reserved for the stick weights.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .data import CaptureDataset
from .stochastic import sample_mvn_from_precision, std_normal_above, stick_weights

log = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = (0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.45)
DEFAULT_Q_LEVELS = (0.5, 0.95)
# above this many unobserved units in one class, Gamma0 sums use the exact
# truncated-normal mean and variance with a normal draw
CLT_THRESHOLD = 50_000
_NU_STAR_MAX = 1.0 - 1e-16
_MIN_OBS_PROB = 1e-12


class DegenerateWeights(FloatingPointError):
    pass


class AllClassesUnobservable(FloatingPointError):
    pass


class PriorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters; defaults are weakly informative on the probit scale."""

    K: int = 30
    mu: float = 0.0
    tau2: float = 4.0
    phi: float = 0.0
    sigma2: float = 4.0
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.K < 1:
            raise PriorConfigError("K must be >= 1")
        if self.tau2 <= 0 or self.sigma2 <= 0:
            raise PriorConfigError("prior variances must be positive")
        if self.a <= 0 or self.b <= 0:
            raise PriorConfigError("Gamma(a, b) needs a, b > 0")
        if self.a - 1 + self.K <= 0:
            raise PriorConfigError("alpha0 update needs a - 1 + K > 0")


@dataclass
class ChainState:
    """All latent quantities of one chain."""

    prior: PriorConfig
    x: np.ndarray  # (m, T) observed histories
    N: int
    z: np.ndarray  # (m,) labels in 0..K-1
    gamma_obs: np.ndarray  # (m, T)
    theta_star: np.ndarray  # (K,)
    beta: np.ndarray  # (T,)
    nu_star: np.ndarray  # (K,)
    nu: np.ndarray  # (K,)
    log_nu_K: float
    alpha0: float
    omega: np.ndarray  # (K,) unobserved units per class
    Gamma0: np.ndarray  # (K, T) sums of unobserved utilities
    m_h: np.ndarray  # (K,) observed units per class

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def T(self) -> int:
        return self.x.shape[1]

    @property
    def K(self) -> int:
        return self.theta_star.size

    @property
    def counts(self) -> np.ndarray:
        return self.m_h + self.omega

    def copy(self) -> "ChainState":
        return replace(self, **{k: np.copy(v) for k, v in vars(self).items() if isinstance(v, np.ndarray)})

    def check(self):
        """Assert the structural invariants."""
        assert abs(self.nu.sum() - 1.0) < 1e-12 or self.nu.sum() == 0
        assert np.allclose(self.nu, stick_weights(self.nu_star), rtol=0, atol=1e-15)
        assert self.omega.sum() == self.N - self.m
        assert self.m_h.sum() == self.m
        assert np.array_equal(self.m_h, np.bincount(self.z, minlength=self.K))
        assert np.array_equal(self.gamma_obs > 0, self.x == 1)


@dataclass(frozen=True)
class PosteriorDraw:
    N: int
    N_alpha: dict
    alpha_inf: float
    N_LB: int
    theta_star: np.ndarray
    beta: np.ndarray
    nu: np.ndarray
    alpha0: float


def class_capture_prob(theta_star, beta) -> np.ndarray:
    """Per-class ``p_h = 1 - prod_t Phi(-theta*_h - beta_t)``."""
    log_miss = log_ndtr(-(theta_star[:, None] + beta[None, :])).sum(axis=1)
    return -np.expm1(log_miss)


# -- initialisation --------------------------------------------------------


def init_chain(rng, dataset: CaptureDataset, prior: PriorConfig = PriorConfig()) -> ChainState:
    """Labels uniform over classes, parameters from the prior, N = m."""
    x = np.asarray(dataset.histories, dtype=np.int8)
    m, T = x.shape
    K = prior.K
    z = rng.integers(0, K, size=m)
    theta_star = prior.mu + math.sqrt(prior.tau2) * rng.standard_normal(K)
    beta = prior.phi + math.sqrt(prior.sigma2) * rng.standard_normal(T)
    alpha0 = prior.a / prior.b
    nu_star = np.minimum(rng.beta(1.0, alpha0, size=K), _NU_STAR_MAX)
    nu_star[-1] = 1.0
    state = ChainState(
        prior=prior,
        x=x,
        N=m,
        z=z,
        gamma_obs=np.zeros((m, T)),
        theta_star=theta_star,
        beta=beta,
        nu_star=nu_star,
        nu=stick_weights(nu_star),
        log_nu_K=float(np.sum(np.log1p(-nu_star[:-1]))),
        alpha0=alpha0,
        omega=np.zeros(K, dtype=np.int64),
        Gamma0=np.zeros((K, T)),
        m_h=np.bincount(z, minlength=K),
    )
    step_gamma_observed(rng, state, dataset)
    return state


# -- Gibbs steps -----------------------------------------------------------


def label_log_weights(state: ChainState) -> np.ndarray:
    """Unnormalised log q_ih for the observed labels, shape (m, K)."""
    th = state.theta_star
    with np.errstate(divide="ignore"):
        log_nu = np.log(state.nu)
    base = log_nu - 0.5 * state.T * th**2 - th * state.beta.sum()
    return base[None, :] + state.gamma_obs.sum(axis=1)[:, None] * th[None, :]


def step_z_observed(rng, state: ChainState, dataset: CaptureDataset | None = None):
    """Resample observed labels from their K-category conditionals."""
    K = state.K
    if K == 1:
        return
    logw = label_log_weights(state)
    top = logw.max(axis=1)
    if not np.all(np.isfinite(top)):
        raise DegenerateWeights("all label weights are zero for some unit")
    w = np.exp(logw - top[:, None])
    cum = np.cumsum(w, axis=1)
    u = rng.random(state.m) * cum[:, -1]
    z = (cum < u[:, None]).sum(axis=1)
    state.z = np.minimum(z, K - 1)
    state.m_h = np.bincount(state.z, minlength=K)


def step_gamma_observed(rng, state: ChainState, dataset: CaptureDataset | None = None):
    """Redraw observed utilities from normals truncated to the side given by x."""
    mean = state.theta_star[state.z][:, None] + state.beta[None, :]
    hit = state.x == 1
    # x=1: gamma - mean > -mean ; x=0: mean - gamma > mean
    a = np.where(hit, -mean, mean)
    z = std_normal_above(rng, a.ravel()).reshape(a.shape)
    state.gamma_obs = mean + np.where(hit, z, -z)


def beta_theta_precision(state: ChainState):
    """Precision matrix and linear term of the joint (beta, theta*) conditional."""
    pr = state.prior
    T, K = state.T, state.K
    c = state.counts.astype(float)
    P = np.zeros((T + K, T + K))
    P[:T, :T] = np.eye(T) * (1.0 / pr.sigma2 + c.sum())
    P[:T, T:] = c[None, :]
    P[T:, :T] = c[:, None]
    P[T:, T:] = np.diag(1.0 / pr.tau2 + T * c)
    lin = np.empty(T + K)
    lin[:T] = pr.phi / pr.sigma2 + state.gamma_obs.sum(axis=0) + state.Gamma0.sum(axis=0)
    obs_by_class = np.bincount(state.z, weights=state.gamma_obs.sum(axis=1), minlength=K)
    lin[T:] = pr.mu / pr.tau2 + obs_by_class + state.Gamma0.sum(axis=1)
    return P, lin


def step_joint_beta_theta(rng, state: ChainState):
    """Draw (beta, theta*) jointly from their (T+K)-variate Gaussian conditional."""
    P, lin = beta_theta_precision(state)
    draw = sample_mvn_from_precision(rng, P, lin)
    state.beta = draw[: state.T]
    state.theta_star = draw[state.T:]


def step_sticks(rng, state: ChainState):
    """nu*_h ~ Beta(1 + c_h, alpha0 + sum_{l>h} c_l) for h < K; nu*_K = 1."""
    c = state.counts.astype(float)
    tail = np.concatenate((np.cumsum(c[::-1])[::-1][1:], [0.0]))
    nu_star = np.ones(state.K)
    if state.K > 1:
        nu_star[:-1] = np.minimum(rng.beta(1.0 + c[:-1], state.alpha0 + tail[:-1]), _NU_STAR_MAX)
    state.nu_star = nu_star
    state.nu = stick_weights(nu_star)
    state.log_nu_K = float(np.sum(np.log1p(-nu_star[:-1])))


def step_alpha0(rng, state: ChainState):
    """alpha0 ~ Gamma(a - 1 + K, rate = b - log nu_K)."""
    pr = state.prior
    shape = pr.a - 1.0 + state.K
    rate = pr.b - state.log_nu_K
    state.alpha0 = float(rng.gamma(shape, 1.0 / rate))


def _truncated_negative_sums(rng, mean, counts):
    """Sums of ``counts[j]`` draws of N(mean[j], 1) restricted to (-inf, 0)."""
    out = np.zeros(mean.size)
    counts = np.asarray(counts, dtype=np.int64)
    small = (counts > 0) & (counts <= CLT_THRESHOLD)
    if small.any():
        idx = np.flatnonzero(small)
        reps = counts[idx]
        mu = np.repeat(mean[idx], reps)
        draws = mu - std_normal_above(rng, mu)
        group = np.repeat(np.arange(idx.size), reps)
        out[idx] = np.bincount(group, weights=draws, minlength=idx.size)
    big = counts > CLT_THRESHOLD
    if big.any():
        mu = mean[big]
        n = counts[big].astype(float)
        # Z | Z < -mu:  E = -phi(mu)/Phi(-mu),  Var = 1 + mu*ratio - ratio^2
        ratio = np.exp(-0.5 * mu**2 - 0.5 * math.log(2 * math.pi) - log_ndtr(-mu))
        e = mu - ratio
        v = np.maximum(1.0 + mu * ratio - ratio**2, 0.0)
        out[big] = n * e + np.sqrt(n * v) * rng.standard_normal(mu.size)
    return out


def step_N_and_unobserved(rng, state: ChainState):
    """Draw N - m ~ NegBin, then omega ~ Multinomial and the Gamma0 sums.

    With rho_h = nu_h prod_t Phi(-theta*_h - beta_t) the number of unobserved
    units is NegBin(m, success prob 1 - sum rho), counting failures.
    """
    log_miss = log_ndtr(-(state.theta_star[:, None] + state.beta[None, :])).sum(axis=1)
    with np.errstate(divide="ignore"):
        log_rho = np.log(state.nu) + log_miss
    # 1 - sum(rho) = sum nu_h p_h, without cancellation
    seen = float(np.dot(state.nu, -np.expm1(log_miss)))
    if not seen > _MIN_OBS_PROB:
        log.warning("observation probability %.3g below %.0e; clamped", seen, _MIN_OBS_PROB)
        seen = _MIN_OBS_PROB
    n0 = int(rng.negative_binomial(state.m, min(seen, 1.0))) if seen < 1.0 else 0
    state.N = state.m + n0
    if n0 == 0:
        state.omega = np.zeros(state.K, dtype=np.int64)
        state.Gamma0 = np.zeros((state.K, state.T))
        return
    if not np.any(np.isfinite(log_rho)):
        raise AllClassesUnobservable("no class can hold unobserved units")
    q = np.exp(log_rho - logsumexp(log_rho))
    state.omega = rng.multinomial(n0, q / q.sum()).astype(np.int64)
    mean = (state.theta_star[:, None] + state.beta[None, :]).ravel()
    counts = np.repeat(state.omega, state.T)
    state.Gamma0 = _truncated_negative_sums(rng, mean, counts).reshape(state.K, state.T)


def gibbs_sweep(rng, state: ChainState, dataset: CaptureDataset | None = None):
    step_z_observed(rng, state, dataset)
    step_gamma_observed(rng, state, dataset)
    step_joint_beta_theta(rng, state)
    step_sticks(rng, state)
    step_alpha0(rng, state)
    step_N_and_unobserved(rng, state)


# -- derived quantities ----------------------------------------------------


def derive_arrays(state: ChainState, alpha_grid):
    """Class probabilities, counts, N_alpha on the grid, alpha_inf and N_LB."""
    p = class_capture_prob(state.theta_star, state.beta)
    c = state.counts
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    n_alpha = ((p[None, :] > alpha_grid[:, None]) * c[None, :]).sum(axis=1)
    informative = state.m_h >= 1
    # only classes that hold units can make N_alpha depend on an uninformed theta*
    loose = (~informative) & (c > 0)
    alpha_inf = float(p[loose].max()) if loose.any() else 0.0
    n_lb = int(c[informative].sum())
    return p, c, n_alpha.astype(np.int64), alpha_inf, n_lb


def derive_quantities(state: ChainState, alpha_grid=DEFAULT_ALPHA_GRID, q_levels=None) -> PosteriorDraw:
    """N_alpha on the grid, alpha_inf and N_LB for the current state.

    Class h is informative when it holds at least one observed unit.
    ``alpha_inf`` is the smallest alpha for which every nonempty class with
    ``p_h > alpha`` is informative, i.e. the largest ``p_h`` among nonempty
    uninformative classes (0 if there are none).
    """
    p, c, n_alpha, alpha_inf, n_lb = derive_arrays(state, alpha_grid)
    return PosteriorDraw(
        N=int(state.N),
        N_alpha={float(a): int(v) for a, v in zip(alpha_grid, n_alpha)},
        alpha_inf=alpha_inf,
        N_LB=n_lb,
        theta_star=state.theta_star.copy(),
        beta=state.beta.copy(),
        nu=state.nu.copy(),
        alpha0=state.alpha0,
    )


# -- chains ----------------------------------------------------------------


def effective_sample_size(x) -> float:
    """ESS from Geyer's initial monotone sequence of autocorrelations."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    pairs = acf[: n - n % 2].reshape(-1, 2).sum(axis=1)
    pos = np.flatnonzero(pairs <= 0)
    pairs = pairs[: pos[0]] if pos.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    return float(n / max(tau, 1.0 / n))


def _interval(x, level=0.95):
    lo, hi = np.quantile(x, [(1 - level) / 2, (1 + level) / 2])
    return [float(lo), float(hi)]


@dataclass
class ChainResult:
    """Retained draws of one chain, stored column-wise."""

    alpha_grid: np.ndarray
    N: np.ndarray
    N_alpha: np.ndarray  # (S, len(alpha_grid))
    alpha_inf: np.ndarray
    N_LB: np.ndarray
    alpha0: np.ndarray
    class_p: np.ndarray  # (S, K)
    class_counts: np.ndarray  # (S, K)
    theta_star: np.ndarray  # (S, K)
    beta: np.ndarray  # (S, T)
    nu: np.ndarray  # (S, K)
    m: int
    q_levels: tuple = DEFAULT_Q_LEVELS
    meta: dict = field(default_factory=dict)

    @property
    def S(self) -> int:
        return self.N.size

    @property
    def draws(self) -> list[PosteriorDraw]:
        return [
            PosteriorDraw(
                N=int(self.N[s]),
                N_alpha={float(a): int(v) for a, v in zip(self.alpha_grid, self.N_alpha[s])},
                alpha_inf=float(self.alpha_inf[s]),
                N_LB=int(self.N_LB[s]),
                theta_star=self.theta_star[s],
                beta=self.beta[s],
                nu=self.nu[s],
                alpha0=float(self.alpha0[s]),
            )
            for s in range(self.S)
        ]

    def alpha_inf_quantile(self, q: float) -> float:
        return float(np.quantile(self.alpha_inf, q))

    def n_alpha_at(self, alpha: float) -> np.ndarray:
        """Per-draw N_alpha for any alpha, from the stored class summaries."""
        return ((self.class_p > alpha) * self.class_counts).sum(axis=1)

    def summary(self) -> dict:
        out = {
            "m": self.m,
            "draws": self.S,
            "N": {"mean": float(self.N.mean()), "ci95": _interval(self.N), "ess": effective_sample_size(self.N)},
            "N_LB": {"mean": float(self.N_LB.mean()), "ci95": _interval(self.N_LB)},
            "alpha0": {"mean": float(self.alpha0.mean())},
            "N_alpha": {},
            "alpha_inf": {},
        }
        for j, a in enumerate(self.alpha_grid):
            col = self.N_alpha[:, j]
            out["N_alpha"][f"{a:g}"] = {
                "mean": float(col.mean()),
                "ci95": _interval(col),
                "ess": effective_sample_size(col),
            }
        for q in self.q_levels:
            a_q = self.alpha_inf_quantile(q)
            col = self.n_alpha_at(a_q)
            out["alpha_inf"][f"{q:g}"] = {
                "alpha": a_q,
                "N_alpha_mean": float(col.mean()),
                "N_alpha_ci95": _interval(col),
            }
        out.update(self.meta)
        return out


def run_chain(
    rng,
    dataset: CaptureDataset,
    prior: PriorConfig = PriorConfig(),
    iters: int = 20_000,
    burn_in: int = 5_000,
    thin: int = 5,
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    q_levels: Sequence[float] = DEFAULT_Q_LEVELS,
    callback=None,
) -> ChainResult:
    """Run one chain and keep every ``thin``-th sweep after ``burn_in``."""
    if iters <= burn_in:
        raise ValueError("iters must exceed burn_in")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    alpha_grid = np.asarray(sorted(float(a) for a in alpha_grid))
    state = init_chain(rng, dataset, prior)
    keep = list(range(burn_in + thin - 1, iters, thin))
    S, K, T = len(keep), prior.K, dataset.T
    res = ChainResult(
        alpha_grid=alpha_grid,
        N=np.empty(S, dtype=np.int64),
        N_alpha=np.empty((S, alpha_grid.size), dtype=np.int64),
        alpha_inf=np.empty(S),
        N_LB=np.empty(S, dtype=np.int64),
        alpha0=np.empty(S),
        class_p=np.empty((S, K)),
        class_counts=np.empty((S, K), dtype=np.int64),
        theta_star=np.empty((S, K)),
        beta=np.empty((S, T)),
        nu=np.empty((S, K)),
        m=dataset.m,
        q_levels=tuple(q_levels),
        meta={"iters": iters, "burn_in": burn_in, "thin": thin, "K": K},
    )
    s = 0
    for it in range(iters):
        gibbs_sweep(rng, state, dataset)
        if callback is not None:
            callback(it, state)
        if s < S and it == keep[s]:
            p, c, n_alpha, a_inf, n_lb = derive_arrays(state, alpha_grid)
            res.N[s] = state.N
            res.N_alpha[s] = n_alpha
            res.alpha_inf[s] = a_inf
            res.N_LB[s] = n_lb
            res.alpha0[s] = state.alpha0
            res.class_p[s] = p
            res.class_counts[s] = c
            res.theta_star[s] = state.theta_star
            res.beta[s] = state.beta
            res.nu[s] = state.nu
            s += 1
    return res


def expected_observation_prob(state: ChainState) -> float:
    """E_F(P) = sum_h nu_h p_h under the current parameters."""
    return float(np.dot(state.nu, class_capture_prob(state.theta_star, state.beta)))

"""Parametric M_th baselines as Poisson log-linear models on the 2^T - 1 observed cells.

Under the logit link, a heterogeneity law G* and list effects beta, the
expected count of a nonzero history x with j = sum(x) captures is::

    E n(x) = exp{b0 + sum_t x_t b_t + kappa(j)}

where ``kappa`` is the cumulant generating function of G0, the law of theta
among *unobserved* units (G0 ∝ pi_zeta G*, pi_zeta(theta) = prod_t
{1 - expit(theta + b_t)}), and ``exp(b0)`` is the expected zero-cell count.
Each family fixes G0 up to one parameter tau, the coefficient of the column
``h(j)``:

=================  ===========================  ==========================
family             G0                           h(j)
=================  ===========================  ==========================
darroch            N(0, tau)                    j^2 / 2
indirect_poisson   log(2) * Poisson(tau)        2^j - 1
indirect_gamma     -Gamma(shape tau, rate 3.5)  -log(1 + j / 3.5)
mt                 point mass at 0              (no column)
=================  ===========================  ==========================

``mt`` is the homogeneous model; it is not a heterogeneity family but is
handy for saturated and no-heterogeneity checks.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, stats

from .data import CaptureDataset, nonzero_histories
from .observability import alpha_threshold_theta_general

FAMILIES = ("darroch", "indirect_poisson", "indirect_gamma", "mt")
GAMMA_RATE = 3.5
GRAD_TOL = 1e-8
MAX_ITER = 100
Z95 = stats.norm.ppf(0.975)


class NonConvergence(RuntimeError):
    pass


class SingularInformation(np.linalg.LinAlgError):
    pass


class QuadratureFailure(ArithmeticError):
    pass


class InvalidMixingEstimate(QuadratureFailure):
    """The fitted h coefficient does not define a distribution (e.g. negative variance)."""


def h_column(family: str) -> Callable[[np.ndarray], np.ndarray] | None:
    if family == "darroch":
        return lambda j: np.asarray(j, dtype=float) ** 2 / 2.0
    if family == "indirect_poisson":
        return lambda j: np.exp2(np.asarray(j, dtype=float)) - 1.0
    if family == "indirect_gamma":
        return lambda j: -np.log1p(np.asarray(j, dtype=float) / GAMMA_RATE)
    if family == "mt":
        return None
    raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")


@dataclass(frozen=True)
class LogLinearSpec:
    family: str
    T: int
    histories: np.ndarray  # (2^T - 1, T), ordered as data.nonzero_histories
    design: np.ndarray  # intercept, x_1..x_T[, h(j)]

    @property
    def h(self):
        return h_column(self.family)

    @property
    def names(self) -> list[str]:
        cols = ["b0"] + [f"b{t + 1}" for t in range(self.T)]
        return cols + (["tau"] if self.family != "mt" else [])


def build_design(T: int, family: str) -> LogLinearSpec:
    """Design matrix over the nonzero histories for ``family``."""
    if T < 2:
        raise ValueError("T must be >= 2")
    h = h_column(family)
    X = nonzero_histories(T).astype(float)
    cols = [np.ones((X.shape[0], 1)), X]
    if h is not None:
        cols.append(h(X.sum(axis=1))[:, None])
    return LogLinearSpec(family, T, X.astype(np.int8), np.hstack(cols))


@dataclass(frozen=True)
class LogLinearFit:
    family: str
    T: int
    m: int
    coefficients: np.ndarray
    covariance: np.ndarray
    fitted: np.ndarray
    observed: np.ndarray
    iterations: int
    names: tuple

    @property
    def n0_hat(self) -> float:
        """Fitted zero-cell count ``exp(b0)``."""
        return float(math.exp(self.coefficients[0]))

    @property
    def N_hat(self) -> float:
        return self.m + self.n0_hat

    @property
    def se_b0(self) -> float:
        return float(math.sqrt(self.covariance[0, 0]))

    @property
    def ci95(self) -> tuple[float, float]:
        """``m + exp(b0 ± 1.96 se)``: a lognormal interval on the zero cell."""
        s = Z95 * self.se_b0
        return (self.m + self.n0_hat * math.exp(-s), self.m + self.n0_hat * math.exp(s))

    @property
    def beta(self) -> np.ndarray:
        return self.coefficients[1 : self.T + 1]

    @property
    def tau(self) -> float | None:
        return float(self.coefficients[-1]) if self.family != "mt" else None

    def deviance(self) -> float:
        y, mu = self.observed, self.fitted
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(y > 0, y * np.log(y / mu), 0.0)
        return float(2.0 * np.sum(term - (y - mu)))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "T": self.T,
            "m": self.m,
            "coefficients": dict(zip(self.names, map(float, self.coefficients))),
            "covariance": self.covariance.tolist(),
            "N_hat": self.N_hat,
            "ci95": list(self.ci95),
            "iterations": self.iterations,
            "deviance": self.deviance(),
        }


def _poisson_loglik(X, y, b):
    eta = X @ b
    return float(np.dot(y, eta) - np.exp(eta).sum())


def fit_irls(spec: LogLinearSpec, cell_counts) -> LogLinearFit:
    """Poisson maximum likelihood by damped Newton iterations.

    ``cell_counts`` is a :class:`CaptureDataset`, a mapping from bit strings
    to counts, or a vector aligned with ``spec.histories``.  Zero cells stay
    in the likelihood.
    """
    if isinstance(cell_counts, CaptureDataset):
        if cell_counts.T != spec.T:
            raise ValueError("dataset and design disagree on T")
        y = cell_counts.count_vector().astype(float)
    elif isinstance(cell_counts, dict):
        keys = ["".join(map(str, row)) for row in spec.histories]
        y = np.array([cell_counts.get(k, 0) for k in keys], dtype=float)
    else:
        y = np.asarray(cell_counts, dtype=float)
    X = spec.design
    if y.shape != (X.shape[0],) or np.any(y < 0):
        raise ValueError("cell counts must be a nonnegative vector over the nonzero histories")
    if np.count_nonzero(y) < X.shape[1]:
        raise NonConvergence(f"{np.count_nonzero(y)} nonzero cells cannot identify {X.shape[1]} parameters")
    # start from least squares on log counts
    b, *_ = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)
    ll = _poisson_loglik(X, y, b)
    for it in range(1, MAX_ITER + 1):
        mu = np.exp(X @ b)
        grad = X.T @ (y - mu)
        info = X.T @ (mu[:, None] * X)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularInformation(str(exc)) from exc
        t = 1.0
        while True:
            cand = b + t * step
            ll_new = _poisson_loglik(X, y, cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            t /= 2.0
            if t < 1e-10:
                raise NonConvergence("step halving failed")
        b, ll = cand, ll_new
        mu = np.exp(X @ b)
        grad = X.T @ (y - mu)
        if np.linalg.norm(grad) < GRAD_TOL:
            break
    else:
        raise NonConvergence(f"gradient norm {np.linalg.norm(grad):.3g} after {MAX_ITER} iterations")
    info = X.T @ (mu[:, None] * X)
    if np.linalg.cond(info) > 1e14:
        raise SingularInformation("Fisher information is numerically singular")
    cov = np.linalg.inv(info)
    return LogLinearFit(
        family=spec.family,
        T=spec.T,
        m=int(round(y.sum())),
        coefficients=b,
        covariance=cov,
        fitted=mu,
        observed=y,
        iterations=it,
        names=tuple(spec.names),
    )


def fit_family(dataset: CaptureDataset, family: str) -> LogLinearFit:
    return fit_irls(build_design(dataset.T, family), dataset)


# -- N_alpha from the fitted mixing law ------------------------------------


def _inv_pi_zeta(theta, beta):
    """1 / pi_zeta(theta) = prod_t (1 + exp(theta + b_t)), logit link."""
    theta = np.asarray(theta, dtype=float)
    return np.exp(np.logaddexp(0.0, theta[..., None] + beta).sum(axis=-1))


def unseen_mass_below(fit: LogLinearFit, theta_cut: float) -> float:
    """``int_{theta <= theta_cut} (1/pi_zeta) dG0`` for the fitted G0."""
    beta = fit.beta
    tau = fit.tau
    if fit.family == "mt":
        return float(_inv_pi_zeta(0.0, beta)) if theta_cut >= 0 else 0.0
    if tau is None or not tau > 0:
        raise InvalidMixingEstimate(f"{fit.family}: fitted tau = {tau} does not define G0")
    if fit.family == "indirect_poisson":
        log2 = math.log(2.0)
        kmax = math.floor(theta_cut / log2) if theta_cut >= 0 else -1
        if kmax < 0:
            return 0.0
        k = np.arange(kmax + 1)
        return float(np.sum(stats.poisson.pmf(k, tau) * _inv_pi_zeta(k * log2, beta)))
    if fit.family == "darroch":
        sd = math.sqrt(tau)

        def f(th):
            return stats.norm.pdf(th, scale=sd) * _inv_pi_zeta(th, beta)

        lo = -40.0 * sd
        if theta_cut <= lo:
            return 0.0
        return _quad(f, lo, theta_cut, breaks=(0.0,))
    # indirect_gamma: theta = -X, X ~ Gamma(tau, rate 3.5); theta <= cut iff X >= -cut
    x_lo = max(0.0, -theta_cut)

    def g(x):
        return stats.gamma.pdf(x, tau, scale=1.0 / GAMMA_RATE) * _inv_pi_zeta(-x, beta)

    hi = stats.gamma.isf(1e-16, tau, scale=1.0 / GAMMA_RATE)
    if x_lo >= hi:
        return 0.0
    return _quad(g, x_lo, hi, breaks=())


def _quad(f, lo, hi, breaks):
    pts = [b for b in breaks if lo < b < hi]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, lo, hi, points=pts or None, epsabs=0.0, epsrel=1e-10, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureFailure(str(exc)) from exc
    if not np.isfinite(val):
        raise QuadratureFailure("non-finite integral")
    return float(val)


def estimate_n_alpha_parametric(fit: LogLinearFit, alpha: float, link: str = "logit") -> float:
    """``N_hat - exp(b0) int_{p(theta) <= alpha} (1/pi_zeta) dG0``.

    The fitted heterogeneity law is G* ∝ G0 / pi_zeta, so units with
    ``p(theta) <= alpha`` number ``exp(b0) int_{p <= alpha} dG0 / pi_zeta``
    in expectation.  At alpha = 0 the subtracted term vanishes and the
    result is ``N_hat`` exactly.  Only the logit link matches the model.
    """
    if link != "logit":
        raise ValueError("the log-linear families are defined under the logit link")
    if alpha <= 0.0:
        return fit.N_hat
    if alpha >= 1.0:
        return 0.0
    cut = alpha_threshold_theta_general(alpha, fit.beta, link="logit")
    below = fit.n0_hat * unseen_mass_below(fit, cut)
    return float(min(max(fit.N_hat - below, 0.0), fit.N_hat))

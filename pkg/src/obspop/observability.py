"""Links, the theta -> p observability map, alpha thresholds and coverage bounds.

``capture_prob`` maps an individual effect ``theta`` and list effects
``beta`` to the probability of appearing on at least one list.  The normal
CDF and quantile come from ``scipy.special`` (Cody's rational
approximations; ndtr/ndtri are accurate to a few ulp over the double range).

Defaults: the Gibbs sampler uses the probit link; the closed-form threshold
and induced-density helpers are for the logit link.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, log_expit, log_ndtr, logit, ndtr, ndtri
from scipy.optimize import brentq

LINKS = ("probit", "logit")
_P_LO = 1e-300
_P_HI = 1.0 - 1e-16


class AlphaOutOfRange(ValueError):
    pass


class UnattainableTarget(ValueError):
    pass


def _check_link(link):
    if link not in LINKS:
        raise ValueError(f"link must be one of {LINKS}, got {link!r}")


def inverse_link(x, link="probit"):
    """phi^{-1}: R -> (0, 1)."""
    _check_link(link)
    return ndtr(x) if link == "probit" else expit(x)


def link_fn(p, link="probit"):
    """phi: (0, 1) -> R."""
    _check_link(link)
    return ndtri(p) if link == "probit" else logit(p)


def log_miss_prob(x, link="probit"):
    """log(1 - phi^{-1}(x)), computed without cancellation."""
    _check_link(link)
    return log_ndtr(-np.asarray(x, dtype=float)) if link == "probit" else log_expit(-np.asarray(x, dtype=float))


def capture_prob(theta, beta, link="probit"):
    """Probability of at least one capture, ``1 - prod_t {1 - phi^{-1}(theta + beta_t)}``.

    ``theta`` may be an array; ``beta`` is the length-T vector of list effects.
    """
    theta = np.asarray(theta, dtype=float)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    log_miss = log_miss_prob(theta[..., None] + beta, link).sum(axis=-1)
    p = -np.expm1(log_miss)
    return p if p.ndim else float(p)


def clamp_prob(p):
    """Clamp into [1e-300, 1 - 1e-16]; for reporting paths only."""
    return np.clip(p, _P_LO, _P_HI)


def alpha_threshold_theta(alpha, beta, T):
    """Smallest theta that is alpha-observable under the logit link with equal list effects.

    ``theta* = log[(1/(1-alpha))^{1/T} - 1] - beta``.
    """
    if not 0.0 < alpha < 1.0:
        raise AlphaOutOfRange(f"alpha must be in (0, 1), got {alpha}")
    if T < 1:
        raise ValueError("T must be >= 1")
    # (1-alpha)^{-1/T} - 1 = expm1(-log1p(-alpha)/T), stable for small alpha
    return math.log(math.expm1(-math.log1p(-alpha) / T)) - beta


def alpha_threshold_theta_general(alpha, beta, link="probit", lo=-60.0, hi=60.0):
    """Root of ``capture_prob(theta, beta) = alpha`` for any list effects and link."""
    if not 0.0 < alpha < 1.0:
        raise AlphaOutOfRange(f"alpha must be in (0, 1), got {alpha}")
    f = lambda th: capture_prob(th, beta, link) - alpha  # noqa: E731
    return brentq(f, lo - np.max(beta), hi - np.min(beta), xtol=1e-13, rtol=1e-14)


def thm1_bound(alpha, eps, N):
    """Uniform lower bound ``1 - (1 - alpha*eps)^N`` on seeing data in a
    non-negligible alpha-observable interval."""
    if not (0.0 <= alpha <= 1.0 and 0.0 <= eps <= 1.0):
        raise ValueError("alpha and eps must lie in [0, 1]")
    if N < 0:
        raise ValueError("N must be nonnegative")
    x = alpha * eps
    if x >= 1.0:
        return 1.0 if N > 0 else 0.0
    return float(-math.expm1(N * math.log1p(-x)))


def alpha_for_target(prob_target, eps, N):
    """Smallest alpha whose bound ``thm1_bound(alpha, eps, N)`` reaches ``prob_target``.

    Closed form ``alpha = (1 - (1 - q)^{1/N}) / eps``.
    """
    if not 0.0 < prob_target < 1.0:
        raise ValueError(f"target must be in (0, 1), got {prob_target}")
    if eps <= 0 or N < 1:
        raise UnattainableTarget("eps > 0 and N >= 1 are needed for a positive bound")
    x = -math.expm1(math.log1p(-prob_target) / N)
    alpha = x / eps
    if alpha > 1.0:
        raise UnattainableTarget(
            f"even alpha=1 only reaches {thm1_bound(1.0, eps, N):.3g} < {prob_target}"
        )
    return alpha


def eta_of_theta(theta, beta, T):
    """Logit-scale observability ``eta = log[(1 + e^{theta+beta})^T - 1]`` (logit link, equal beta)."""
    x = np.asarray(theta, dtype=float) + beta
    # T * softplus(x), then log(expm1(.)), both stable
    s = T * np.logaddexp(0.0, x)
    return _log_expm1(s)


def theta_of_eta(eta, beta, T):
    """Inverse of :func:`eta_of_theta`: ``log[(1 + e^eta)^{1/T} - 1] - beta``."""
    u = np.logaddexp(0.0, np.asarray(eta, dtype=float)) / T
    return _log_expm1(u) - beta


def _log_expm1(s):
    """log(e^s - 1) for s > 0 without overflow or cancellation."""
    s = np.asarray(s, dtype=float)
    big = s > 30
    out = np.empty_like(s)
    out[big] = s[big] + np.log1p(-np.exp(-s[big]))
    out[~big] = np.log(np.expm1(s[~big]))
    return out if out.ndim else float(out)


def induced_density_logit(eta, g_star_density, beta, T):
    """Density of ``eta = logit(p)`` induced by a density ``g*`` on theta.

    Logit link and a common list effect ``beta``; ``g_star_density`` is a
    vectorised callable on theta.
    """
    eta = np.asarray(eta, dtype=float)
    u = np.logaddexp(0.0, eta) / T
    # d theta / d eta = (1/T) e^eta (1+e^eta)^{1/T - 1} / ((1+e^eta)^{1/T} - 1)
    log_jac = -math.log(T) + eta - np.logaddexp(0.0, eta) + u - np.log(-np.expm1(-u)) - u
    theta = theta_of_eta(eta, beta, T)
    return np.exp(log_jac) * g_star_density(theta)

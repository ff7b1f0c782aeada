"""Estimators of N and N_alpha from directly observed, length-biased p values.

When each individual's overall capture probability p is known for the
observed units, the observed p values are a sample from
``G(dp) = p F(dp) / E_F(P)`` and ``E_G(1/P) = 1 / E_F(P)``.  Plugging an
estimate of G into ``N = m E_G(1/P)`` gives the estimators here:

* empirical measure: ``sum_i 1/p_i`` over observed units with ``p_i > alpha``;
* histogram: ``sum_j B_j / h * log(upper_j / lower_j)`` over bins tiling
  ``[alpha, 1]`` (the per-bin integral of 1/p is taken exactly).

``risk_study`` runs Monte Carlo replicates of these against known truths;
``theoretical_mse`` gives the matching closed-form risks.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma, gammaln

from .fspec import FSpec
from .stochastic import make_rng

ESTIMATORS = ("empirical", "histogram")


class EmptyAfterThreshold(UserWarning):
    """No observed p value exceeds alpha; the estimate is 0."""


class MassAtZeroBin(ArithmeticError):
    """Observed data in the bin touching p = 0, where the 1/p integral diverges."""


# -- penalized MLE ---------------------------------------------------------


def penalized_loglik(N, m, p):
    """Binomial log-likelihood in continuous N with the -1/2 log{N/(N-m)} correction."""
    N = np.asarray(N, dtype=float)
    return (
        gammaln(N + 1) - gammaln(m + 1) - gammaln(N - m + 1)
        + m * np.log(p) + (N - m) * np.log1p(-p)
        - 0.5 * np.log(N / (N - m))
    )


def _score(N, m, p):
    return digamma(N + 1) - digamma(N + 1 - m) + m / (2.0 * N * (N - m)) + math.log1p(-p)


def penalized_mle_N(m: int, p_bar: float) -> float:
    """Maximizer over N > m of :func:`penalized_loglik`; approximately ``m / p_bar``.

    The score is +inf as N -> m+ and tends to log(1 - p) < 0, so the root
    is bracketed on ``(m, 2 m / p_bar + 10]``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not 0.0 < p_bar < 1.0:
        raise ValueError(f"p_bar must be in (0, 1), got {p_bar}")
    lo = m * (1.0 + 1e-15) + 1e-300
    hi = 2.0 * m / p_bar + 10.0
    while _score(hi, m, p_bar) > 0:
        hi *= 2.0
    if _score(lo, m, p_bar) <= 0:  # p_bar so close to 1 that the maximizer sits at m
        return float(m)
    return float(brentq(_score, lo, hi, args=(m, p_bar), xtol=1e-12 * m, rtol=1e-15, maxiter=500))


# -- estimators ------------------------------------------------------------


def empirical_estimator(p_obs, alpha: float = 0.0) -> float:
    """``sum 1/p_i`` over observed ``p_i > alpha``; ``alpha = 0`` estimates N."""
    p = np.asarray(p_obs, dtype=float)
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("observed p values must lie in (0, 1]")
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must be in [0, 1)")
    keep = p[p > alpha]
    if keep.size == 0:
        warnings.warn(f"no observed p exceeds alpha={alpha}", EmptyAfterThreshold, stacklevel=2)
        return 0.0
    return float(np.sum(1.0 / keep))


def histogram_bins(h: float, alpha: float = 0.0) -> np.ndarray:
    """Bin edges tiling [alpha, 1] with ``round((1-alpha)/h)`` equal bins."""
    n_bins = max(1, int(round((1.0 - alpha) / h)))
    return np.linspace(alpha, 1.0, n_bins + 1)


def histogram_estimator(p_obs, h: float, alpha: float = 0.0) -> float:
    """``m * int p^{-1} g_hat(p) dp`` with ``g_hat`` the histogram of observed p on [alpha, 1].

    ``h`` is adjusted so an integer number of bins tiles ``[alpha, 1]``.
    Raises :class:`MassAtZeroBin` when ``alpha = 0`` and the first bin is occupied.
    """
    if h <= 0:
        raise ValueError("bin width must be positive")
    p = np.asarray(p_obs, dtype=float)
    p = p[p > alpha]
    if p.size == 0:
        warnings.warn(f"no observed p exceeds alpha={alpha}", EmptyAfterThreshold, stacklevel=2)
        return 0.0
    edges = histogram_bins(h, alpha)
    counts, _ = np.histogram(p, bins=edges)
    width = edges[1] - edges[0]
    occupied = counts > 0
    if alpha == 0.0 and counts[0] > 0:
        raise MassAtZeroBin(f"{counts[0]} observation(s) in [0, {width:.3g}), where 1/p is not integrable")
    lo, hi = edges[:-1][occupied], edges[1:][occupied]
    return float(np.sum(counts[occupied] / width * np.log(hi / lo)))


# -- theory ----------------------------------------------------------------


class TheoreticalMSE(NamedTuple):
    value: float
    reason: str | None = None
    bound: float | None = None


def theoretical_mse(F: FSpec, N: float, estimator: str = "empirical", alpha: float = 0.0) -> TheoreticalMSE:
    """Closed-form risk of the estimators of ``N_alpha`` (``alpha = 0``: of N).

    empirical: ``N_a {E_{F_a}(1/P) - 1}``, with ``N_a = N P(P > alpha)``;
    for ``alpha > 0`` ``bound`` holds ``N_a (1/alpha - 1)``.

    histogram: the small-bin variance ``N_a [E_{F_a}(1/P) - 1 / E_{F_a}(P)]``.
    This is the variance given ``m = N_a E_{F_a}(P)`` observations; letting m
    vary adds ``N_a {1/E_{F_a}(P) - 1}`` and recovers the empirical-measure value.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}")
    mass = F.sf(alpha) if alpha > 0 else 1.0
    n_a = N * mass
    bound = n_a * (1.0 / alpha - 1.0) if alpha > 0 else None
    if n_a == 0:
        return TheoreticalMSE(0.0, "no mass above alpha", bound)
    inv = F.conditional_moment(-1, alpha)
    if math.isinf(inv):
        return TheoreticalMSE(math.inf, "E_F(1/P) diverges: F has too much mass near 0", bound)
    if estimator == "empirical":
        return TheoreticalMSE(n_a * (inv - 1.0), None, bound)
    return TheoreticalMSE(n_a * (inv - 1.0 / F.conditional_moment(1, alpha)), None, bound)


# -- Monte Carlo risk ------------------------------------------------------


@dataclass
class RiskReport:
    """Replicate estimates against truths for one (estimator, alpha, target)."""

    estimator: str
    alpha: float
    target: str
    estimates: np.ndarray
    truths: np.ndarray
    n_failed: int = 0
    coverage: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def _ok(self):
        return np.isfinite(self.estimates)

    @property
    def errors(self) -> np.ndarray:
        ok = self._ok
        return self.estimates[ok] - self.truths[ok]

    @property
    def mse(self) -> float:
        return float(np.mean(self.errors**2))

    @property
    def delta_rmse(self) -> float:
        return math.sqrt(self.mse)

    @property
    def bias(self) -> float:
        return float(np.mean(self.errors))

    @property
    def mse_se(self) -> float:
        """Monte Carlo standard error of :attr:`mse`."""
        sq = self.errors**2
        return float(np.std(sq, ddof=1) / math.sqrt(sq.size))

    def summary(self) -> dict:
        out = {
            "estimator": self.estimator,
            "alpha": self.alpha,
            "target": self.target,
            "replicates": int(self.estimates.size),
            "failed": self.n_failed,
            "delta_rmse": self.delta_rmse,
            "mse": self.mse,
            "mse_se": self.mse_se,
            "bias": self.bias,
            "mean_truth": float(np.mean(self.truths)),
        }
        if self.coverage is not None:
            out["coverage"] = self.coverage
        out.update(self.extra)
        return out


def risk_study(
    seed: int,
    F: FSpec,
    N: int,
    alphas: Sequence[float],
    R: int,
    estimators: Sequence[str] = ESTIMATORS,
    h: float | None = None,
    design: str = "population",
) -> list[RiskReport]:
    """Monte Carlo risk of the empirical / histogram estimators.

    design="population": each replicate draws ``p_1..p_N ~ F`` and observes
    unit i with probability p_i, so m is random.  Estimates of ``N_alpha``
    are scored against both the replicate's realised ``N_alpha`` and ``N``.

    design="fixed_m": each replicate observes exactly
    ``m = round(N E_F(P))`` draws from the length-biased law G; the truth
    for ``N_alpha`` is its expectation ``N P(P > alpha)``.

    Replicate r uses stream ``make_rng(seed, r, purpose="risk")``.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    for est in estimators:
        if est not in ESTIMATORS:
            raise ValueError(f"unknown estimator {est!r}")
    if design not in ("population", "fixed_m"):
        raise ValueError("design must be 'population' or 'fixed_m'")
    alphas = [float(a) for a in alphas]
    h = h if h is not None else N ** -0.6
    est_vals = {(e, a): np.empty(R) for e in estimators for a in alphas}
    truth_a = {a: np.empty(R) for a in alphas}
    fails = {(e, a): 0 for e in estimators for a in alphas}
    m_fixed = int(round(N * F.mean()))
    for r in range(R):
        rng = make_rng(seed, r, purpose="risk")
        if design == "population":
            p = F.sample(rng, N)
            p_obs = p[rng.random(N) < p]
            for a in alphas:
                truth_a[a][r] = np.count_nonzero(p > a)
        else:
            p_obs = F.sample_length_biased(rng, m_fixed)
            for a in alphas:
                truth_a[a][r] = N * (F.sf(a) if a > 0 else 1.0)
        for e in estimators:
            for a in alphas:
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", EmptyAfterThreshold)
                        if e == "empirical":
                            v = empirical_estimator(p_obs, a)
                        else:
                            v = histogram_estimator(p_obs, h, a)
                except MassAtZeroBin:
                    v = math.nan
                    fails[(e, a)] += 1
                est_vals[(e, a)][r] = v
    reports = []
    for e in estimators:
        for a in alphas:
            extra = {"design": design, "N": N, "h": h if e == "histogram" else None}
            th = theoretical_mse(F, N, e, a)
            extra["theory_mse"] = th.value
            extra["theory_bound"] = th.bound
            reports.append(RiskReport(e, a, "N_alpha", est_vals[(e, a)], truth_a[a].copy(), fails[(e, a)], extra=extra))
            reports.append(RiskReport(e, a, "N", est_vals[(e, a)], np.full(R, float(N)), fails[(e, a)], extra=dict(extra)))
    return reports


def reports_to_csv(reports: Sequence[RiskReport]) -> str:
    """One row per (report, replicate)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "alpha", "target", "replicate", "estimate", "truth"])
    for rep in reports:
        for i, (e, t) in enumerate(zip(rep.estimates, rep.truths)):
            w.writerow([rep.estimator, rep.alpha, rep.target, i, repr(float(e)), repr(float(t))])
    return buf.getvalue()


def reports_to_json(reports: Sequence[RiskReport]) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None if math.isnan(v) else "inf"
        return v

    rows = [{k: clean(v) for k, v in r.summary().items()} for r in reports]
    return json.dumps(rows, indent=2, sort_keys=True)

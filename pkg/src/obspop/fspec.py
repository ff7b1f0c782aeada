"""Distributions F of the overall capture probability P on (0, 1].

Three kinds: ``Beta(a, b)``, finitely many atoms, and a piecewise-constant
histogram density on equal bins of [0, 1].  Each knows its partial moments
``int_{(alpha,1]} p^k dF`` in closed form, how to sample P, and how to
sample the length-biased law ``G(dp) = p F(dp) / E_F(P)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, stats
from scipy.special import beta as beta_fn
from scipy.special import betainc

QUAD_DELTA = 1e-12
QUAD_TOL = 1e-9


class UnsupportedF(ValueError):
    pass


@dataclass(frozen=True)
class FSpec:
    """A distribution of P on (0, 1].

    Use the constructors :meth:`beta`, :meth:`atoms` and :meth:`histogram`.
    """

    kind: str
    a: float = 0.0
    b: float = 0.0
    points: tuple = ()
    weights: tuple = ()
    heights: tuple = ()

    @classmethod
    def beta(cls, a: float, b: float) -> "FSpec":
        if a <= 0 or b <= 0:
            raise UnsupportedF("Beta parameters must be positive")
        return cls("beta", a=float(a), b=float(b))

    @classmethod
    def atoms(cls, points: Sequence[float], weights: Sequence[float]) -> "FSpec":
        p = np.asarray(points, dtype=float)
        w = np.asarray(weights, dtype=float)
        if p.shape != w.shape or p.size == 0:
            raise UnsupportedF("atoms need matching, nonempty points and weights")
        if np.any(p <= 0) or np.any(p > 1):
            raise UnsupportedF("atoms must lie in (0, 1]")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise UnsupportedF("atom weights must be nonnegative and sum to 1")
        return cls("atoms", points=tuple(p), weights=tuple(w))

    @classmethod
    def histogram(cls, heights: Sequence[float]) -> "FSpec":
        """Density equal to ``heights[j]`` on the j-th of ``len(heights)`` equal bins."""
        hts = np.asarray(heights, dtype=float)
        if hts.ndim != 1 or hts.size == 0 or np.any(hts < 0):
            raise UnsupportedF("histogram heights must be a nonempty nonnegative vector")
        if abs(hts.sum() / hts.size - 1.0) > 1e-12:
            raise UnsupportedF("histogram density must integrate to 1")
        return cls("histogram", heights=tuple(hts))

    # -- basic quantities -------------------------------------------------

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, len(self.heights) + 1)

    def pdf(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "beta":
            return stats.beta.pdf(p, self.a, self.b)
        if self.kind == "histogram":
            hts = np.asarray(self.heights)
            j = np.clip((p * hts.size).astype(int), 0, hts.size - 1)
            return np.where((p >= 0) & (p <= 1), hts[j], 0.0)
        raise UnsupportedF("atomic F has no density")

    def sf(self, alpha: float) -> float:
        """P(P > alpha)."""
        return self.partial_moment(0, alpha)

    def partial_moment(self, k: float, alpha: float = 0.0) -> float:
        """``int_{(alpha, 1]} p^k F(dp)``, ``+inf`` when divergent."""
        if self.kind == "atoms":
            p = np.asarray(self.points)
            w = np.asarray(self.weights)
            keep = p > alpha
            return float(np.sum(w[keep] * p[keep] ** k))
        if self.kind == "beta":
            a, b = self.a, self.b
            if a + k > 0:
                tail = 1.0 - betainc(a + k, b, alpha) if alpha > 0 else 1.0
                return float(beta_fn(a + k, b) / beta_fn(a, b) * tail)
            if alpha <= 0:
                return float("inf")
            return self._quad_moment(k, alpha)
        # histogram
        edges = self.edges
        total = 0.0
        for lo, hi, ht in zip(edges[:-1], edges[1:], self.heights):
            lo = max(lo, alpha)
            if hi <= lo or ht == 0:
                continue
            if k == -1:
                if lo == 0:
                    return float("inf")
                total += ht * np.log(hi / lo)
            elif k + 1 <= 0 and lo == 0:
                return float("inf")
            else:
                total += ht * (hi ** (k + 1) - lo ** (k + 1)) / (k + 1)
        return float(total)

    def _quad_moment(self, k, alpha):
        lo = max(alpha, QUAD_DELTA)
        val, _ = integrate.quad(
            lambda p: p**k * self.pdf(p), lo, 1.0, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200
        )
        return float(val)

    def partial_moment_quad(self, k: float, alpha: float = 0.0) -> float:
        """Same as :meth:`partial_moment` by adaptive Gauss-Kronrod on ``(max(alpha, 1e-12), 1]``.

        Kept as an independent numerical cross-check of the closed forms.
        """
        if self.kind == "atoms":
            return self.partial_moment(k, alpha)
        if self.kind == "histogram":
            edges = self.edges
            pts = [e for e in edges if max(alpha, QUAD_DELTA) < e < 1.0]
            lo = max(alpha, QUAD_DELTA)
            val, _ = integrate.quad(
                lambda p: p**k * self.pdf(p), lo, 1.0, points=pts or None,
                epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=max(200, 4 * len(pts)),
            )
            return float(val)
        return self._quad_moment(k, alpha)

    def conditional_moment(self, k: float, alpha: float = 0.0) -> float:
        """``E_F(P^k | P > alpha)``."""
        mass = self.partial_moment(0, alpha)
        if mass <= 0:
            return float("nan")
        return self.partial_moment(k, alpha) / mass

    def mean(self) -> float:
        return self.partial_moment(1, 0.0)

    # -- sampling ---------------------------------------------------------

    def sample(self, rng, n: int) -> np.ndarray:
        if self.kind == "beta":
            return rng.beta(self.a, self.b, n)
        if self.kind == "atoms":
            idx = rng.choice(len(self.points), size=n, p=np.asarray(self.weights))
            return np.asarray(self.points)[idx]
        hts = np.asarray(self.heights)
        j = rng.choice(hts.size, size=n, p=hts / hts.sum())
        return (j + rng.random(n)) / hts.size

    def sample_length_biased(self, rng, n: int) -> np.ndarray:
        """Draws from ``G(dp) = p F(dp) / E_F(P)``."""
        if self.kind == "beta":
            # p * Beta(a, b) density is proportional to Beta(a + 1, b)
            return rng.beta(self.a + 1.0, self.b, n)
        if self.kind == "atoms":
            p = np.asarray(self.points)
            w = np.asarray(self.weights) * p
            idx = rng.choice(p.size, size=n, p=w / w.sum())
            return p[idx]
        if self.kind == "histogram":
            edges = self.edges
            lo, hi = edges[:-1], edges[1:]
            mass = np.asarray(self.heights) * (hi**2 - lo**2) / 2.0
            j = rng.choice(mass.size, size=n, p=mass / mass.sum())
            # density proportional to p within a bin: inverse CDF on p^2
            u = rng.random(n)
            return np.sqrt(lo[j] ** 2 + u * (hi[j] ** 2 - lo[j] ** 2))
        raise UnsupportedF(f"cannot length-bias F of kind {self.kind!r}")

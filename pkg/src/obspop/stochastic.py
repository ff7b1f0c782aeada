"""Seeded random streams and the samplers used by the simulators and Gibbs kernel.

Streams
-------
Every stream is a ``numpy.random.Generator`` over PCG64 seeded by a
``SeedSequence``.  A stream for replicate ``r`` and chain ``c`` of a study
with root seed ``s`` is ``SeedSequence(s, spawn_key=(r, c, purpose))`` where
``purpose`` is a small integer naming what the stream is for (see
:data:`PURPOSE`).  Distinct spawn keys give statistically independent
streams, and the rule depends only on integers, so it is stable across
platforms and numpy versions that keep the PCG64/SeedSequence contract.

Distribution conventions
------------------------
* ``sample_gamma(rng, shape, rate)`` uses the *rate* parametrisation.
* ``sample_negative_binomial(rng, r, s)`` counts failures before the
  ``r``-th success with success probability ``s``; mean ``r(1-s)/s``.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri

PURPOSE = {"population": 0, "fit": 1, "chain": 2, "risk": 3, "misc": 9}

TAIL_SWITCH = 4.0


class NonPositiveScale(ValueError):
    pass


class NonPositiveParameter(ValueError):
    pass


class InvalidProbability(ValueError):
    pass


class ZeroWeightVector(ValueError):
    pass


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


def make_rng(seed: int, replicate: int = 0, chain: int = 0, purpose: str = "misc") -> np.random.Generator:
    """Independent stream for ``(seed, replicate, chain, purpose)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), int(chain), PURPOSE[purpose]))
    return np.random.Generator(np.random.PCG64(ss))


def substream_seed(seed: int, replicate: int, chain: int = 0, purpose: str = "misc") -> int:
    """A 64-bit integer summarising a substream, for manifests."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replicate), int(chain), PURPOSE[purpose]))
    return int(ss.generate_state(2, np.uint32).astype(np.uint64) @ np.array([1 << 32, 1], dtype=np.uint64))


def sample_normal(rng, mean=0.0, sd=1.0, size=None):
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0) or np.any(np.isnan(sd)):
        raise NonPositiveScale(f"sd must be positive, got {sd}")
    # sd == 0 is the degenerate limit: return the mean
    return mean + sd * rng.standard_normal(size if size is not None else np.broadcast(mean, sd).shape or None)


def _robert_tail(rng, a):
    """Exponential-proposal rejection for N(0,1) restricted to (a, inf), a > 0."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    todo = np.arange(a.size)
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    while todo.size:
        z = a[todo] + rng.standard_exponential(todo.size) / lam[todo]
        ok = rng.random(todo.size) <= np.exp(-0.5 * (z - lam[todo]) ** 2)
        out[todo[ok]] = z[ok]
        todo = todo[~ok]
    return out


def std_normal_above(rng, a):
    """Draws from N(0,1) conditioned on ``Z > a`` (elementwise over ``a``).

    Inverse CDF on the upper tail for ``a <= 4``; Robert's exponential
    rejection beyond, where the inverse CDF runs out of precision.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    out = np.empty(a.shape)
    tail = a > TAIL_SWITCH
    body = ~tail
    if body.any():
        u = 1.0 - rng.random(int(body.sum()))
        out[body] = -ndtri(u * ndtr(-a[body]))
    if tail.any():
        out[tail] = _robert_tail(rng, a[tail])
    return out


def sample_truncated_normal(rng, mean, sd, side: str, cut, size=None):
    """Normal(mean, sd) restricted to one side of ``cut``.

    ``side="right_of"`` gives draws in ``(cut, inf)``, ``"left_of"`` draws in
    ``(-inf, cut)``.  Array arguments broadcast.
    """
    mean, sd, cut = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mean, sd, cut)))
    if size is not None:
        mean, sd, cut = (np.broadcast_to(v, size) for v in (mean, sd, cut))
    if np.any(sd <= 0):
        raise NonPositiveScale("truncated normal needs sd > 0")
    a = (cut - mean) / sd
    if side == "right_of":
        z = std_normal_above(rng, a.ravel()).reshape(a.shape)
    elif side == "left_of":
        z = -std_normal_above(rng, -a.ravel()).reshape(a.shape)
    else:
        raise ValueError(f"side must be 'right_of' or 'left_of', got {side!r}")
    x = mean + sd * z
    return x if x.ndim else float(x)


def sample_beta(rng, a, b, size=None):
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise NonPositiveParameter(f"Beta parameters must be positive, got ({a}, {b})")
    return rng.beta(a, b, size)


def sample_gamma(rng, shape, rate, size=None):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise NonPositiveParameter(f"Gamma parameters must be positive, got ({shape}, {rate})")
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size)


def sample_negative_binomial(rng, r, s, size=None):
    """Failures before the ``r``-th success, success probability ``s``."""
    if not 0.0 < s <= 1.0:
        raise InvalidProbability(f"success probability must be in (0, 1], got {s}")
    if r < 1:
        raise NonPositiveParameter(f"r must be >= 1, got {r}")
    if s == 1.0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    return rng.negative_binomial(r, s, size)


def sample_multinomial(rng, n: int, weights):
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ZeroWeightVector("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ZeroWeightVector("weights are all zero")
    if n == 0:
        return np.zeros(w.size, dtype=np.int64)
    return rng.multinomial(int(n), w / total)


def precision_mean(precision, linear_term):
    """Cholesky factor and mean ``precision^{-1} @ linear_term``."""
    try:
        chol = linalg.cholesky(precision, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    mean = linalg.cho_solve((chol, True), linear_term)
    return chol, mean


def sample_mvn_from_precision(rng, precision, linear_term):
    """Draw from N(P^{-1} b, P^{-1}) given precision ``P`` and linear term ``b``."""
    P = np.asarray(precision, dtype=float)
    b = np.asarray(linear_term, dtype=float)
    chol, mean = precision_mean(P, b)
    # L L' = P  =>  x = mean + L'^{-1} z has covariance P^{-1}
    z = rng.standard_normal(b.shape[0])
    return mean + linalg.solve_triangular(chol, z, lower=True, trans="T")


def stick_weights(nu_star) -> np.ndarray:
    """Stick-breaking weights ``nu_h = nu*_h prod_{l<h} (1 - nu*_l)``."""
    nu_star = np.asarray(nu_star, dtype=float)
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - nu_star[:-1])))
    return nu_star * remaining

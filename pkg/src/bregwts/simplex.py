"""Probability-simplex toolkit: softmax/logit, entropy, KL, cross-entropy and
the scalar inequalities used by the bound checkers.

Probability vectors are plain arrays whose last axis holds the ``c`` class
probabilities.  Logit vectors have ``c - 1`` entries: the last class carries
an implicit zero logit, so ``logit(p)_i = log(p_i / p_c)``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax as _log_softmax
from scipy.special import xlogy

from .bregman import DomainError

__all__ = [
    "EPS_INT",
    "check_prob",
    "truncate",
    "complete",
    "softmax",
    "log_softmax",
    "logit",
    "entropy",
    "kl",
    "xe",
    "total_variation",
    "pinsker_slack",
    "kl_loginf_bound_slack",
    "clamp_to_interior",
]

# floor applied to model probabilities before any logarithm
EPS_INT = 1e-7
SUM_TOL = 1e-12


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def check_prob(p, interior: bool = False) -> np.ndarray:
    """Validate and return ``p`` as a float array of probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 0 or p.shape[-1] < 2:
        raise ValueError("a probability vector needs at least 2 entries")
    if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > SUM_TOL * p.shape[-1]):
        raise DomainError("not a probability vector")
    if interior and np.any(p <= 0.0):
        raise DomainError("probability vector on the simplex boundary")
    return p


def truncate(p) -> np.ndarray:
    """Drop the last class: the coordinates of the multi-class entropy."""
    return np.asarray(p, dtype=np.float64)[..., :-1]


def complete(t) -> np.ndarray:
    """Inverse of :func:`truncate`."""
    t = np.asarray(t, dtype=np.float64)
    return np.concatenate([t, 1.0 - t.sum(axis=-1, keepdims=True)], axis=-1)


def _with_zero(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z, np.zeros(z.shape[:-1] + (1,))], axis=-1)


def log_softmax(z) -> np.ndarray:
    """Log-probabilities of :func:`softmax`, computed without forming them."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    return _log_softmax(_with_zero(z), axis=-1)


def softmax(z) -> np.ndarray:
    """Map ``c - 1`` logits (implicit zero for the last class) to ``c``
    probabilities."""
    return np.exp(log_softmax(z))


def logit(p) -> np.ndarray:
    """``log(p_i / p_c)`` for ``i < c``; inverse of :func:`softmax`."""
    p = check_prob(p, interior=True)
    logp = np.log(p)
    return logp[..., :-1] - logp[..., -1:]


def entropy(p):
    p = check_prob(p)
    return _scalar(-np.sum(xlogy(p, p), axis=-1))


def kl(p, q):
    """``KL(p || q)``; ``inf`` where ``q`` vanishes on the support of ``p``."""
    p = check_prob(p)
    q = check_prob(q)
    bad = np.any((q == 0.0) & (p > 0.0), axis=-1)
    with np.errstate(divide="ignore"):
        terms = xlogy(p, p) - xlogy(p, np.where(q > 0.0, q, 1.0))
    return _scalar(np.where(bad, np.inf, np.sum(terms, axis=-1)))


def xe(p, q):
    """Cross-entropy ``-sum p log q`` (label first)."""
    p = check_prob(p)
    q = check_prob(q)
    bad = np.any((q == 0.0) & (p > 0.0), axis=-1)
    with np.errstate(divide="ignore"):
        terms = xlogy(p, np.where(q > 0.0, q, 1.0))
    return _scalar(np.where(bad, np.inf, -np.sum(terms, axis=-1)))


def total_variation(p, q):
    """Half the L1 distance, so that Pinsker reads ``TV <= sqrt(KL / 2)``."""
    p = check_prob(p)
    q = check_prob(q)
    return _scalar(0.5 * np.sum(np.abs(p - q), axis=-1))


def pinsker_slack(p, q):
    """``KL(p || q) - 2 TV(p, q)^2``, nonnegative by Pinsker's inequality."""
    tv = np.asarray(total_variation(p, q))
    return _scalar(np.asarray(kl(p, q)) - 2.0 * tv * tv)


def kl_loginf_bound_slack(p, q):
    """``sqrt(2 KL(p||q)) / min_i min(p_i, q_i) - max_i |log p_i - log q_i|``.

    Nonnegative for interior ``p, q`` (mean-value theorem plus Pinsker).
    """
    p = check_prob(p, interior=True)
    q = check_prob(q, interior=True)
    d = np.maximum(np.asarray(kl(p, q)), 0.0)
    floor = np.minimum(p.min(axis=-1), q.min(axis=-1))
    bound = np.sqrt(2.0 * d) / floor
    gap = np.max(np.abs(np.log(p) - np.log(q)), axis=-1)
    return _scalar(bound - gap)


def clamp_to_interior(p, eps: float = EPS_INT) -> np.ndarray:
    """Raise every coordinate to at least ``eps`` and renormalize.

    Coordinates below ``eps`` are pinned to exactly ``eps`` and the remaining
    mass is shared among the others in proportion to their values, repeating
    until no coordinate is left below ``eps``.  Inputs already satisfying the
    floor are returned unchanged.
    """
    p = check_prob(p)
    c = p.shape[-1]
    if not 0.0 < eps < 1.0 / c:
        raise ValueError(f"eps must lie in (0, 1/c) = (0, {1.0 / c}), got {eps}")
    if np.all(p >= eps):
        return p.copy()
    out = p.copy()
    pinned = out < eps
    touched = pinned.any(axis=-1, keepdims=True)
    for _ in range(c):
        free_mass = 1.0 - eps * pinned.sum(axis=-1, keepdims=True)
        free_sum = np.sum(np.where(pinned, 0.0, out), axis=-1, keepdims=True)
        out = np.where(pinned, eps, np.where(touched, out * free_mass / free_sum, out))
        newly = (out < eps) & ~pinned
        if not newly.any():
            break
        pinned |= newly
    return out

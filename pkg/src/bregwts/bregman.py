"""Generators of Bregman divergences and the divergence identities.

A generator is a strictly convex, differentiable function ``psi`` together with
its gradient (the *dual map*), its convex conjugate ``psi*`` and the gradient
of the conjugate, which inverts the dual map.  All five families act on the
last axis of an array and broadcast over leading axes.

Conventions
-----------
* ``psi`` is extended-real valued: outside its closed domain
  :func:`generator_value` returns ``math.inf`` (a float, so it compares and
  sums like any other value).  ``0 * log 0`` is taken as ``0`` on boundaries.
* The dual map is only defined on the open domain; asking for it anywhere else
  raises :class:`DomainError` rather than returning NaN.
* The multi-class negative entropy lives on the truncated simplex
  ``{p in (0,1)^(c-1) : sum(p) < 1}``; the dropped class probability is
  recomputed as ``1 - sum(p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, softmax, xlogy

__all__ = [
    "DomainError",
    "Generator",
    "L2",
    "NegEntropyBinary",
    "NegEntropyMulticlass",
    "Logistic",
    "ItakuraSaito",
    "make_generator",
    "generator_value",
    "dual_map",
    "inverse_dual_map",
    "legendre_value",
    "divergence",
    "dual_divergence",
    "duality_residual",
    "law_of_cosines_residual",
]

# slack allowed when reconstructing the dropped simplex coordinate
SIMPLEX_TOL = 1e-12
# default distance kept from every domain boundary when sampling test points
LATTICE_MARGIN = 1e-6


class DomainError(ValueError):
    """A point lies outside the domain on which an operation is defined."""


class Generator:
    """Base class; subclasses are immutable dataclasses.

    Subclasses implement the raw maps on arrays of shape ``(..., dim)`` and the
    three domain predicates.  The module-level functions do the validation.
    """

    kind: str = "abstract"
    dim: int = 1

    # raw maps; inputs are already validated
    def _psi(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _conj(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _conj_grad(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # domain predicates, reduced over the last axis
    def in_closed(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def in_interior(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def in_dual(self, s: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_interior(self, rng: np.random.Generator, size: int,
                        margin: float = LATTICE_MARGIN) -> np.ndarray:
        """Random interior points of shape ``(size, dim)`` kept ``margin``
        away from every boundary."""
        raise NotImplementedError


@dataclass(frozen=True)
class L2(Generator):
    """``psi(x) = |x|^2 / 2``; self-dual."""

    dim: int = 1
    kind = "L2"

    def _psi(self, x):
        return 0.5 * np.sum(x * x, axis=-1)

    def _grad(self, x):
        return x.copy()

    def _conj(self, s):
        return 0.5 * np.sum(s * s, axis=-1)

    def _conj_grad(self, s):
        return s.copy()

    def in_closed(self, x):
        return np.all(np.isfinite(x), axis=-1)

    in_interior = in_closed
    in_dual = in_closed

    def sample_interior(self, rng, size, margin=LATTICE_MARGIN):
        return rng.uniform(-5.0, 5.0, size=(size, self.dim))


@dataclass(frozen=True)
class NegEntropyBinary(Generator):
    """Negative binary entropy, coordinatewise; induces the Bernoulli KL."""

    dim: int = 1
    kind = "NegEntropyBinary"

    def _psi(self, p):
        return np.sum(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p), axis=-1)

    def _grad(self, p):
        return np.log(p) - np.log1p(-p)

    def _conj(self, s):
        return np.sum(np.logaddexp(0.0, s), axis=-1)

    def _conj_grad(self, s):
        return expit(s)

    def in_closed(self, p):
        return np.all((p >= 0.0) & (p <= 1.0), axis=-1)

    def in_interior(self, p):
        return np.all((p > 0.0) & (p < 1.0), axis=-1)

    def in_dual(self, s):
        return np.all(np.isfinite(s), axis=-1)

    def sample_interior(self, rng, size, margin=LATTICE_MARGIN):
        return rng.uniform(margin, 1.0 - margin, size=(size, self.dim))


@dataclass(frozen=True)
class NegEntropyMulticlass(Generator):
    """Negative Shannon entropy of a ``c``-class distribution, written in the
    first ``c - 1`` coordinates.  The dual map is the logit against the last
    class and the conjugate is log-sum-exp with an implicit zero logit."""

    c: int = 3
    kind = "NegEntropyMulticlass"

    def __post_init__(self):
        if self.c < 2:
            raise ValueError(f"need at least 2 classes, got c={self.c}")

    @property
    def dim(self) -> int:  # type: ignore[override]
        return self.c - 1

    @staticmethod
    def last(p: np.ndarray) -> np.ndarray:
        """Probability of the dropped class, clipped within ``SIMPLEX_TOL``."""
        pc = 1.0 - np.sum(p, axis=-1)
        return np.where((pc < 0.0) & (pc > -SIMPLEX_TOL), 0.0, pc)

    def _psi(self, p):
        pc = self.last(p)
        return np.sum(xlogy(p, p), axis=-1) + xlogy(pc, pc)

    def _grad(self, p):
        return np.log(p) - np.log(self.last(p))[..., None]

    def _conj(self, s):
        zero = np.zeros(s.shape[:-1] + (1,))
        return logsumexp(np.concatenate([s, zero], axis=-1), axis=-1)

    def _conj_grad(self, s):
        zero = np.zeros(s.shape[:-1] + (1,))
        return softmax(np.concatenate([s, zero], axis=-1), axis=-1)[..., :-1]

    def in_closed(self, p):
        return np.all(p >= 0.0, axis=-1) & (np.sum(p, axis=-1) <= 1.0 + SIMPLEX_TOL)

    def in_interior(self, p):
        return np.all(p > 0.0, axis=-1) & (self.last(p) > 0.0)

    def in_dual(self, s):
        return np.all(np.isfinite(s), axis=-1)

    def sample_interior(self, rng, size, margin=LATTICE_MARGIN):
        full = rng.dirichlet(np.ones(self.c), size=size)
        full = np.maximum(full, margin)
        full /= full.sum(axis=-1, keepdims=True)
        return full[:, :-1]


@dataclass(frozen=True)
class Logistic(Generator):
    """``psi(x) = log(1 + e^x)``; dual map is the sigmoid and the conjugate
    is the negative binary entropy."""

    dim: int = 1
    kind = "Logistic"

    def _psi(self, x):
        return np.sum(np.logaddexp(0.0, x), axis=-1)

    def _grad(self, x):
        return expit(x)

    def _conj(self, s):
        return np.sum(xlogy(s, s) + xlogy(1.0 - s, 1.0 - s), axis=-1)

    def _conj_grad(self, s):
        return np.log(s) - np.log1p(-s)

    def in_closed(self, x):
        return np.all(np.isfinite(x), axis=-1)

    in_interior = in_closed

    def in_dual(self, s):
        return np.all((s > 0.0) & (s < 1.0), axis=-1)

    def sample_interior(self, rng, size, margin=LATTICE_MARGIN):
        # keep sigma(x) at least ~4.5e-5 from {0, 1} so the logit round trip
        # stays accurate to 1e-10
        bound = min(10.0, math.log((1.0 - margin) / margin))
        return rng.uniform(-bound, bound, size=(size, self.dim))


@dataclass(frozen=True)
class ItakuraSaito(Generator):
    """``psi(x) = -sum(log x)`` on the positive orthant.

    The dual map is ``-1/x`` (negative orthant) and the conjugate is
    ``psi*(s) = -sum(1 + log(-s))``.
    """

    dim: int = 1
    kind = "ItakuraSaito"

    def _psi(self, x):
        return -np.sum(np.log(x), axis=-1)

    def _grad(self, x):
        return -1.0 / x

    def _conj(self, s):
        return -np.sum(1.0 + np.log(-s), axis=-1)

    def _conj_grad(self, s):
        return -1.0 / s

    def in_closed(self, x):
        # psi is +inf at 0, so the closed effective domain is still x > 0
        return np.all(x > 0.0, axis=-1)

    in_interior = in_closed

    def in_dual(self, s):
        return np.all(s < 0.0, axis=-1)

    def sample_interior(self, rng, size, margin=LATTICE_MARGIN):
        return np.exp(rng.uniform(math.log(1e-2), math.log(1e2), size=(size, self.dim)))


_KINDS = {
    "l2": L2,
    "negentropybinary": NegEntropyBinary,
    "negentropymulticlass": NegEntropyMulticlass,
    "logistic": Logistic,
    "itakurasaito": ItakuraSaito,
}


def make_generator(kind: str, n: int = 1) -> Generator:
    """Build a generator by name.  For the multi-class entropy ``n`` is the
    number of classes ``c``; otherwise it is the dimension."""
    key = kind.replace("_", "").replace("-", "").lower()
    try:
        cls = _KINDS[key]
    except KeyError:
        raise ValueError(f"unknown generator kind {kind!r}") from None
    if cls is NegEntropyMulticlass:
        return cls(c=n)
    return cls(dim=n)


def _points(gen: Generator, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != gen.dim:
        raise ValueError(
            f"dimension mismatch: {gen.kind} expects {gen.dim} coordinates, got {arr.shape[-1]}"
        )
    return arr


def _scalar(v: np.ndarray):
    return float(v) if np.ndim(v) == 0 else v


def _require(mask: np.ndarray, what: str, gen: Generator) -> None:
    if not np.all(mask):
        raise DomainError(f"point outside the {what} of {gen.kind}")


def generator_value(gen: Generator, x):
    """``psi(x)``; ``inf`` outside the closed domain."""
    x = _points(gen, x)
    inside = gen.in_closed(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = gen._psi(np.where(inside[..., None], x, _anchor(gen, x)))
    return _scalar(np.where(inside, val, np.inf))


def _anchor(gen: Generator, x: np.ndarray) -> np.ndarray:
    """Some interior point, used to keep masked-out evaluations quiet."""
    if isinstance(gen, NegEntropyMulticlass):
        return np.full(x.shape, 1.0 / gen.c)
    if isinstance(gen, NegEntropyBinary):
        return np.full(x.shape, 0.5)
    return np.ones(x.shape)


def dual_map(gen: Generator, x) -> np.ndarray:
    """``grad psi(x)`` for ``x`` in the open domain."""
    x = _points(gen, x)
    _require(gen.in_interior(x), "open domain", gen)
    return gen._grad(x)


def inverse_dual_map(gen: Generator, xstar) -> np.ndarray:
    """``grad psi*(x*)``, the inverse of :func:`dual_map`."""
    s = _points(gen, xstar)
    _require(gen.in_dual(s), "dual domain", gen)
    return gen._conj_grad(s)


def legendre_value(gen: Generator, xstar):
    """``psi*(x*)``."""
    s = _points(gen, xstar)
    _require(gen.in_dual(s), "dual domain", gen)
    return _scalar(gen._conj(s))


def divergence(gen: Generator, x, y):
    """``D(x, y) = psi(x) - psi(y) - <x - y, grad psi(y)>``.

    ``x`` may sit on the boundary of the closed domain (``0 log 0 = 0``);
    ``y`` must be interior.  Returns ``inf`` when ``x`` is outside the closed
    domain.
    """
    x = _points(gen, x)
    y = _points(gen, y)
    _require(gen.in_interior(y), "open domain", gen)
    ystar = gen._grad(y)
    psi_x = np.asarray(generator_value(gen, x))
    inside = np.isfinite(psi_x)
    xs = np.where(inside[..., None], x, y)
    d = gen._psi(xs) - gen._psi(y) - np.sum((xs - y) * ystar, axis=-1)
    return _scalar(np.where(inside, d, np.inf))


def dual_divergence(gen: Generator, s, t):
    """Bregman divergence generated by ``psi*``: ``D*(s, t)``."""
    s = _points(gen, s)
    t = _points(gen, t)
    _require(gen.in_dual(s) & gen.in_dual(t), "dual domain", gen)
    return _scalar(gen._conj(s) - gen._conj(t) - np.sum((s - t) * gen._conj_grad(t), axis=-1))


def duality_residual(gen: Generator, x, y):
    """``|D(x, y) - D*(y*, x*)|``; zero in exact arithmetic."""
    x = _points(gen, x)
    y = _points(gen, y)
    _require(gen.in_interior(x) & gen.in_interior(y), "open domain", gen)
    primal = np.asarray(divergence(gen, x, y))
    dual = np.asarray(dual_divergence(gen, gen._grad(y), gen._grad(x)))
    return _scalar(np.abs(primal - dual))


def law_of_cosines_residual(gen: Generator, x, y, z):
    """``D(x,z) - D(x,y) - D(y,z) + <x - y, z* - y*>``; zero in exact
    arithmetic."""
    x = _points(gen, x)
    y = _points(gen, y)
    z = _points(gen, z)
    _require(gen.in_interior(x) & gen.in_interior(y) & gen.in_interior(z), "open domain", gen)
    inner = np.sum((x - y) * (gen._grad(z) - gen._grad(y)), axis=-1)
    return _scalar(
        np.asarray(divergence(gen, x, z))
        - np.asarray(divergence(gen, x, y))
        - np.asarray(divergence(gen, y, z))
        + inner
    )

"""Forward Bregman projection onto finite convex hulls, and the Jensen-gap
machinery that controls how well ``k``-sparse mixtures approximate a hull.

A hull is given by its generating points.  In the *functional* case each
generator is a table of values over a finite support with probability weights
``P_X``; the divergence between two tables is the ``P_X``-expectation of the
pointwise divergence, and all generators share one set of mixture weights.

Projection optimizes the mixture weights ``w`` directly.  The objective
``w -> D(sum_i w_i v_i, z)`` is convex because a Bregman divergence is convex
in its first argument, so entropic mirror descent on the simplex reaches the
global minimum value; the Frank-Wolfe gap ``<g, w> - min_i g_i`` bounds the
remaining suboptimality and is used as a certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .bregman import (
    DomainError,
    Generator,
    NegEntropyBinary,
    NegEntropyMulticlass,
    divergence,
)

__all__ = [
    "ConvexHullSet",
    "ExpectedGenerator",
    "ProjectionOptions",
    "ProjectionResult",
    "JensenGapReport",
    "WitnessResult",
    "forward_projection",
    "grid_projection",
    "pythagorean_slack",
    "jensen_gap_estimate",
    "jensen_gap_entropy_bound",
    "entropy_a_vector",
    "cok_approximation_witness",
]


@dataclass(frozen=True)
class ConvexHullSet:
    """Generating points of a polytope inside the open domain of a generator.

    ``points`` has shape ``(m, dim)``; for a functional hull it has shape
    ``(m, |X|, dim)`` and ``support_weights`` holds ``P_X``.
    """

    points: np.ndarray
    support_weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        object.__setattr__(self, "points", pts)
        if pts.shape[0] < 1:
            raise ValueError("a hull needs at least one generating point")
        if self.support_weights is not None:
            w = np.asarray(self.support_weights, dtype=np.float64)
            if pts.ndim != 3 or w.shape != (pts.shape[1],):
                raise ValueError("functional hull needs points of shape (m, |X|, dim) "
                                 "and one weight per support point")
            if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("support weights must be a strictly positive probability vector")
            object.__setattr__(self, "support_weights", w)
        elif pts.ndim != 2:
            raise ValueError("point hull needs points of shape (m, dim)")

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def functional(self) -> bool:
        return self.support_weights is not None

    def combine(self, weights) -> np.ndarray:
        """The hull point with mixture weights ``weights``."""
        w = np.asarray(weights, dtype=np.float64)
        return np.tensordot(w, self.points, axes=(-1, 0))

    def check_interior(self, gen: Generator) -> None:
        if not np.all(gen.in_interior(self.points)):
            raise DomainError("hull generators must lie in the open domain")


@dataclass(frozen=True)
class ExpectedGenerator(Generator):
    """``Psi[f] = sum_x P_X(x) psi(f(x))`` acting on flattened tables.

    Built by composition over a base generator; its Bregman divergence is the
    ``P_X``-expectation of the base divergence.
    """

    base: Generator = None  # type: ignore[assignment]
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    kind = "Expected"

    @property
    def dim(self) -> int:  # type: ignore[override]
        return len(self.weights) * self.base.dim

    def _blocks(self, x):
        return x.reshape(x.shape[:-1] + (len(self.weights), self.base.dim))

    def _flat(self, x):
        return x.reshape(x.shape[:-2] + (self.dim,))

    def _psi(self, x):
        return self.base._psi(self._blocks(x)) @ self.weights

    def _grad(self, x):
        return self._flat(self.weights[:, None] * self.base._grad(self._blocks(x)))

    def _conj(self, s):
        return self.base._conj(self._blocks(s) / self.weights[:, None]) @ self.weights

    def _conj_grad(self, s):
        return self._flat(self.base._conj_grad(self._blocks(s) / self.weights[:, None]))

    def in_closed(self, x):
        return np.all(self.base.in_closed(self._blocks(x)), axis=-1)

    def in_interior(self, x):
        return np.all(self.base.in_interior(self._blocks(x)), axis=-1)

    def in_dual(self, s):
        return np.all(self.base.in_dual(self._blocks(s) / self.weights[:, None]), axis=-1)

    def sample_interior(self, rng, size, margin=1e-6):
        pts = self.base.sample_interior(rng, size * len(self.weights), margin)
        return pts.reshape(size, self.dim)


@dataclass(frozen=True)
class ProjectionOptions:
    step: float = 0.1
    max_iters: int = 50_000
    # simplex gradient-mapping norm threshold
    tol: float = 1e-9
    # Frank-Wolfe gap threshold; certifies objective suboptimality
    gap_tol: float = 1e-12
    # when no step decreases the objective in floating point, the iterate is
    # accepted as converged if its Frank-Wolfe gap is below this
    stall_gap_tol: float = 1e-6


@dataclass
class ProjectionResult:
    point: np.ndarray
    weights: np.ndarray
    objective: float
    iterations: int
    converged: bool
    fw_gap: float


def _hull_terms(gen: Generator, hull: ConvexHullSet, z: np.ndarray):
    """Objective and weight-gradient closures for ``w -> D(hull(w), z)``."""
    V = hull.points
    zstar = gen._grad(z)
    psi_z = gen._psi(z)
    if hull.functional:
        px = hull.support_weights

        def evaluate(w):
            x = np.tensordot(w, V, axes=(0, 0))
            xstar = gen._grad(x)
            per_point = gen._psi(x) - psi_z - np.sum((x - z) * zstar, axis=-1)
            grad = np.einsum("mxd,xd,x->m", V, xstar - zstar, px)
            return float(per_point @ px), grad
    else:

        def evaluate(w):
            x = w @ V
            xstar = gen._grad(x)
            obj = gen._psi(x) - psi_z - (x - z) @ zstar
            return float(obj), V @ (xstar - zstar)

    return evaluate


def forward_projection(gen: Generator, hull: ConvexHullSet, z, opts: ProjectionOptions | None = None,
                       w0=None) -> ProjectionResult:
    """``argmin_{y in co(hull)} D(y, z)`` by entropic mirror descent on the
    mixture weights.

    The step starts at ``opts.step`` and adapts: it grows by 25% after an
    accepted step and halves whenever a step would increase the objective.
    Iteration stops once the gradient-mapping norm drops below ``opts.tol`` or
    the Frank-Wolfe gap drops below ``opts.gap_tol``.  If no step decreases
    the objective in floating point, the run stops and counts as converged when
    the gap is below ``opts.stall_gap_tol``.  Non-convergence is reported
    through ``converged`` with the best iterate.
    """
    opts = opts or ProjectionOptions()
    z = np.asarray(z, dtype=np.float64)
    if hull.functional:
        if z.shape != hull.points.shape[1:]:
            raise ValueError("target table shape does not match the hull")
    else:
        z = z.reshape(-1) if z.ndim == 0 else z
        if z.shape != (gen.dim,) or hull.points.shape[1] != gen.dim:
            raise ValueError("dimension mismatch between generator, hull and target")
    if not np.all(gen.in_interior(z)):
        raise DomainError("projection target must lie in the open domain")
    hull.check_interior(gen)

    m = hull.m
    evaluate = _hull_terms(gen, hull, z)
    w = np.full(m, 1.0 / m) if w0 is None else np.asarray(w0, dtype=np.float64)
    if m == 1:
        obj, g = evaluate(w)
        return ProjectionResult(hull.combine(w), w, max(obj, 0.0), 0, True, 0.0)

    logw = np.log(w)
    obj, g = evaluate(w)
    eta = opts.step
    converged = False
    gap = math.inf
    it = 0
    for it in range(1, opts.max_iters + 1):
        gap = float(g @ w - g.min())
        if gap <= opts.gap_tol:
            converged = True
            break
        stalled = False
        while True:
            cand = logw - eta * (g - g.min())
            top = cand.max()
            cand -= top + math.log(np.exp(cand - top).sum())
            wc = np.exp(cand)
            oc, gc = evaluate(wc)
            if oc <= obj:
                break
            eta *= 0.5
            if eta < 1e-30:
                stalled = True
                break
        if stalled:
            converged = gap <= opts.stall_gap_tol
            break
        mapping = float(np.abs(w - wc).sum() / eta)
        logw, w, obj, g = cand, wc, oc, gc
        if mapping < opts.tol:
            converged = True
            gap = float(g @ w - g.min())
            break
        eta *= 1.25
    return ProjectionResult(hull.combine(w), w, max(obj, 0.0), it, converged, gap)


def _simplex_grid(m: int, h: float, center=None, radius: float = math.inf) -> np.ndarray:
    """Weight vectors on the lattice ``h * Z^m`` inside the simplex (``m <= 3``),
    optionally restricted to a box of half-width ``radius`` around ``center``."""
    n = int(round(1.0 / h))

    def index_range(c):
        if center is None:
            return np.arange(n + 1)
        lo = max(0, math.floor((c - radius) / h))
        hi = min(n, math.ceil((c + radius) / h))
        return np.arange(lo, hi + 1)

    if m == 2:
        t = index_range(center[0] if center is not None else None) * h
        return np.stack([t, 1.0 - t], axis=1)
    if m == 3:
        ia = index_range(None if center is None else center[0])
        ib = index_range(None if center is None else center[1])
        a, b = np.meshgrid(ia, ib, indexing="ij")
        keep = a + b <= n
        a, b = a[keep] * h, b[keep] * h
        return np.stack([a, b, np.clip(1.0 - a - b, 0.0, None)], axis=1)
    raise ValueError("grid oracle supports at most 3 generators")


def grid_projection(gen: Generator, hull: ConvexHullSet, z, resolution: float = 1e-4):
    """Brute-force oracle for hulls of at most 3 generators.

    Segments are scanned at ``resolution`` directly; triangles are scanned
    coarse-to-fine (step 1e-2, then each level 10x finer in a window around
    the incumbent), which is exact enough because the objective is convex in
    the weights.  Returns ``(weights, objective)``.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1) if not hull.functional else np.asarray(z)
    m = hull.m
    if m == 1:
        w = np.ones(1)
        return w, float(_div(gen, hull, hull.combine(w), z))
    if m == 2:
        W = _simplex_grid(2, resolution)
    else:
        h = 1e-2
        W = _simplex_grid(3, h)
        while True:
            vals = np.asarray(_div(gen, hull, hull.combine(W), z))
            best = W[np.argmin(vals)]
            if h <= resolution * (1 + 1e-9):
                break
            W = _simplex_grid(3, h / 10, center=best, radius=2 * h)
            h /= 10
    vals = np.asarray(_div(gen, hull, hull.combine(W), z))
    j = int(np.argmin(vals))
    return W[j], float(vals[j])


def _div(gen: Generator, hull: ConvexHullSet, a, b):
    """Divergence between hull-shaped objects (expectation in the functional case)."""
    d = divergence(gen, a, b)
    if hull.functional:
        return np.asarray(d) @ hull.support_weights
    return d


def pythagorean_slack(gen: Generator, hull: ConvexHullSet, z, x_weights,
                      result: ProjectionResult | None = None,
                      opts: ProjectionOptions | None = None) -> float:
    """``D(x, z) - D(x, P(z)) - D(P(z), z)`` for ``x = hull(x_weights)``.

    Nonnegative up to the projection's Frank-Wolfe gap.
    """
    if result is None:
        result = forward_projection(gen, hull, z, opts)
    x = hull.combine(x_weights)
    z = np.asarray(z, dtype=np.float64)
    if not hull.functional:
        z = z.reshape(-1)
    p = result.point
    return float(_div(gen, hull, x, z) - _div(gen, hull, x, p) - _div(gen, hull, p, z))


# --- Jensen approximation gap -------------------------------------------------

_CHUNK = 10_000


@dataclass
class JensenGapReport:
    estimate: float
    stderr: float
    bound: float | None
    bound_loose: float | None
    k: int
    c: int | None
    trials: int


def _entropy_classes(gen: Generator) -> int | None:
    if isinstance(gen, NegEntropyMulticlass):
        return gen.c
    if isinstance(gen, NegEntropyBinary) and gen.dim == 1:
        return 2
    return None


def _full_probs(gen: Generator, atoms: np.ndarray) -> np.ndarray:
    if isinstance(gen, NegEntropyMulticlass):
        return np.concatenate([atoms, gen.last(atoms)[:, None]], axis=1)
    return np.concatenate([atoms, 1.0 - atoms], axis=1)


def entropy_a_vector(gen: Generator, atoms) -> np.ndarray:
    """``a_i = max over atoms of 1 / p_i`` in full ``c``-class coordinates;
    the same maximum holds over the atoms' convex hull."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
    if _entropy_classes(gen) is None:
        raise ValueError(f"no entropy bound for generator {gen.kind}")
    return np.max(1.0 / _full_probs(gen, atoms), axis=0)


def jensen_gap_entropy_bound(a, k: int) -> tuple[float, float]:
    """Upper bounds on the Jensen gap of negative entropy over a set whose
    coordinates satisfy ``p_i >= 1/a_i``.

    Returns ``(tight, loose)`` with ``tight = sum(a) (1 - sum(1/a))^2 / (8k)``
    and ``loose = sum(a) / (8k)``.
    """
    a = np.asarray(a, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be at least 1")
    if np.any(a <= 0.0) or not np.all(np.isfinite(a)):
        raise ValueError("a must be finite and positive")
    inv = float(np.sum(1.0 / a))
    if inv > 1.0 + 1e-12:
        raise ValueError(f"infeasible a: sum(1/a) = {inv} exceeds 1")
    spread = max(1.0 - inv, 0.0)
    total = float(np.sum(a))
    # divide by k last so that bound(k) is exactly bound(1) / k
    return total * spread * spread / 8.0 / k, total / 8.0 / k


def jensen_gap_estimate(gen: Generator, atoms, probs, k: int, trials: int = 100_000,
                        seed: int = 0) -> JensenGapReport:
    """Monte-Carlo estimate of ``E psi(mean of k iid draws) - psi(E Z)`` for the
    discrete distribution ``P(Z = atoms[i]) = probs[i]``.

    Trials are drawn in chunks of 10^4, chunk ``j`` from its own substream, so
    the estimate does not depend on how chunks are scheduled.
    """
    atoms = np.asarray(atoms, dtype=np.float64)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    probs = np.asarray(probs, dtype=np.float64)
    if k < 1 or trials < 1:
        raise ValueError("k and trials must be at least 1")
    if atoms.shape != (len(probs), gen.dim):
        raise ValueError("atoms must have shape (len(probs), gen.dim)")
    if np.any(probs < 0.0) or abs(probs.sum() - 1.0) > 1e-12:
        raise ValueError("probs must be a probability vector")
    if not np.all(gen.in_interior(atoms)):
        raise DomainError("atoms must lie in the open domain")

    psi_mean = gen._psi(probs @ atoms)
    vals = []
    for j, start in enumerate(range(0, trials, _CHUNK)):
        n = min(_CHUNK, trials - start)
        counts = rngmod.stream(seed, "jensen-gap", j).multinomial(k, probs, size=n)
        means = (counts / k) @ atoms
        vals.append(gen._psi(means) - psi_mean)
    vals = np.concatenate(vals)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.inf

    c = _entropy_classes(gen)
    bound = loose = None
    if c is not None:
        support = atoms[probs > 0.0]
        bound, loose = jensen_gap_entropy_bound(entropy_a_vector(gen, support), k)
    return JensenGapReport(est, se, bound, loose, k, c, trials)


@dataclass
class WitnessResult:
    point: np.ndarray
    weights: np.ndarray
    excess: float
    bound: float | None
    within_bound: bool | None
    candidates: int


def cok_approximation_witness(gen: Generator, hull: ConvexHullSet, z, y_weights, k: int,
                              trials: int = 10_000, seed: int = 0) -> WitnessResult:
    """Search ``co^k`` of the hull for a point nearly as close to ``z`` as
    ``y = hull(y_weights)``.

    Candidates are every generator (``co^1`` is contained in ``co^k``), ``y``
    itself when its support has at most ``k`` points, and ``trials`` empirical
    means of ``k`` generators drawn i.i.d. from ``y_weights``.  ``excess`` is
    ``D(best, z) - D(y, z)``; for entropy generators it is compared against the
    Jensen-gap bound of the hull.  A failure to stay within the bound is a
    failure to find a witness, not proof that none exists.
    """
    if hull.functional:
        raise ValueError("witness search is implemented for point hulls")
    yw = np.asarray(y_weights, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if yw.shape != (hull.m,) or np.any(yw < 0.0) or abs(yw.sum() - 1.0) > 1e-12:
        raise ValueError("y_weights must be a probability vector over the hull generators")
    hull.check_interior(gen)

    cands = [np.eye(hull.m)]
    if np.count_nonzero(yw) <= k:
        cands.append(yw[None, :])
    for j, start in enumerate(range(0, trials, _CHUNK)):
        n = min(_CHUNK, trials - start)
        counts = rngmod.stream(seed, "cok-witness", j).multinomial(k, yw, size=n)
        cands.append(counts / k)
    W = np.concatenate(cands)
    vals = np.asarray(divergence(gen, W @ hull.points, z))
    best = int(np.argmin(vals))
    excess = float(vals[best] - divergence(gen, hull.combine(yw), z))

    bound = within = None
    if _entropy_classes(gen) is not None:
        bound = jensen_gap_entropy_bound(entropy_a_vector(gen, hull.points), k)[0]
        within = excess <= bound
    return WitnessResult(W[best] @ hull.points, W[best], excess, bound, within, len(W))

"""Randomized verification suites for the divergence geometry and the
approximation bounds.

Each suite returns a JSON-ready dict with one entry per check: the worst
observed value, the tolerance, a verdict and, on failure, the offending
sample.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from . import rng as rngmod
from .bregman import (
    Generator,
    ItakuraSaito,
    L2,
    Logistic,
    NegEntropyBinary,
    NegEntropyMulticlass,
    duality_residual,
    law_of_cosines_residual,
)
from .projection import (
    ConvexHullSet,
    entropy_a_vector,
    forward_projection,
    grid_projection,
    jensen_gap_entropy_bound,
    jensen_gap_estimate,
    pythagorean_slack,
)
from .simplex import kl_loginf_bound_slack, pinsker_slack

__all__ = ["GeometrySettings", "BoundsSettings", "geometry_generators", "identity_checks",
           "pythagorean_checks", "run_geometry_suite",
           "run_bounds_suite"]


@dataclass(frozen=True)
class GeometrySettings:
    triples: int = 1000
    hulls: int = 1000
    max_hull: int = 5
    residual_tol: float = 1e-9
    slack_tol: float = 1e-6
    oracle_tol: float = 1e-6
    oracle_max_m: int = 3
    seed: int = 0


@dataclass(frozen=True)
class BoundsSettings:
    classes: tuple[int, ...] = (2, 3, 5)
    ks: tuple[int, ...] = (1, 2, 5, 25)
    trials: int = 100_000
    atoms: int = 4
    stderr_mult: float = 3.0
    pairs: int = 100_000
    slack_tol: float = 1e-12
    seed: int = 0


def geometry_generators() -> dict[str, Generator]:
    return {
        "l2": L2(3),
        "negentropy_binary": NegEntropyBinary(1),
        "negentropy_c2": NegEntropyMulticlass(2),
        "negentropy_c3": NegEntropyMulticlass(3),
        "negentropy_c10": NegEntropyMulticlass(10),
        "logistic": Logistic(3),
        "itakura_saito": ItakuraSaito(3),
    }


def _check(name: str, worst: float, tol: float, ok: bool, n: int, offending=None, **extra) -> dict:
    out = {"name": name, "samples": n, "worst": worst, "tol": tol, "passed": bool(ok), **extra}
    if not ok and offending is not None:
        out["offending"] = offending
    return out


def _tolist(a) -> Any:
    return np.asarray(a).tolist()


def identity_checks(s: GeometrySettings) -> list[dict]:
    """Law-of-cosines and duality residuals on random interior triples,
    one pair of checks per generator."""
    checks = []
    for j, (name, gen) in enumerate(geometry_generators().items()):
        r = rngmod.stream(s.seed, "verify-triples", j)
        x, y, z = (gen.sample_interior(r, s.triples) for _ in range(3))
        for label, res in (("law_of_cosines", np.abs(law_of_cosines_residual(gen, x, y, z))),
                           ("duality", np.abs(duality_residual(gen, x, y)))):
            res = np.atleast_1d(res)
            i = int(np.argmax(res))
            worst = float(res[i])
            ok = bool(worst <= s.residual_tol)
            bad = {"x": _tolist(x[i]), "y": _tolist(y[i])}
            if label == "law_of_cosines":
                bad["z"] = _tolist(z[i])
            checks.append(_check(f"{label}/{name}", worst, s.residual_tol, ok, s.triples, bad))
    return checks


def pythagorean_checks(s: GeometrySettings) -> list[dict]:
    """Pythagorean slack on random hulls in the 3-class simplex under KL
    and squared Euclidean distance, plus a grid-oracle comparison of the
    projection objective for small hulls."""
    checks = []
    # hulls inside the 3-class simplex, in truncated coordinates
    for j, (name, gen) in enumerate((("kl", NegEntropyMulticlass(3)), ("l2", L2(2)))):
        r = rngmod.stream(s.seed, "verify-hulls", j)
        worst_slack, worst_gap = np.inf, 0.0
        bad_slack = bad_gap = None
        n_oracle = 0
        unconverged = 0
        for i in range(s.hulls):
            m = int(r.integers(1, s.max_hull + 1))
            pts = r.dirichlet(np.ones(3), size=m + 1) * (1 - 3e-3) + 1e-3
            hull = ConvexHullSet(pts[:m, :2])
            z = pts[m, :2]
            xw = r.dirichlet(np.ones(m))
            res = forward_projection(gen, hull, z)
            unconverged += not res.converged
            sl = pythagorean_slack(gen, hull, z, xw, result=res)
            if sl < worst_slack:
                worst_slack = sl
                bad_slack = {"hull": _tolist(hull.points), "z": _tolist(z), "x_weights": _tolist(xw)}
            if m <= s.oracle_max_m:
                n_oracle += 1
                _, oracle_obj = grid_projection(gen, hull, z)
                gap = res.objective - oracle_obj
                if gap > worst_gap:
                    worst_gap = gap
                    bad_gap = {"hull": _tolist(hull.points), "z": _tolist(z),
                               "projection": res.objective, "oracle": oracle_obj}
        checks.append(_check(f"pythagorean/{name}", float(worst_slack), -s.slack_tol,
                             worst_slack >= -s.slack_tol, s.hulls, bad_slack,
                             unconverged=unconverged))
        checks.append(_check(f"projection_vs_grid/{name}", float(worst_gap), s.oracle_tol,
                             worst_gap <= s.oracle_tol, n_oracle, bad_gap))
    return checks


def run_geometry_suite(settings: GeometrySettings | None = None) -> dict[str, Any]:
    s = settings or GeometrySettings()
    t0 = time.perf_counter()
    checks = identity_checks(s) + pythagorean_checks(s)
    return {"suite": "geometry", "settings": asdict(s), "checks": checks,
            "passed": all(c["passed"] for c in checks),
            "seconds": time.perf_counter() - t0}


def run_bounds_suite(settings: BoundsSettings | None = None) -> dict[str, Any]:
    s = settings or BoundsSettings()
    t0 = time.perf_counter()
    checks = []
    for c in s.classes:
        gen = NegEntropyMulticlass(c)
        r = rngmod.stream(s.seed, "verify-jensen", c)
        atoms = (r.dirichlet(np.ones(c), size=s.atoms) * (1 - c * 1e-2) + 1e-2)[:, :-1]
        probs = r.dirichlet(np.ones(s.atoms))
        for k in s.ks:
            rep = jensen_gap_estimate(gen, atoms, probs, k, s.trials, seed=s.seed)
            allowance = rep.bound + s.stderr_mult * rep.stderr
            margin = allowance - rep.estimate
            checks.append(_check(f"jensen_gap/c{c}/k{k}", rep.estimate, allowance, margin >= 0.0,
                                 s.trials, {"atoms": _tolist(atoms), "probs": _tolist(probs)},
                                 bound=rep.bound, bound_loose=rep.bound_loose, stderr=rep.stderr,
                                 margin=margin))
        a = entropy_a_vector(gen, atoms)
        b1 = jensen_gap_entropy_bound(a, 1)[0]
        b10 = jensen_gap_entropy_bound(a, 10)[0]
        checks.append(_check(f"jensen_bound_scaling/c{c}", b10, b1 / 10, b10 == b1 / 10, 1,
                             {"a": _tolist(a)}, bound_k1=b1, bound_k10=b10))

    r = rngmod.stream(s.seed, "verify-pairs")
    cs = r.choice([2, 3, 5, 10], size=s.pairs)
    for label, fn in (("kl_loginf", kl_loginf_bound_slack), ("pinsker", pinsker_slack)):
        worst, bad = np.inf, None
        for c in (2, 3, 5, 10):
            n = int(np.sum(cs == c))
            if n == 0:
                continue
            p = r.dirichlet(np.ones(c), size=n)
            q = r.dirichlet(np.ones(c), size=n)
            p, q = np.clip(p, 1e-12, None), np.clip(q, 1e-12, None)
            p /= p.sum(1, keepdims=True)
            q /= q.sum(1, keepdims=True)
            sl = np.atleast_1d(fn(p, q))
            i = int(np.argmin(sl))
            if sl[i] < worst:
                worst, bad = float(sl[i]), {"p": _tolist(p[i]), "q": _tolist(q[i])}
        checks.append(_check(f"{label}_slack", worst, -s.slack_tol, worst >= -s.slack_tol,
                             s.pairs, bad))
    return {"suite": "bounds", "settings": asdict(s), "checks": checks,
            "passed": all(c["passed"] for c in checks),
            "seconds": time.perf_counter() - t0}

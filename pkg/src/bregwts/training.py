"""Optimization loops for pretraining, weak finetuning and weak-to-strong
training.

All stages use full-batch Adam.  Every restart draws its initialization from
its own substream of ``cfg.seed``, so identical ``(cfg, data)`` reproduce
identical parameters.  A run returns the best iterate it visited; among
restarts the lowest final objective wins (ties go to the lower index).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import rng as rngmod
from .models import (
    DEFAULT_REG_COEF,
    HeadEnsemble,
    MlpParams,
    SoftmaxHead,
    grad_forward_xe,
    grad_pretrain,
    grad_reverse_kl,
    grad_reverse_kl_head,
    init_ensemble,
    init_head,
    init_mlp,
    mlp_forward,
)

__all__ = [
    "OptimizerConfig",
    "TrainReport",
    "TrainingDiverged",
    "adam_minimize",
    "train_weak_head",
    "train_reverse_kl_head",
    "train_strong_ensemble",
    "pretrain_representation",
]

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """The objective became NaN or infinite."""

    def __init__(self, msg: str, trace: list):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class OptimizerConfig:
    step: float = 1e-2
    max_iters: int = 2000
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    # stop once the relative objective change over `window` iterations is below tol
    tol: float = 1e-8
    window: int = 20
    restarts: int = 1
    seed: int = 0
    trace_every: int = 10

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.window < 1:
            raise ValueError("window must be at least 1")

    def with_(self, **changes) -> "OptimizerConfig":
        return replace(self, **changes)


@dataclass
class TrainReport:
    final_objective: float
    initial_objective: float
    trace: list[tuple[int, float]]
    iterations: int
    converged: bool
    restart: int = 0
    restart_objectives: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


Objective = Callable[[list[np.ndarray]], tuple[float, list[np.ndarray]]]


def adam_minimize(fun: Objective, x0: Sequence[np.ndarray], cfg: OptimizerConfig):
    """Minimize ``fun`` (returning objective and gradients) with Adam.

    Returns ``(best_params, report)``.  Raises :class:`TrainingDiverged` on a
    non-finite objective.
    """
    x = [np.array(a, dtype=np.float64, copy=True) for a in x0]
    m = [np.zeros_like(a) for a in x]
    v = [np.zeros_like(a) for a in x]
    b1, b2 = cfg.betas
    history: list[float] = []
    trace: list[tuple[int, float]] = []
    best_f, best_x = math.inf, [a.copy() for a in x]
    converged = False
    t = 0
    while True:
        f, g = fun(x)
        if not math.isfinite(f):
            raise TrainingDiverged(f"objective became {f} at iteration {t}", trace)
        history.append(f)
        if t % cfg.trace_every == 0:
            trace.append((t, f))
        if f < best_f:
            best_f, best_x = f, [a.copy() for a in x]
        if t >= cfg.window:
            ref = history[t - cfg.window]
            if abs(ref - f) <= cfg.tol * max(abs(f), 1e-12):
                converged = True
                break
        if t >= cfg.max_iters:
            break
        t += 1
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for a, ga, ma, va in zip(x, g, m, v):
            ma *= b1
            ma += (1.0 - b1) * ga
            va *= b2
            va += (1.0 - b2) * ga * ga
            a -= cfg.step * (ma / c1) / (np.sqrt(va / c2) + cfg.eps)
    if not trace or trace[-1][0] != t:
        trace.append((t, history[-1]))
    report = TrainReport(best_f, history[0], trace, t, converged)
    return best_x, report


def _representations(model: MlpParams | None, X) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) if model is None else mlp_forward(model, X)


def _pick(results: list, cfg: OptimizerConfig, what: str):
    """Choose the restart with the lowest final objective."""
    finished = [(r.final_objective, i, p, r) for i, (p, r) in enumerate(results) if r is not None]
    if not finished:
        raise TrainingDiverged(f"all {cfg.restarts} restarts of {what} diverged", [])
    obj, i, params, report = min(finished, key=lambda t: (t[0], t[1]))
    report.restart = i
    report.restart_objectives = [r.final_objective if r is not None else math.inf
                                 for _, r in results]
    return params, report


def train_weak_head(h_w: MlpParams | None, X, Y, cfg: OptimizerConfig):
    """Fit a softmax head on frozen features by minimizing mean ``XE(y || f)``.

    ``h_w=None`` means ``X`` already holds the representations.
    """
    R = _representations(h_w, X)
    Y = np.asarray(Y, dtype=np.float64)
    if len(R) == 0:
        raise ValueError("empty dataset")
    c = Y.shape[1]
    results = []
    for r in range(cfg.restarts):
        W0 = init_head(c, R.shape[1], rngmod.stream(cfg.seed, "weak-head-init", r)).W

        def fun(x):
            obj, g = grad_forward_xe(x[0], R, Y)
            return obj, [g]

        (W,), rep = adam_minimize(fun, [W0], cfg)
        results.append((SoftmaxHead(W), rep))
    return _pick(results, cfg, "weak head training")


def train_reverse_kl_head(h_s: MlpParams | None, X, Y, cfg: OptimizerConfig, reg_coef: float = DEFAULT_REG_COEF):
    """Single head fitted by mean ``KL(f || y)`` (strong output first)."""
    R = _representations(h_s, X)
    Y = np.asarray(Y, dtype=np.float64)
    c = Y.shape[1]
    results = []
    for r in range(cfg.restarts):
        W0 = init_head(c, R.shape[1], rngmod.stream(cfg.seed, "strong-init", r)).W

        def fun(x):
            obj, g = grad_reverse_kl_head(x[0], R, Y, reg_coef)
            return obj, [g]

        try:
            (W,), rep = adam_minimize(fun, [W0], cfg)
        except TrainingDiverged as exc:
            log.warning("restart %d diverged: %s", r, exc)
            results.append((None, None))
            continue
        results.append((SoftmaxHead(W), rep))
    return _pick(results, cfg, "reverse-KL head training")


def train_strong_ensemble(h_s: MlpParams | None, X, Y, k: int, cfg: OptimizerConfig,
                          reg_coef: float = DEFAULT_REG_COEF):
    """Fit ``k`` softmax heads and their mixture weights to weak labels by
    minimizing mean ``KL(sum_a lambda_a f_a || y) + reg * sum_a |W_a|^2``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    R = _representations(h_s, X)
    Y = np.asarray(Y, dtype=np.float64)
    c = Y.shape[1]
    results = []
    for r in range(cfg.restarts):
        ens0 = init_ensemble(k, c, R.shape[1], rngmod.stream(cfg.seed, "strong-init", r))

        def fun(x):
            obj, dh, dm = grad_reverse_kl(HeadEnsemble(x[0], x[1]), R, Y, reg_coef)
            return obj, [dh, dm]

        try:
            (heads, mix), rep = adam_minimize(fun, [ens0.heads, ens0.mix_logits], cfg)
        except (TrainingDiverged, FloatingPointError) as exc:
            log.warning("restart %d diverged: %s", r, exc)
            results.append((None, None))
            continue
        results.append((HeadEnsemble(heads, mix), rep))
    return _pick(results, cfg, "strong ensemble training")


def pretrain_representation(in_dim: int, hidden: int, out_dim: int, depth: int, X, Y,
                            cfg: OptimizerConfig, heads=None, train_heads: bool | None = None):
    """Train an MLP representation on ``T`` tasks by pooled cross-entropy.

    ``X`` is ``(T, N, in_dim)`` and ``Y`` is ``(T, N, c)``.  With ``heads``
    given (``(T, c - 1, out_dim)``) and ``train_heads`` false, the task heads
    stay fixed and only the MLP is trained; otherwise heads start from the
    given values (or small random ones) and are trained jointly.

    Returns ``(params, heads, report)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 3 or Y.ndim != 3 or X.shape[:2] != Y.shape[:2]:
        raise ValueError("X must be (T, N, in_dim) and Y must be (T, N, c)")
    T, _, _ = X.shape
    c = Y.shape[2]
    if train_heads is None:
        train_heads = heads is None
    results = []
    for r in range(cfg.restarts):
        s = rngmod.stream(cfg.seed, "pretrain-init", r)
        params0 = init_mlp(in_dim, hidden, out_dim, depth, s)
        heads0 = (np.asarray(heads, dtype=np.float64).copy() if heads is not None
                  else np.stack([init_head(c, out_dim, s).W for _ in range(T)]))
        L = len(params0.weights)

        def fun(x):
            p = MlpParams(list(x[:L]), list(x[L:2 * L]))
            hd = x[2 * L] if train_heads else heads0
            obj, gW, gb, dh = grad_pretrain(p, hd, X, Y)
            grads = gW + gb
            if train_heads:
                grads.append(dh)
            return obj, grads

        x0 = params0.weights + params0.biases + ([heads0] if train_heads else [])
        try:
            x, rep = adam_minimize(fun, x0, cfg)
        except TrainingDiverged as exc:
            log.warning("pretraining restart %d diverged: %s", r, exc)
            results.append((None, None))
            continue
        params = MlpParams(list(x[:L]), list(x[L:2 * L]))
        results.append(((params, x[2 * L] if train_heads else heads0), rep))
    (params, hd), report = _pick(results, cfg, "pretraining")
    return params, hd, report

"""Synthetic weak-to-strong pipeline.

World: a random ReLU MLP ``h*`` maps Gaussian inputs ``x ~ N(0, nu^2 I)`` to
features; every task is a softmax head ``f`` on those features and its target
is the soft label ``g(x) = softmax(f(h*(x)))``.

Stages, each drawing from its own random substream:

1. pretrain a strong (deep) and a weak (shallow) representation on ``T``
   tasks with the task heads held fixed;
2. per finetuning task, fit a weak head on the frozen weak representation;
3. label a fresh input sample with the weak model;
4. fit a ``k``-head mixture on the frozen strong representation by
   minimizing ``KL(strong || weak label)``;
5. on another fresh sample, estimate ``weak_xe``, ``strong_xe`` and the
   misfit ``KL(strong || weak)``.
"""

from __future__ import annotations

import logging
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import rng as rngmod
from .models import (
    HeadEnsemble,
    MlpParams,
    SoftmaxHead,
    ensemble_forward,
    head_forward,
    init_mlp,
    mlp_forward,
)
from .simplex import EPS_INT, clamp_to_interior, kl, softmax, xe
from .training import (
    OptimizerConfig,
    TrainReport,
    pretrain_representation,
    train_strong_ensemble,
    train_weak_head,
)

__all__ = [
    "SyntheticConfig",
    "PROFILES",
    "GroundTruth",
    "Representations",
    "TaskRecord",
    "EvalRecord",
    "PipelineResult",
    "derive_seed",
    "generate_ground_truth",
    "sample_inputs",
    "sample_task_data",
    "pretrain_stage",
    "prepare_weak_stage",
    "run_strong_stage",
    "run_pipeline",
    "sweep_k",
    "summarize",
]

log = logging.getLogger(__name__)

PROFILES: dict[str, dict[str, int]] = {
    "desk": dict(T=5, N_r=500, M=20, N_f=500, k=100),
    "paper": dict(T=10, N_r=2000, M=100, N_f=2000, k=100),
}


@dataclass(frozen=True)
class SyntheticConfig:
    in_dim: int = 8
    rep_dim: int = 16
    hidden: int = 16
    # h* is described by its hidden layers; the learned representations by
    # their number of linear layers (an 8-layer MLP has 7 hidden layers)
    hstar_depth: int = 5
    strong_depth: int = 8
    weak_depth: int = 2
    c: int = 2
    T: int = 5
    N_r: int = 500
    M: int = 20
    N_f: int = 500
    nu: float = 100.0
    k: int = 100
    seed: int = 0
    reg_coef: float = 0.0
    planted_head_std: float = 1.0
    slack_tol: float = 0.05
    realizable_weak: bool = False
    reference_eval: bool = False
    pretrain_opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    weak_opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    strong_opt: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(restarts=3))

    def __post_init__(self):
        for name in ("in_dim", "rep_dim", "hidden", "hstar_depth", "strong_depth",
                     "weak_depth", "T", "N_r", "M", "N_f", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.c < 2:
            raise ValueError("c must be at least 2")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.reg_coef < 0:
            raise ValueError("reg_coef must be non-negative")

    @classmethod
    def from_profile(cls, profile: str = "desk", **overrides) -> "SyntheticConfig":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        return cls(**{**PROFILES[profile], **overrides})

    def with_(self, **changes) -> "SyntheticConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for name in ("pretrain_opt", "weak_opt", "strong_opt"):
            d[name]["betas"] = list(d[name]["betas"])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SyntheticConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        opt_fields = {f.name for f in fields(OptimizerConfig)}
        for name in ("pretrain_opt", "weak_opt", "strong_opt"):
            if name in kw and isinstance(kw[name], dict):
                sub = kw[name]
                bad = set(sub) - opt_fields
                if bad:
                    raise ValueError(f"unknown {name} keys: {sorted(bad)}")
                base = getattr(cls(), name)
                if "betas" in sub:
                    sub = {**sub, "betas": tuple(sub["betas"])}
                kw[name] = replace(base, **sub)
        return cls(**kw)


def derive_seed(seed: int, tag: str, *indices: int) -> int:
    """A 63-bit seed for a sub-computation, derived from the master seed."""
    return int(rngmod.stream(seed, tag, *indices).integers(0, 2 ** 63 - 1))


# --- ground truth and data ------------------------------------------------------------

@dataclass
class GroundTruth:
    hstar: MlpParams
    pretrain_heads: np.ndarray   # (T, c - 1, rep_dim)
    finetune_heads: np.ndarray   # (M, c - 1, rep_dim)


def _planted_head(cfg: SyntheticConfig, tag: str, i: int) -> np.ndarray:
    s = rngmod.stream(cfg.seed, tag, i)
    return cfg.planted_head_std * s.standard_normal((cfg.c - 1, cfg.rep_dim))


def generate_ground_truth(cfg: SyntheticConfig) -> GroundTruth:
    """Draw ``h*`` and the planted pretraining and finetuning heads.

    Each head has its own substream, so changing ``T`` or ``M`` leaves the
    other heads untouched.
    """
    hstar = init_mlp(cfg.in_dim, cfg.hidden, cfg.rep_dim, cfg.hstar_depth,
                     rngmod.stream(cfg.seed, "hstar"))
    pre = np.stack([_planted_head(cfg, "pretrain-head", t) for t in range(cfg.T)])
    fin = np.stack([_planted_head(cfg, "finetune-head", i) for i in range(cfg.M)])
    return GroundTruth(hstar, pre, fin)


def sample_inputs(n: int, in_dim: int, nu: float, stream: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return nu * stream.standard_normal((n, in_dim))


def sample_task_data(hstar: MlpParams, f, n: int, nu: float, stream: np.random.Generator):
    """Draw ``n`` inputs and their exact soft labels ``softmax(f(h*(x)))``."""
    X = sample_inputs(n, hstar.in_dim, nu, stream)
    return X, _truth(hstar, f, X)


def _truth(hstar: MlpParams, f, X) -> np.ndarray:
    W = f.W if isinstance(f, SoftmaxHead) else np.asarray(f)
    return clamp_to_interior(softmax(mlp_forward(hstar, X) @ W.T), EPS_INT)


# --- stages -----------------------------------------------------------------------

@dataclass
class Representations:
    h_s: MlpParams
    h_w: MlpParams
    strong_report: TrainReport
    weak_report: TrainReport


def pretrain_stage(cfg: SyntheticConfig, gt: GroundTruth) -> Representations:
    """Fit ``h_s`` and ``h_w`` on the pooled pretraining tasks (heads fixed)."""
    data = [sample_task_data(gt.hstar, gt.pretrain_heads[t], cfg.N_r, cfg.nu,
                             rngmod.stream(cfg.seed, "pretrain-data", t)) for t in range(cfg.T)]
    X = np.stack([d[0] for d in data])
    Y = np.stack([d[1] for d in data])
    out = {}
    for name, depth in (("strong", cfg.strong_depth), ("weak", cfg.weak_depth)):
        ocfg = cfg.pretrain_opt.with_(seed=derive_seed(cfg.seed, f"pretrain-{name}"))
        params, _, report = pretrain_representation(
            cfg.in_dim, cfg.hidden, cfg.rep_dim, depth - 1, X, Y, ocfg,
            heads=gt.pretrain_heads, train_heads=False)
        out[name] = (params, report)
    return Representations(out["strong"][0], out["weak"][0], out["strong"][1], out["weak"][1])


@dataclass
class TaskRecord:
    task_id: int
    target_head: np.ndarray
    weak_head: SoftmaxHead | None = None
    strong: HeadEnsemble | None = None
    reference_head: SoftmaxHead | None = None
    weak_report: TrainReport | None = None
    strong_report: TrainReport | None = None
    error: str | None = None


@dataclass(frozen=True)
class EvalRecord:
    task_id: int
    c: int
    k: int
    n_eval: int
    weak_xe: float
    strong_xe: float
    misfit_kl: float
    gain: float
    slack: float


@dataclass
class WeakTask:
    """Everything about a task that does not depend on ``k``."""
    record: TaskRecord
    label_X: np.ndarray | None = None
    label_Y: np.ndarray | None = None


def _weak_rep(cfg: SyntheticConfig, reps: Representations) -> MlpParams:
    return reps.h_s if cfg.realizable_weak else reps.h_w


def _prepare_task(cfg: SyntheticConfig, gt: GroundTruth, reps: Representations, i: int) -> WeakTask:
    rec = TaskRecord(i, gt.finetune_heads[i])
    try:
        h_w = _weak_rep(cfg, reps)
        X, Y = sample_task_data(gt.hstar, gt.finetune_heads[i], cfg.N_f, cfg.nu,
                                rngmod.stream(cfg.seed, "weak-data", i))
        rec.weak_head, rec.weak_report = train_weak_head(
            h_w, X, Y, cfg.weak_opt.with_(seed=derive_seed(cfg.seed, "weak-train", i)))
        Xl = sample_inputs(cfg.N_f, cfg.in_dim, cfg.nu, rngmod.stream(cfg.seed, "label-data", i))
        Yl = head_forward(rec.weak_head, mlp_forward(h_w, Xl))
        if cfg.reference_eval:
            Xr, Yr = sample_task_data(gt.hstar, gt.finetune_heads[i], cfg.N_f, cfg.nu,
                                      rngmod.stream(cfg.seed, "reference-data", i))
            rec.reference_head, _ = train_weak_head(
                reps.h_s, Xr, Yr, cfg.weak_opt.with_(seed=derive_seed(cfg.seed, "reference-train", i)))
        return WeakTask(rec, Xl, Yl)
    except Exception as exc:  # recorded per task; the run continues
        log.warning("task %d failed in the weak stage: %s", i, exc)
        rec.error = f"weak stage: {exc}"
        return WeakTask(rec)


def _evaluate(cfg, gt, reps, rec: TaskRecord, k: int, target: str) -> EvalRecord:
    X = sample_inputs(cfg.N_f, cfg.in_dim, cfg.nu, rngmod.stream(cfg.seed, "eval-data", rec.task_id))
    Rs = mlp_forward(reps.h_s, X)
    if target == "truth":
        G = _truth(gt.hstar, rec.target_head, X)
    else:
        G = head_forward(rec.reference_head, Rs)
    fw = head_forward(rec.weak_head, mlp_forward(_weak_rep(cfg, reps), X))
    fs = ensemble_forward(rec.strong, Rs)
    weak_xe = float(np.mean(xe(G, fw)))
    strong_xe = float(np.mean(xe(G, fs)))
    misfit = max(float(np.mean(kl(fs, fw))), 0.0)
    gain = weak_xe - strong_xe
    vals = (weak_xe, strong_xe, misfit, gain)
    if not all(math.isfinite(v) for v in vals):
        raise FloatingPointError(f"non-finite evaluation for task {rec.task_id}: {vals}")
    return EvalRecord(rec.task_id, cfg.c, k, cfg.N_f, weak_xe, strong_xe, misfit, gain, gain - misfit)


def _strong_task(cfg, gt, reps, wt: WeakTask, k: int):
    base = wt.record
    rec = replace(base)
    if base.error is not None:
        return rec, None, None
    try:
        ocfg = cfg.strong_opt.with_(seed=derive_seed(cfg.seed, "strong-train", base.task_id))
        rec.strong, rec.strong_report = train_strong_ensemble(
            reps.h_s, wt.label_X, wt.label_Y, k, ocfg, cfg.reg_coef)
        ev = _evaluate(cfg, gt, reps, rec, k, "truth")
        ref = _evaluate(cfg, gt, reps, rec, k, "reference") if cfg.reference_eval else None
        return rec, ev, ref
    except Exception as exc:
        log.warning("task %d failed in the strong stage: %s", base.task_id, exc)
        rec.error = f"strong stage: {exc}"
        return rec, None, None


def _map(fn, items, threads: int):
    items = list(items)
    with threadpool_limits(limits=1):
        if threads <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))


def prepare_weak_stage(cfg: SyntheticConfig, gt: GroundTruth, reps: Representations,
                       threads: int = 1) -> list[WeakTask]:
    return _map(lambda i: _prepare_task(cfg, gt, reps, i), range(cfg.M), threads)


def run_strong_stage(cfg, gt, reps, weak_tasks: Sequence[WeakTask], k: int, threads: int = 1):
    results = _map(lambda wt: _strong_task(cfg, gt, reps, wt, k), weak_tasks, threads)
    tasks = [r[0] for r in results]
    evals = [r[1] for r in results if r[1] is not None]
    refs = [r[2] for r in results if r[2] is not None]
    return tasks, evals, refs


# --- summary ----------------------------------------------------------------------

def _stats(values: list[float]) -> dict[str, float | None]:
    if not values:
        return {"mean": None, "median": None, "stddev": None}
    return {
        "mean": statistics.fmean(values),
        "median": statistics.median(values),
        "stddev": statistics.stdev(values) if len(values) > 1 else 0.0,
    }


def _pearson(a: list[float], b: list[float]) -> float | None:
    if len(a) < 2:
        return None
    a_ = np.asarray(a) - np.mean(a)
    b_ = np.asarray(b) - np.mean(b)
    den = math.sqrt(float(a_ @ a_) * float(b_ @ b_))
    return float(a_ @ b_) / den if den > 0 else None


def summarize(records: Sequence[EvalRecord], slack_tol: float, total_tasks: int | None = None,
              failures: Sequence[str] = ()) -> dict[str, Any]:
    """Aggregate evaluation records in task order."""
    records = sorted(records, key=lambda r: r.task_id)
    out: dict[str, Any] = {}
    for metric in ("weak_xe", "strong_xe", "misfit_kl", "gain", "slack"):
        out[metric] = _stats([getattr(r, metric) for r in records])
    diff = [r.misfit_kl - r.gain for r in records]
    out["misfit_minus_gain"] = _stats(diff)
    out["pearson_gain_misfit"] = _pearson([r.gain for r in records], [r.misfit_kl for r in records])
    out["frac_slack_ge_neg_tol"] = (
        sum(r.slack >= -slack_tol for r in records) / len(records) if records else None)
    out["slack_tol"] = slack_tol
    out["completed_tasks"] = len(records)
    out["total_tasks"] = len(records) if total_tasks is None else total_tasks
    out["failures"] = list(failures)
    return out


@dataclass
class PipelineResult:
    config: SyntheticConfig
    k: int
    records: list[EvalRecord]
    summary: dict[str, Any]
    tasks: list[TaskRecord]
    reference_records: list[EvalRecord] = field(default_factory=list)
    reference_summary: dict[str, Any] | None = None


def _result(cfg, k, tasks, evals, refs) -> PipelineResult:
    failures = [f"task {t.task_id}: {t.error}" for t in tasks if t.error]
    summ = summarize(evals, cfg.slack_tol, cfg.M, failures)
    ref_summ = summarize(refs, cfg.slack_tol, cfg.M, failures) if cfg.reference_eval else None
    return PipelineResult(cfg, k, evals, summ, tasks, refs, ref_summ)


def run_pipeline(cfg: SyntheticConfig, threads: int = 1) -> PipelineResult:
    """Run every stage for all ``M`` tasks; failed tasks are left out of the
    summary and listed under ``failures``."""
    return sweep_k(cfg, [cfg.k], threads)[0]


def sweep_k(cfg: SyntheticConfig, ks: Sequence[int], threads: int = 1) -> list[PipelineResult]:
    """Run the pipeline for each ``k``, sharing ground truth, pretraining and
    weak models; only the strong stage is repeated."""
    ks = [int(k) for k in ks]
    if not ks:
        raise ValueError("ks must be nonempty")
    if any(b <= a for a, b in zip(ks, ks[1:])) or ks[0] < 1:
        raise ValueError("ks must be positive and strictly ascending")
    gt = generate_ground_truth(cfg)
    with threadpool_limits(limits=1):
        reps = pretrain_stage(cfg, gt)
    weak = prepare_weak_stage(cfg, gt, reps, threads)
    out = []
    for k in ks:
        kcfg = cfg.with_(k=k)
        tasks, evals, refs = run_strong_stage(kcfg, gt, reps, weak, k, threads)
        out.append(_result(kcfg, k, tasks, evals, refs))
    return out

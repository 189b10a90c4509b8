"""Representation MLPs, softmax heads, k-head mixtures and their gradients.

Shapes
------
* ``MlpParams.weights[l]`` is ``(out, in)``; activations are ReLU on hidden
  layers and identity on the output layer.
* A head is a ``(c - 1, d)`` matrix; its prediction on a representation ``r``
  is ``softmax([W r, 0])`` (the last class has the implicit zero logit).
* An ensemble stores ``heads`` as ``(k, c - 1, d)`` and ``mix_logits`` as
  ``(k,)``; the mixture weights are ``softmax(mix_logits)`` and the ensemble
  prediction mixes the head *probabilities*.

All batch functions take representations as ``(N, d)`` arrays and labels as
``(N, c)`` arrays.  Objectives are means over the batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .simplex import EPS_INT, clamp_to_interior

__all__ = [
    "MlpParams",
    "SoftmaxHead",
    "DEFAULT_REG_COEF",
    "HEAD_INIT_STD",
    "HeadEnsemble",
    "init_mlp",
    "init_head",
    "init_ensemble",
    "mlp_forward",
    "mlp_forward_cached",
    "mlp_backward",
    "mlp_jacobian",
    "head_logprobs",
    "head_forward",
    "ensemble_logprobs",
    "ensemble_forward",
    "forward_xe_objective",
    "grad_forward_xe",
    "reverse_kl_objective",
    "grad_reverse_kl",
    "grad_reverse_kl_head",
    "pretrain_objective",
    "grad_pretrain",
    "save_params",
    "load_params",
    "params_to_dict",
    "params_from_dict",
]

HEAD_INIT_STD = 0.01
DEFAULT_REG_COEF = 0.1


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, nonempty weight and bias lists")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (W.shape[0],):
                raise ValueError(f"bias {l} has shape {b.shape}, expected ({W.shape[0]},)")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l} input width does not match layer {l - 1}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def depth(self) -> int:
        """Number of hidden (ReLU) layers."""
        return len(self.weights) - 1

    def copy(self) -> "MlpParams":
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass
class SoftmaxHead:
    W: np.ndarray

    @property
    def c(self) -> int:
        return self.W.shape[0] + 1


@dataclass
class HeadEnsemble:
    heads: np.ndarray
    mix_logits: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.heads = np.asarray(self.heads, dtype=np.float64)
        if self.heads.ndim != 3:
            raise ValueError("heads must have shape (k, c - 1, d)")
        if self.mix_logits is None:
            self.mix_logits = np.zeros(self.k)
        self.mix_logits = np.asarray(self.mix_logits, dtype=np.float64)
        if self.mix_logits.shape != (self.k,):
            raise ValueError("need one mixture logit per head")

    @property
    def k(self) -> int:
        return self.heads.shape[0]

    @property
    def c(self) -> int:
        return self.heads.shape[1] + 1

    @property
    def weights(self) -> np.ndarray:
        """Mixture weights, strictly inside the simplex."""
        return softmax(self.mix_logits)

    def copy(self) -> "HeadEnsemble":
        return HeadEnsemble(self.heads.copy(), self.mix_logits.copy())


def init_mlp(in_dim: int, hidden: int, out_dim: int, depth: int,
             rng: np.random.Generator) -> MlpParams:
    """MLP with ``depth`` hidden layers of width ``hidden``.  Weights and
    biases are uniform on ``(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    dims = [in_dim] + [hidden] * depth + [out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases)


def init_head(c: int, d: int, rng: np.random.Generator, std: float = HEAD_INIT_STD) -> SoftmaxHead:
    return SoftmaxHead(rng.normal(0.0, std, size=(c - 1, d)))


def init_ensemble(k: int, c: int, d: int, rng: np.random.Generator,
                  std: float = HEAD_INIT_STD) -> HeadEnsemble:
    return HeadEnsemble(rng.normal(0.0, std, size=(k, c - 1, d)), np.zeros(k))


# --- MLP ------------------------------------------------------------------------

def mlp_forward_cached(params: MlpParams, X: np.ndarray):
    """Forward pass keeping the layer inputs and pre-activations."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.in_dim:
        raise ValueError(f"input width {X.shape[-1]} does not match in_dim {params.in_dim}")
    inputs, pre = [], []
    h = X
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ W.T + b
        pre.append(a)
        h = np.maximum(a, 0.0) if l < last else a
    return h, (inputs, pre)


def mlp_forward(params: MlpParams, X) -> np.ndarray:
    return mlp_forward_cached(params, X)[0]


def mlp_backward(params: MlpParams, cache, grad_out: np.ndarray):
    """Gradients w.r.t. weights and biases given ``d loss / d output``.

    The ReLU derivative at exactly zero is taken as zero.
    """
    inputs, pre = cache
    gW = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    g = grad_out
    for l in range(len(params.weights) - 1, -1, -1):
        gW[l] = g.T @ inputs[l]
        gb[l] = g.sum(axis=0)
        if l:
            g = (g @ params.weights[l]) * (pre[l - 1] > 0.0)
    return gW, gb


def mlp_jacobian(params: MlpParams, x) -> np.ndarray:
    """``d output / d input`` at a single point, shape ``(out_dim, in_dim)``."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    _, (inputs, pre) = mlp_forward_cached(params, x)
    J = params.weights[0]
    for l in range(1, len(params.weights)):
        J = params.weights[l] @ ((pre[l - 1][0] > 0.0)[:, None] * J)
    return J


# --- heads ----------------------------------------------------------------------

def _with_zero(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z, np.zeros(z.shape[:-1] + (1,))], axis=-1)


def _head_matrix(head) -> np.ndarray:
    return head.W if isinstance(head, SoftmaxHead) else np.asarray(head, dtype=np.float64)


def head_logprobs(head, R) -> np.ndarray:
    W = _head_matrix(head)
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-1] != W.shape[1]:
        raise ValueError(f"representation width {R.shape[-1]} does not match head width {W.shape[1]}")
    return log_softmax(_with_zero(R @ W.T), axis=-1)


def head_forward(head, R, eps: float = EPS_INT) -> np.ndarray:
    """Class probabilities of a head, floored at ``eps``."""
    return clamp_to_interior(np.exp(head_logprobs(head, R)), eps)


def _ensemble_terms(ens: HeadEnsemble, R: np.ndarray):
    """Per-head probabilities laid out ``(c, N, k)`` and mixture
    log-probabilities ``(N, c)``.

    The class axis leads so that reductions over classes are elementwise
    operations across slices, and the head axis is contiguous for the
    mixture reduction.
    """
    R = np.asarray(R, dtype=np.float64)
    k, cm1, d = ens.heads.shape
    if R.shape[-1] != d:
        raise ValueError("representation width does not match ensemble heads")
    Z = np.zeros((cm1 + 1, len(R), k))
    np.matmul(R, ens.heads.transpose(1, 2, 0), out=Z[:cm1])
    Z -= Z.max(axis=0)
    q = np.exp(Z)
    s = q.sum(axis=0)
    q /= s
    lam = ens.weights
    with np.errstate(divide="ignore"):
        logp = np.log(q @ lam)
    under = ~np.isfinite(logp)
    if under.any():
        # mixture probability below the smallest float: redo in log space
        with np.errstate(divide="ignore"):
            S = Z[under] - np.log(np.broadcast_to(s, Z.shape)[under]) + np.log(lam)
        logp[under] = logsumexp(S, axis=-1)
    return q, logp.T


def ensemble_logprobs(ens: HeadEnsemble, R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 1:
        return _ensemble_terms(ens, R[None])[1][0]
    blocks = _row_blocks(len(R), ens.c, ens.k)
    if len(blocks) <= 1:
        return _ensemble_terms(ens, R)[1]
    return np.concatenate([_ensemble_terms(ens, R[b])[1] for b in blocks])


def ensemble_forward(ens: HeadEnsemble, R, eps: float = EPS_INT) -> np.ndarray:
    """``sum_a lambda_a head_a(R)``, floored at ``eps``."""
    return clamp_to_interior(np.exp(ensemble_logprobs(ens, R)), eps)


# --- objectives and gradients ------------------------------------------------------

def forward_xe_objective(head, R, Y) -> float:
    """Mean cross-entropy ``XE(y || head(r))`` with the label first."""
    logq = head_logprobs(head, R)
    return float(-np.sum(Y * logq) / len(R))


def grad_forward_xe(head, R, Y):
    """Objective and gradient of :func:`forward_xe_objective` w.r.t. ``W``."""
    R = np.asarray(R, dtype=np.float64)
    logq = head_logprobs(head, R)
    n = len(R)
    obj = float(-np.sum(Y * logq) / n)
    dz = (np.exp(logq) - Y)[:, :-1] / n
    return obj, dz.T @ R


def _check_labels(Y: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if np.any(Y <= 0.0):
        bad = np.argwhere(Y <= 0.0)[0]
        raise ValueError(f"labels must be interior; entry {tuple(bad)} is {Y[tuple(bad)]}")
    return Y


def reverse_kl_objective(ens: HeadEnsemble, R, Y, reg_coef: float = DEFAULT_REG_COEF) -> float:
    """Mean ``KL(ensemble(r) || y)`` plus ``reg_coef * sum_a |W_a|^2``."""
    Y = _check_labels(Y)
    _, logp = _ensemble_terms(ens, R)
    p = np.exp(logp)
    kl = np.sum(p * (logp - np.log(Y))) / len(Y)
    return float(kl + reg_coef * np.sum(ens.heads ** 2))


def _row_blocks(n: int, c: int, k: int):
    """Row slices sized so that one ``(c, rows, k)`` block fits in cache.
    The split depends only on the shapes, so results are reproducible."""
    rows = max(8, _BLOCK_ELEMS // (c * k))
    return [slice(i, min(i + rows, n)) for i in range(0, n, rows)]


_BLOCK_ELEMS = 1 << 15


def grad_reverse_kl(ens: HeadEnsemble, R, Y, reg_coef: float = DEFAULT_REG_COEF):
    """Objective and gradients of :func:`reverse_kl_objective`.

    Returns ``(objective, d_heads, d_mix_logits)``.
    """
    R = np.asarray(R, dtype=np.float64)
    Y = _check_labels(Y)
    n = len(R)
    k, cm1, _ = ens.heads.shape
    lam = ens.weights
    kl = 0.0
    raw = np.zeros((cm1, k, R.shape[1]))
    h = np.zeros(k)
    for b in _row_blocks(n, cm1 + 1, k):
        q, logp = _ensemble_terms(ens, R[b])
        G = (logp - np.log(Y[b])) / n
        part = float(np.sum(np.exp(logp) * G))
        if not math.isfinite(part):
            bad = np.argwhere(~np.isfinite(G))
            where = (bad[0][0] + b.start, bad[0][1]) if len(bad) else "objective"
            raise FloatingPointError(f"non-finite reverse-KL term at index {where}")
        kl += part
        # A[c, n, a] = q[c, n, a] * (G[n, c] - H[n, a]); the factor lam_a is
        # applied after contracting over n
        A = q * G.T[:, :, None]
        H = A.sum(axis=0)
        A[:-1] -= q[:-1] * H
        raw += A[:-1].transpose(0, 2, 1) @ R[b]
        h += H.sum(axis=0)
    obj = float(kl + reg_coef * np.sum(ens.heads ** 2))
    d_heads = raw.transpose(1, 0, 2) * lam[:, None, None] + 2.0 * reg_coef * ens.heads
    d_mix = lam * (h - lam @ h)
    return obj, d_heads, d_mix


def grad_reverse_kl_head(head, R, Y, reg_coef: float = DEFAULT_REG_COEF):
    """Objective and gradient of ``mean KL(head(r) || y) + reg |W|^2`` for a
    single head; the ``k = 1`` special case written out directly."""
    W = _head_matrix(head)
    R = np.asarray(R, dtype=np.float64)
    Y = _check_labels(Y)
    n = len(R)
    logq = head_logprobs(W, R)
    q = np.exp(logq)
    G = (logq - np.log(Y)) / n
    obj = float(np.sum(q * G) + reg_coef * np.sum(W ** 2))
    dz = q * (G - np.sum(q * G, axis=1, keepdims=True))
    return obj, dz[:, :-1].T @ R + 2.0 * reg_coef * W


def _pretrain_forward(params: MlpParams, heads: np.ndarray, X: np.ndarray):
    T, N, _ = X.shape
    rep, cache = mlp_forward_cached(params, X.reshape(T * N, -1))
    rep = rep.reshape(T, N, -1)
    logq = log_softmax(_with_zero(np.einsum("tnd,tcd->tnc", rep, heads)), axis=-1)
    return rep, cache, logq


def pretrain_objective(params: MlpParams, heads, X, Y) -> float:
    """Pooled mean cross-entropy over ``T`` tasks: ``X`` is ``(T, N, in)``,
    ``Y`` is ``(T, N, c)`` and ``heads`` is ``(T, c - 1, d)``."""
    _, _, logq = _pretrain_forward(params, np.asarray(heads), np.asarray(X))
    return float(-np.sum(Y * logq) / (X.shape[0] * X.shape[1]))


def grad_pretrain(params: MlpParams, heads, X, Y):
    """Objective and gradients of :func:`pretrain_objective`.

    Returns ``(objective, dW_list, db_list, d_heads)``.
    """
    heads = np.asarray(heads, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    T, N, _ = X.shape
    rep, cache, logq = _pretrain_forward(params, heads, X)
    obj = float(-np.sum(Y * logq) / (T * N))
    dz = (np.exp(logq) - Y)[..., :-1] / (T * N)
    d_heads = np.einsum("tnc,tnd->tcd", dz, rep)
    d_rep = np.einsum("tnc,tcd->tnd", dz, heads).reshape(T * N, -1)
    gW, gb = mlp_backward(params, cache, d_rep)
    return obj, gW, gb, d_heads


# --- serialization ------------------------------------------------------------------

FORMAT = "bregwts-params"
VERSION = 1


def _enc(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "hex": [float(v).hex() for v in a.ravel()]}


def _dec(d: dict) -> np.ndarray:
    return np.array([float.fromhex(h) for h in d["hex"]], dtype=np.float64).reshape(d["shape"])


def params_to_dict(obj) -> dict:
    """Bit-exact JSON-ready encoding (floats as C99 hex strings)."""
    if isinstance(obj, MlpParams):
        body = {"kind": "mlp", "weights": [_enc(W) for W in obj.weights],
                "biases": [_enc(b) for b in obj.biases]}
    elif isinstance(obj, SoftmaxHead):
        body = {"kind": "head", "W": _enc(obj.W)}
    elif isinstance(obj, HeadEnsemble):
        body = {"kind": "ensemble", "heads": _enc(obj.heads), "mix_logits": _enc(obj.mix_logits)}
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    return {"format": FORMAT, "version": VERSION, **body}


def params_from_dict(d: dict):
    if d.get("format") != FORMAT:
        raise ValueError("not a bregwts parameter snapshot")
    if d.get("version") != VERSION:
        raise ValueError(f"unsupported snapshot version {d.get('version')}")
    kind = d["kind"]
    if kind == "mlp":
        return MlpParams([_dec(w) for w in d["weights"]], [_dec(b) for b in d["biases"]])
    if kind == "head":
        return SoftmaxHead(_dec(d["W"]))
    if kind == "ensemble":
        return HeadEnsemble(_dec(d["heads"]), _dec(d["mix_logits"]))
    raise ValueError(f"unknown snapshot kind {kind!r}")


def save_params(obj, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(obj)))


def load_params(path):
    return params_from_dict(json.loads(Path(path).read_text()))

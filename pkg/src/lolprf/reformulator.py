"""Vector-space query reformulation from pseudo-relevance feedback.

The learned model reads a slot sequence ``[query, doc_1, ..., doc_k]``,
runs it through a small post-LN transformer encoder, projects back into the
index space and pools the slots into one revised query vector:

* dense:  linear projector on slot 0, then layer norm
* sparse: dense -> GeLU -> layer norm -> decoder on every slot, max-pool over
  slots, ReLU, L2 normalisation

Forward passes in training mode return a :class:`ComputationTape`; gradients
come from :func:`backward`, written by hand against the tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import erf

from .core import DENSE, SPARSE, ContractViolation, FeedbackSet, NumericFailure, Query, VectorRepr

LN_EPS = 1e-5
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ReformulatorConfig:
    kind: str = DENSE
    input_dim: int = 16        # D for dense, vocabulary size V for sparse
    width: int = 32
    n_layers: int = 1
    n_heads: int = 2
    ffn_width: int = 64
    mlp_width: int = 32        # hidden width of the sparse projector
    max_depth: int = 5
    use_position: bool = True
    projector_bias: bool = True

    def validate(self) -> None:
        if self.kind not in (DENSE, SPARSE):
            raise ContractViolation(f"unknown kind {self.kind!r}")
        for name in ("input_dim", "width", "n_layers", "n_heads", "ffn_width", "mlp_width"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")
        if self.width % self.n_heads:
            raise ContractViolation("width must be divisible by n_heads")
        if self.max_depth < 0:
            raise ContractViolation("max_depth must be >= 0")

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        self.validate()
        W, D = self.width, self.input_dim
        shapes: Dict[str, Tuple[int, ...]] = {
            "adapter.query.weight": (D, W),
            "adapter.query.bias": (W,),
            "adapter.doc.weight": (D, W),
            "adapter.doc.bias": (W,),
        }
        if self.use_position:
            shapes["position"] = (self.max_depth + 1, W)
        for l in range(self.n_layers):
            p = f"encoder.{l}."
            for m in ("q", "k", "v", "o"):
                shapes[p + f"attn.w{m}"] = (W, W)
                shapes[p + f"attn.b{m}"] = (W,)
            shapes[p + "ln1.gain"] = (W,)
            shapes[p + "ln1.bias"] = (W,)
            shapes[p + "ffn.w1"] = (W, self.ffn_width)
            shapes[p + "ffn.b1"] = (self.ffn_width,)
            shapes[p + "ffn.w2"] = (self.ffn_width, W)
            shapes[p + "ffn.b2"] = (W,)
            shapes[p + "ln2.gain"] = (W,)
            shapes[p + "ln2.bias"] = (W,)
        if self.kind == DENSE:
            shapes["projector.weight"] = (W, D)
            if self.projector_bias:
                shapes["projector.bias"] = (D,)
            shapes["pooler.ln.gain"] = (D,)
            shapes["pooler.ln.bias"] = (D,)
        else:
            M = self.mlp_width
            shapes["projector.dense.weight"] = (W, M)
            shapes["projector.dense.bias"] = (M,)
            shapes["projector.ln.gain"] = (M,)
            shapes["projector.ln.bias"] = (M,)
            shapes["projector.decoder.weight"] = (M, D)
            shapes["projector.decoder.bias"] = (D,)
        return shapes

    def n_parameters(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


@dataclass
class ReformulatorParams:
    config: ReformulatorConfig
    tensors: Dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.config.shapes()
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ContractViolation(f"parameter names do not match config (missing={missing}, extra={extra})")
        for name, shape in expected.items():
            arr = self.tensors[name]
            if arr.shape != shape:
                raise ContractViolation(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f"{name} has non-finite entries")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ReformulatorParams":
        return ReformulatorParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(config: ReformulatorConfig, seed: int) -> ReformulatorParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; layer norms at gain 1, bias 0."""
    rng = np.random.default_rng(seed)
    tensors = {}
    shapes = config.shapes()
    for name, shape in shapes.items():
        if name.endswith(".gain"):
            tensors[name] = np.ones(shape)
        elif ".ln" in name or name.startswith("pooler.ln"):
            tensors[name] = np.zeros(shape)
        else:
            if len(shape) == 2:
                fan_in = shape[0] if name != "position" else shape[1]
            else:
                # a bias shares the fan-in of its weight matrix
                fan_in = shapes[_weight_for_bias(name)][0]
            bound = 1.0 / math.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ReformulatorParams(config, tensors)


def _weight_for_bias(name: str) -> str:
    if name.endswith("attn.bq") or name.endswith("attn.bk") or name.endswith("attn.bv") or name.endswith("attn.bo"):
        return name[:-2] + "w" + name[-1]
    if name.endswith("ffn.b1"):
        return name[:-2] + "w1"
    if name.endswith("ffn.b2"):
        return name[:-2] + "w2"
    return name[: -len("bias")] + "weight"


# -- primitives ---------------------------------------------------------------

def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv_std
    return xhat * gain + bias, (xhat, inv_std)


def _layer_norm_backward(dy, gain, cache):
    xhat, inv_std = cache
    n = xhat.shape[-1]
    dxhat = dy * gain
    dgain = (dy * xhat).reshape(-1, n).sum(axis=0)
    dbias = dy.reshape(-1, n).sum(axis=0)
    dx = inv_std / n * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_finite(arr, where: str):
    if not np.all(np.isfinite(arr)):
        raise NumericFailure(f"non-finite activation in {where}")


# -- forward / backward ---------------------------------------------------------

@dataclass
class ComputationTape:
    """Everything a forward pass recorded, enough to replay it or take gradients."""

    params: ReformulatorParams
    query: np.ndarray
    docs: np.ndarray
    caches: Dict[str, tuple] = field(repr=False)
    output: np.ndarray = field(repr=False)

    def replay(self) -> np.ndarray:
        out, _ = _forward(self.params, self.query, self.docs)
        return out


@dataclass
class RevisedQuery:
    query_id: str
    depth_k: int
    vector: VectorRepr
    tape: Optional[ComputationTape] = None


def _forward(params: ReformulatorParams, q: np.ndarray, docs: np.ndarray):
    cfg = params.config
    P = params.tensors
    k = docs.shape[0]
    n = k + 1
    H = cfg.n_heads
    dh = cfg.width // H
    caches: Dict[str, tuple] = {}

    x = np.empty((n, cfg.width))
    x[0] = q @ P["adapter.query.weight"] + P["adapter.query.bias"]
    if k:
        x[1:] = docs @ P["adapter.doc.weight"] + P["adapter.doc.bias"]
    if cfg.use_position:
        x = x + P["position"][:n]
    _check_finite(x, "input adapter")

    for l in range(cfg.n_layers):
        p = f"encoder.{l}."
        Qm = x @ P[p + "attn.wq"] + P[p + "attn.bq"]
        Km = x @ P[p + "attn.wk"] + P[p + "attn.bk"]
        Vm = x @ P[p + "attn.wv"] + P[p + "attn.bv"]
        Qh = Qm.reshape(n, H, dh).transpose(1, 0, 2)
        Kh = Km.reshape(n, H, dh).transpose(1, 0, 2)
        Vh = Vm.reshape(n, H, dh).transpose(1, 0, 2)
        S = Qh @ Kh.transpose(0, 2, 1) / math.sqrt(dh)
        A = _softmax(S)
        C = (A @ Vh).transpose(1, 0, 2).reshape(n, cfg.width)
        att = C @ P[p + "attn.wo"] + P[p + "attn.bo"]
        y1, ln1 = _layer_norm(x + att, P[p + "ln1.gain"], P[p + "ln1.bias"])
        U = y1 @ P[p + "ffn.w1"] + P[p + "ffn.b1"]
        G = gelu(U)
        F = G @ P[p + "ffn.w2"] + P[p + "ffn.b2"]
        y2, ln2 = _layer_norm(y1 + F, P[p + "ln2.gain"], P[p + "ln2.bias"])
        _check_finite(y2, f"encoder layer {l}")
        caches[p] = (x, Qh, Kh, Vh, A, C, y1, ln1, U, G, ln2)
        x = y2

    if cfg.kind == DENSE:
        z = x[0] @ P["projector.weight"]
        if cfg.projector_bias:
            z = z + P["projector.bias"]
        out, ln = _layer_norm(z, P["pooler.ln.gain"], P["pooler.ln.bias"])
        _check_finite(out, "dense pooler")
        caches["head"] = (x, ln)
    else:
        U = x @ P["projector.dense.weight"] + P["projector.dense.bias"]
        G = gelu(U)
        T, ln = _layer_norm(G, P["projector.ln.gain"], P["projector.ln.bias"])
        Z = T @ P["projector.decoder.weight"] + P["projector.decoder.bias"]
        _check_finite(Z, "sparse projector")
        # np.argmax picks the first maximum, i.e. the lowest slot on ties
        arg = Z.argmax(axis=0)
        pooled = Z[arg, np.arange(Z.shape[1])]
        r = np.maximum(pooled, 0.0)
        norm = math.sqrt(float(r @ r))
        if norm == 0.0:
            raise NumericFailure("sparse pooler produced an all-zero vector")
        out = r / norm
        caches["head"] = (x, U, G, T, ln, arg, pooled, norm, out)
    return out, caches


def _to_inputs(params: ReformulatorParams, q: Query, feedback: FeedbackSet):
    cfg = params.config
    if feedback.depth_k > cfg.max_depth:
        raise ContractViolation(f"feedback depth {feedback.depth_k} exceeds max depth {cfg.max_depth}")
    if q.vector.kind != cfg.kind or q.vector.dim != cfg.input_dim:
        raise ContractViolation(f"query vector is {q.vector.kind}/{q.vector.dim}, model expects {cfg.kind}/{cfg.input_dim}")
    docs = np.zeros((feedback.depth_k, cfg.input_dim))
    for i, v in enumerate(feedback.vectors):
        if v.kind != cfg.kind or v.dim != cfg.input_dim:
            raise ContractViolation(f"feedback doc {feedback.doc_ids[i]} has wrong kind/dim")
        docs[i] = v.to_array()
    return q.vector.to_array(), docs


def reformulate_arrays(params: ReformulatorParams, q: np.ndarray, docs: np.ndarray, training: bool = False):
    """Array-level forward pass. Returns ``(output, tape or None)``."""
    if docs.shape[0] > params.config.max_depth:
        raise ContractViolation(f"feedback depth {docs.shape[0]} exceeds max depth {params.config.max_depth}")
    out, caches = _forward(params, q, docs)
    if not training:
        return out, None
    return out, ComputationTape(params, q, docs, caches, out)


def reformulate(params: ReformulatorParams, q: Query, feedback: FeedbackSet, mode: str = "inference") -> RevisedQuery:
    if mode not in ("inference", "training"):
        raise ContractViolation(f"unknown mode {mode!r}")
    qa, docs = _to_inputs(params, q, feedback)
    out, tape = reformulate_arrays(params, qa, docs, training=(mode == "training"))
    if params.config.kind == DENSE:
        vec = VectorRepr.dense(out)
    else:
        vec = VectorRepr.sparse_from_array(out)
    return RevisedQuery(q.query_id, feedback.depth_k, vec, tape)


@dataclass
class Gradients:
    params: Dict[str, np.ndarray]
    query: np.ndarray
    docs: np.ndarray


def backward(tape: ComputationTape, output_gradient) -> Gradients:
    """Exact reverse-mode gradients of ``output_gradient . output``."""
    g_out = np.asarray(output_gradient, dtype=np.float64)
    if g_out.shape != tape.output.shape:
        raise ContractViolation(f"output gradient has shape {g_out.shape}, expected {tape.output.shape}")
    params = tape.params
    cfg = params.config
    P = params.tensors
    grads = {name: np.zeros_like(v) for name, v in P.items()}
    caches = tape.caches
    n = tape.docs.shape[0] + 1
    H = cfg.n_heads
    dh = cfg.width // H

    if cfg.kind == DENSE:
        x, ln = caches["head"]
        dz, grads["pooler.ln.gain"], grads["pooler.ln.bias"] = _layer_norm_backward(g_out, P["pooler.ln.gain"], ln)
        grads["projector.weight"] = np.outer(x[0], dz)
        if cfg.projector_bias:
            grads["projector.bias"] = dz
        dx = np.zeros_like(x)
        dx[0] = P["projector.weight"] @ dz
    else:
        x, U, G, T, ln, arg, pooled, norm, out = caches["head"]
        dr = (g_out - out * (out @ g_out)) / norm
        dpooled = dr * (pooled > 0)
        dZ = np.zeros((n, cfg.input_dim))
        dZ[arg, np.arange(cfg.input_dim)] = dpooled
        grads["projector.decoder.weight"] = T.T @ dZ
        grads["projector.decoder.bias"] = dZ.sum(axis=0)
        dT = dZ @ P["projector.decoder.weight"].T
        dG, grads["projector.ln.gain"], grads["projector.ln.bias"] = _layer_norm_backward(dT, P["projector.ln.gain"], ln)
        dU = dG * _gelu_grad(U)
        grads["projector.dense.weight"] = x.T @ dU
        grads["projector.dense.bias"] = dU.sum(axis=0)
        dx = dU @ P["projector.dense.weight"].T

    for l in reversed(range(cfg.n_layers)):
        p = f"encoder.{l}."
        x_in, Qh, Kh, Vh, A, C, y1, ln1, U, G, ln2 = caches[p]
        dr2, grads[p + "ln2.gain"], grads[p + "ln2.bias"] = _layer_norm_backward(dx, P[p + "ln2.gain"], ln2)
        grads[p + "ffn.w2"] = G.T @ dr2
        grads[p + "ffn.b2"] = dr2.sum(axis=0)
        dU = (dr2 @ P[p + "ffn.w2"].T) * _gelu_grad(U)
        grads[p + "ffn.w1"] = y1.T @ dU
        grads[p + "ffn.b1"] = dU.sum(axis=0)
        dy1 = dr2 + dU @ P[p + "ffn.w1"].T
        dr1, grads[p + "ln1.gain"], grads[p + "ln1.bias"] = _layer_norm_backward(dy1, P[p + "ln1.gain"], ln1)
        grads[p + "attn.wo"] = C.T @ dr1
        grads[p + "attn.bo"] = dr1.sum(axis=0)
        dC = (dr1 @ P[p + "attn.wo"].T).reshape(n, H, dh).transpose(1, 0, 2)
        dA = dC @ Vh.transpose(0, 2, 1)
        dVh = A.transpose(0, 2, 1) @ dC
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) / math.sqrt(dh)
        dQh = dS @ Kh
        dKh = dS.transpose(0, 2, 1) @ Qh
        dQ = dQh.transpose(1, 0, 2).reshape(n, cfg.width)
        dK = dKh.transpose(1, 0, 2).reshape(n, cfg.width)
        dV = dVh.transpose(1, 0, 2).reshape(n, cfg.width)
        dx = dr1.copy()
        for m, dM in (("q", dQ), ("k", dK), ("v", dV)):
            grads[p + f"attn.w{m}"] = x_in.T @ dM
            grads[p + f"attn.b{m}"] = dM.sum(axis=0)
            dx += dM @ P[p + f"attn.w{m}"].T

    if cfg.use_position:
        grads["position"][:n] = dx
    grads["adapter.query.weight"] = np.outer(tape.query, dx[0])
    grads["adapter.query.bias"] = dx[0].copy()
    grads["adapter.doc.weight"] = tape.docs.T @ dx[1:]
    grads["adapter.doc.bias"] = dx[1:].sum(axis=0)
    d_query = P["adapter.query.weight"] @ dx[0]
    d_docs = dx[1:] @ P["adapter.doc.weight"].T
    return Gradients(grads, d_query, d_docs)


# -- heuristic baseline ---------------------------------------------------------

def rocchio_reformulate(q: Query, feedback: FeedbackSet, alpha: float = 1.0, beta: float = 0.75) -> RevisedQuery:
    """``alpha * q + beta * mean(feedback docs)``; no learned parameters."""
    base = q.vector
    for i, v in enumerate(feedback.vectors):
        if v.kind != base.kind or v.dim != base.dim:
            raise ContractViolation(f"feedback doc {feedback.doc_ids[i]} has wrong kind/dim")
    k = feedback.depth_k
    if base.kind == DENSE:
        out = alpha * base.values
        if k:
            out = out + (beta / k) * np.sum([v.values for v in feedback.vectors], axis=0)
        return RevisedQuery(q.query_id, k, VectorRepr.dense(out))
    acc: Dict[int, float] = {t: alpha * w for t, w in base.entries.items()}
    if k:
        scale = beta / k
        for v in feedback.vectors:
            for t, w in v.entries.items():
                acc[t] = acc.get(t, 0.0) + scale * w
    # negative alpha/beta could push weights below zero; sparse space is non-negative
    acc = {t: w for t, w in acc.items() if w > 0}
    return RevisedQuery(q.query_id, k, VectorRepr.sparse(acc, base.dim))

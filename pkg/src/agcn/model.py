"""Hop-masked multi-head attention model.

Each layer projects keys and values once for all nodes and caches them;
per-node attention then gathers only the rows allowed by the k-hop mask,
so the number of score evaluations per layer and head is exactly the total
mask size. The residual path maps the original node features (default) or
the previous hidden state into the layer output. A final linear projection
produces the embedding matrix.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .graph import Graph, KHopMask

__all__ = [
    "Dims",
    "LayerParams",
    "ModelParams",
    "LayerCache",
    "EvalCounter",
    "init_params",
    "layer_forward",
    "vanilla_layer_forward",
    "forward",
    "save_params",
    "load_params",
]

_MAGIC = b"AGCNPAR1"


@dataclass(frozen=True)
class Dims:
    """Model dimension record.

    d: input feature width; d_model: layer output width; d_q/d_v: total
    query/key and value widths (split across heads); d_out: embedding width.
    ``residual`` selects the residual source: "input" feeds the original
    features into every layer, "hidden" feeds the previous layer's output.
    """

    d: int
    d_model: int
    d_q: int
    d_v: int
    heads: int
    layers: int
    d_out: int
    residual: str = "input"

    def __post_init__(self):
        for name in ("d", "d_model", "d_q", "d_v", "heads", "layers", "d_out"):
            if getattr(self, name) < 1:
                raise ConfigError(f"dims.{name} must be >= 1")
        if self.d_q % self.heads:
            raise ConfigError(f"d_q={self.d_q} not divisible by heads={self.heads}")
        if self.d_v % self.heads:
            raise ConfigError(f"d_v={self.d_v} not divisible by heads={self.heads}")
        if self.residual not in ("input", "hidden"):
            raise ConfigError("residual must be 'input' or 'hidden'")

    def layer_in(self, layer: int) -> int:
        return self.d if layer == 0 else self.d_model

    def residual_in(self, layer: int) -> int:
        return self.d if self.residual == "input" else self.layer_in(layer)


@dataclass(frozen=True)
class LayerParams:
    """One attention layer: per-head blocks stored contiguously by columns."""

    wq: np.ndarray      # (d_in, d_q)
    wk: np.ndarray      # (d_in, d_q)
    wv: np.ndarray      # (d_in, d_v)
    wo: np.ndarray      # (d_v, d_model)
    wres: np.ndarray    # (res_in, d_model)
    heads: int

    def head_slices(self):
        dqh = self.wq.shape[1] // self.heads
        dvh = self.wv.shape[1] // self.heads
        for h in range(self.heads):
            yield slice(h * dqh, (h + 1) * dqh), slice(h * dvh, (h + 1) * dvh)


@dataclass(frozen=True)
class ModelParams:
    dims: Dims
    layers: tuple[LayerParams, ...]
    final_proj: np.ndarray   # (d_model, d_out)

    def tensors(self):
        """Yield (name, array) in a fixed serialization order."""
        for i, lp in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo", "wres"):
                yield f"layers.{i}.{name}", getattr(lp, name)
        yield "final_proj", self.final_proj

    def zeros_like(self) -> "ModelParams":
        layers = tuple(
            LayerParams(*(np.zeros_like(getattr(lp, n))
                          for n in ("wq", "wk", "wv", "wo", "wres")),
                        heads=lp.heads)
            for lp in self.layers
        )
        return ModelParams(self.dims, layers, np.zeros_like(self.final_proj))


@dataclass(frozen=True)
class LayerCache:
    """Keys and values for all nodes of one layer, heads contiguous by column."""

    k_full: np.ndarray   # (n, d_q)
    v_full: np.ndarray   # (n, d_v)


class EvalCounter:
    """Counts attention-score evaluations per (layer, head)."""

    def __init__(self):
        self.counts = {}

    def add(self, layer: int, head: int, n: int):
        key = (layer, head)
        self.counts[key] = self.counts.get(key, 0) + n

    def per_layer(self) -> dict:
        out = {}
        for (layer, _), n in self.counts.items():
            out[layer] = out.get(layer, 0) + n
        return out

    def total(self) -> int:
        return sum(self.counts.values())

    def reset(self):
        self.counts.clear()


def _xavier(rng, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_params(dims: Dims, seed: int) -> ModelParams:
    """Uniform Xavier initialization, drawn per head; deterministic under seed."""
    rng = np.random.default_rng(seed)
    dqh = dims.d_q // dims.heads
    dvh = dims.d_v // dims.heads
    layers = []
    for l in range(dims.layers):
        d_in = dims.layer_in(l)
        wq = np.hstack([_xavier(rng, d_in, dqh) for _ in range(dims.heads)])
        wk = np.hstack([_xavier(rng, d_in, dqh) for _ in range(dims.heads)])
        wv = np.hstack([_xavier(rng, d_in, dvh) for _ in range(dims.heads)])
        wo = _xavier(rng, dims.d_v, dims.d_model)
        wres = _xavier(rng, dims.residual_in(l), dims.d_model)
        layers.append(LayerParams(wq, wk, wv, wo, wres, heads=dims.heads))
    final_proj = _xavier(rng, dims.d_model, dims.d_out)
    return ModelParams(dims=dims, layers=tuple(layers), final_proj=final_proj)


@dataclass
class _LayerTape:
    h_in: np.ndarray
    res_src: np.ndarray
    q_full: np.ndarray
    k_full: np.ndarray
    v_full: np.ndarray
    ctx: np.ndarray
    alphas: list            # per head: flat (nnz,) for masked, (n, n) for dense
    dense: bool


def _check_finite(h: np.ndarray, layer: int):
    if np.all(np.isfinite(h)):
        return
    bad = int(np.flatnonzero(~np.isfinite(h).all(axis=1))[0])
    raise NumericError(f"non-finite output at layer {layer}, node {bad}")


def _masked_layer(h_prev, res_src, mask: KHopMask, p: LayerParams,
                  layer_idx=0, counter: EvalCounter | None = None) -> _LayerTape:
    n = h_prev.shape[0]
    q_full = h_prev @ p.wq
    k_full = h_prev @ p.wk
    v_full = h_prev @ p.wv
    src = mask.src_ids()
    dst = mask.indices
    starts = mask.indptr[:-1]
    ctx = np.empty((n, p.wv.shape[1]))
    alphas = []
    dqh = p.wq.shape[1] // p.heads
    inv_scale = 1.0 / np.sqrt(dqh)
    for h, (qs, vs) in enumerate(p.head_slices()):
        qh, kh, vh = q_full[:, qs], k_full[:, qs], v_full[:, vs]
        scores = np.einsum("ed,ed->e", qh[src], kh[dst]) * inv_scale
        if counter is not None:
            counter.add(layer_idx, h, len(scores))
        seg_max = np.maximum.reduceat(scores, starts)
        z = np.exp(scores - seg_max[src])
        denom = np.add.reduceat(z, starts)
        alpha = z / denom[src]
        ctx[:, vs] = mask.pattern(alpha) @ vh
        alphas.append(alpha)
    return _LayerTape(h_in=h_prev, res_src=res_src, q_full=q_full,
                      k_full=k_full, v_full=v_full, ctx=ctx,
                      alphas=alphas, dense=False)


def _dense_layer(h_prev, res_src, p: LayerParams,
                 layer_idx=0, counter: EvalCounter | None = None) -> _LayerTape:
    n = h_prev.shape[0]
    q_full = h_prev @ p.wq
    k_full = h_prev @ p.wk
    v_full = h_prev @ p.wv
    ctx = np.empty((n, p.wv.shape[1]))
    alphas = []
    dqh = p.wq.shape[1] // p.heads
    inv_scale = 1.0 / np.sqrt(dqh)
    for h, (qs, vs) in enumerate(p.head_slices()):
        qh, kh, vh = q_full[:, qs], k_full[:, qs], v_full[:, vs]
        scores = (qh @ kh.T) * inv_scale
        if counter is not None:
            counter.add(layer_idx, h, scores.size)
        scores -= scores.max(axis=1, keepdims=True)
        expo = np.exp(scores)
        attn = expo / expo.sum(axis=1, keepdims=True)
        ctx[:, vs] = attn @ vh
        alphas.append(attn)
    return _LayerTape(h_in=h_prev, res_src=res_src, q_full=q_full,
                      k_full=k_full, v_full=v_full, ctx=ctx,
                      alphas=alphas, dense=True)


def _tape_output(tape: _LayerTape, p: LayerParams) -> np.ndarray:
    return tape.ctx @ p.wo + tape.res_src @ p.wres


def layer_forward(h_prev, x, mask: KHopMask, p: LayerParams,
                  counter: EvalCounter | None = None):
    """One hop-masked attention layer.

    ``x`` is the residual source added through ``wres`` (the original node
    features under the default residual mode). Returns the layer output and
    the cache of full key/value projections.
    """
    tape = _masked_layer(h_prev, x, mask, p, counter=counter)
    out = _tape_output(tape, p)
    _check_finite(out, layer=0)
    return out, LayerCache(k_full=tape.k_full, v_full=tape.v_full)


def vanilla_layer_forward(h_prev, x, p: LayerParams,
                          counter: EvalCounter | None = None):
    """Attention over all node pairs (no structural gather), residual as usual."""
    tape = _dense_layer(h_prev, x, p, counter=counter)
    out = _tape_output(tape, p)
    _check_finite(out, layer=0)
    return out, LayerCache(k_full=tape.k_full, v_full=tape.v_full)


def _run_layers(x, mask, params: ModelParams, mode, counter):
    if mode not in ("structure", "vanilla"):
        raise ConfigError(f"unknown mode {mode!r}")
    dims = params.dims
    if x.shape[1] != dims.d:
        raise ConfigError(f"feature dim {x.shape[1]} != dims.d {dims.d}")
    tapes = []
    h = x
    for l, p in enumerate(params.layers):
        res_src = x if dims.residual == "input" else h
        if mode == "structure":
            tape = _masked_layer(h, res_src, mask, p, layer_idx=l, counter=counter)
        else:
            tape = _dense_layer(h, res_src, p, layer_idx=l, counter=counter)
        h = _tape_output(tape, p)
        _check_finite(h, layer=l)
        tapes.append(tape)
    return h, tapes


def forward(g: Graph, mask: KHopMask, params: ModelParams,
            mode: str = "structure", counter: EvalCounter | None = None) -> np.ndarray:
    """Chain all layers from the raw features and apply the final projection."""
    h_last, _ = _run_layers(g.features, mask, params, mode, counter)
    return h_last @ params.final_proj


def _forward_tape(x, mask, params: ModelParams, mode="structure", counter=None):
    """Forward pass keeping every intermediate needed for the backward pass."""
    h_last, tapes = _run_layers(x, mask, params, mode, counter)
    embeddings = h_last @ params.final_proj
    return embeddings, h_last, tapes


def _masked_layer_backward(tape: _LayerTape, d_out, mask: KHopMask, p: LayerParams):
    d_wo = tape.ctx.T @ d_out
    d_ctx = d_out @ p.wo.T
    d_wres = tape.res_src.T @ d_out
    d_res = d_out @ p.wres.T
    src = mask.src_ids()
    dst = mask.indices
    starts = mask.indptr[:-1]
    d_q = np.empty_like(tape.q_full)
    d_k = np.empty_like(tape.k_full)
    d_v = np.empty_like(tape.v_full)
    dqh = p.wq.shape[1] // p.heads
    inv_scale = 1.0 / np.sqrt(dqh)
    for h, (qs, vs) in enumerate(p.head_slices()):
        qh, kh, vh = tape.q_full[:, qs], tape.k_full[:, qs], tape.v_full[:, vs]
        alpha = tape.alphas[h]
        d_ctx_h = d_ctx[:, vs]
        d_alpha = np.einsum("ed,ed->e", d_ctx_h[src], vh[dst])
        seg_dot = np.add.reduceat(alpha * d_alpha, starts)
        d_score = alpha * (d_alpha - seg_dot[src]) * inv_scale
        score_mat = mask.pattern(d_score)
        d_q[:, qs] = score_mat @ kh
        d_k[:, qs] = score_mat.T @ qh
        d_v[:, vs] = mask.pattern(alpha).T @ d_ctx_h
    d_wq = tape.h_in.T @ d_q
    d_wk = tape.h_in.T @ d_k
    d_wv = tape.h_in.T @ d_v
    d_h_in = d_q @ p.wq.T + d_k @ p.wk.T + d_v @ p.wv.T
    grads = LayerParams(d_wq, d_wk, d_wv, d_wo, d_wres, heads=p.heads)
    return grads, d_h_in, d_res


def _dense_layer_backward(tape: _LayerTape, d_out, p: LayerParams):
    d_wo = tape.ctx.T @ d_out
    d_ctx = d_out @ p.wo.T
    d_wres = tape.res_src.T @ d_out
    d_res = d_out @ p.wres.T
    d_q = np.empty_like(tape.q_full)
    d_k = np.empty_like(tape.k_full)
    d_v = np.empty_like(tape.v_full)
    dqh = p.wq.shape[1] // p.heads
    inv_scale = 1.0 / np.sqrt(dqh)
    for h, (qs, vs) in enumerate(p.head_slices()):
        qh, kh, vh = tape.q_full[:, qs], tape.k_full[:, qs], tape.v_full[:, vs]
        attn = tape.alphas[h]
        d_ctx_h = d_ctx[:, vs]
        d_attn = d_ctx_h @ vh.T
        d_score = attn * (d_attn - (attn * d_attn).sum(axis=1, keepdims=True))
        d_score *= inv_scale
        d_q[:, qs] = d_score @ kh
        d_k[:, qs] = d_score.T @ qh
        d_v[:, vs] = attn.T @ d_ctx_h
    d_wq = tape.h_in.T @ d_q
    d_wk = tape.h_in.T @ d_k
    d_wv = tape.h_in.T @ d_v
    d_h_in = d_q @ p.wq.T + d_k @ p.wk.T + d_v @ p.wv.T
    grads = LayerParams(d_wq, d_wk, d_wv, d_wo, d_wres, heads=p.heads)
    return grads, d_h_in, d_res


def _model_backward(params: ModelParams, tapes, h_last, mask, d_embeddings):
    """Gradients of all parameters given the gradient at the final embeddings."""
    d_final = h_last.T @ d_embeddings
    d_h = d_embeddings @ params.final_proj.T
    layer_grads = [None] * len(params.layers)
    input_mode = params.dims.residual == "input"
    for l in range(len(params.layers) - 1, -1, -1):
        tape, p = tapes[l], params.layers[l]
        if tape.dense:
            g, d_h_in, d_res = _dense_layer_backward(tape, d_h, p)
        else:
            g, d_h_in, d_res = _masked_layer_backward(tape, d_h, mask, p)
        layer_grads[l] = g
        d_h = d_h_in if input_mode else d_h_in + d_res
    return ModelParams(dims=params.dims, layers=tuple(layer_grads),
                       final_proj=d_final)


def save_params(params: ModelParams, path):
    """Write parameters to the flat binary container.

    Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
    header (dims plus tensor names and shapes), then every tensor as
    row-major little-endian float64 in header order.
    """
    names, arrays = zip(*params.tensors())
    header = {
        "dims": asdict(params.dims),
        "tensors": [{"name": n, "shape": list(a.shape)}
                    for n, a in zip(names, arrays)],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.array(len(blob), dtype="<u8").tobytes())
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(path) -> ModelParams:
    """Read parameters written by :func:`save_params`."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ConfigError(f"not a parameter file: bad magic {magic!r}")
        (hlen,) = np.frombuffer(fh.read(8), dtype="<u8")
        header = json.loads(fh.read(int(hlen)).decode("utf-8"))
        dims = Dims(**header["dims"])
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            tensors[spec["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    layers = tuple(
        LayerParams(*(tensors[f"layers.{i}.{n}"]
                      for n in ("wq", "wk", "wv", "wo", "wres")),
                    heads=dims.heads)
        for i in range(dims.layers)
    )
    return ModelParams(dims=dims, layers=layers, final_proj=tensors["final_proj"])

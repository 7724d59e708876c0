"""Post-layer-norm transformer encoder with pre-training and task heads.

Parameters live in a flat ``dict[str, np.ndarray]``. ``forward`` keeps the
intermediate values needed by ``backward``; each head's loss function
returns a :class:`LossOutput` whose closure maps the upstream scale to
parameter gradients plus gradients w.r.t. the encoder outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Collection, Sequence

import numpy as np

from ..errors import DimensionError, LossError, NumericError
from .config import ModelConfig
from .layers import (
    apply_mask,
    cross_entropy,
    dropout_mask,
    gelu_backward,
    gelu_forward,
    layer_norm_backward,
    layer_norm_forward,
    linear_backward,
    softmax,
    softmax_backward,
)

Parameters = dict[str, np.ndarray]
Gradients = dict[str, np.ndarray]

_MASK_VALUE = -1e9


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal(0, std) resampled until every value lies within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_parameters(config: ModelConfig, dtype=np.float32) -> Parameters:
    rng = np.random.default_rng(config.seed)
    h, i, v = config.hidden_size, config.intermediate_size, config.vocab_size
    std = config.initializer_range
    p: Parameters = {}

    def dense(name: str, n_in: int, n_out: int) -> None:
        p[name + ".w"] = truncated_normal(rng, (n_in, n_out), std)
        p[name + ".b"] = np.zeros(n_out)

    def norm(name: str) -> None:
        p[name + ".g"] = np.ones(h)
        p[name + ".b"] = np.zeros(h)

    p["embeddings.word"] = truncated_normal(rng, (v, h), std)
    p["embeddings.position"] = truncated_normal(rng, (config.max_seq_len, h), std)
    p["embeddings.segment"] = truncated_normal(rng, (config.type_vocab_size, h), std)
    norm("embeddings.ln")
    for layer in range(config.num_layers):
        pre = f"layer.{layer}"
        for proj in ("q", "k", "v", "o"):
            dense(f"{pre}.attn.{proj}", h, h)
        norm(f"{pre}.attn.ln")
        dense(f"{pre}.ffn.in", h, i)
        dense(f"{pre}.ffn.out", i, h)
        norm(f"{pre}.ffn.ln")
    dense("pooler", h, h)
    dense("mlm.dense", h, h)
    norm("mlm.ln")
    p["mlm.bias"] = np.zeros(v)
    dense("sop", h, 2)
    return {k: a.astype(dtype) for k, a in p.items()}


def add_classifier_head(params: Parameters, name: str, config: ModelConfig, num_labels: int, seed: int = 0) -> None:
    rng = np.random.default_rng([config.seed, seed, num_labels])
    dtype = params["embeddings.word"].dtype
    params[name + ".w"] = truncated_normal(rng, (config.hidden_size, num_labels), config.initializer_range).astype(dtype)
    params[name + ".b"] = np.zeros(num_labels, dtype=dtype)


def is_encoder_param(name: str) -> bool:
    return name.startswith(("embeddings.", "layer.", "pooler."))


def cast_parameters(params: Parameters, dtype) -> Parameters:
    return {k: v.astype(dtype) for k, v in params.items()}


@dataclass
class Batch:
    input_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray

    def __post_init__(self) -> None:
        self.input_ids = np.asarray(self.input_ids, dtype=np.int64)
        self.segment_ids = np.asarray(self.segment_ids, dtype=np.int64)
        self.attention_mask = np.asarray(self.attention_mask, dtype=np.int64)

    @property
    def shape(self) -> tuple[int, int]:
        return self.input_ids.shape  # type: ignore[return-value]

    def take(self, rows) -> "Batch":
        return Batch(self.input_ids[rows], self.segment_ids[rows], self.attention_mask[rows])


@dataclass
class Activations:
    sequence_output: np.ndarray  # [batch, seq, hidden]
    pooled: np.ndarray  # [batch, hidden]
    config: ModelConfig
    rng: np.random.Generator | None = None
    cache: dict = field(default_factory=dict, repr=False)


@dataclass
class LossOutput:
    loss: float
    logits: np.ndarray
    backward_fn: Callable[[float], tuple[Gradients, np.ndarray | None, np.ndarray | None]] = field(repr=False)
    name: str = "loss"


def _check_batch(params: Parameters, config: ModelConfig, batch: Batch) -> None:
    if batch.input_ids.ndim != 2:
        raise DimensionError(f"input_ids must be [batch, seq], got shape {batch.input_ids.shape}")
    for name in ("segment_ids", "attention_mask"):
        if getattr(batch, name).shape != batch.input_ids.shape:
            raise DimensionError(
                f"{name} shape {getattr(batch, name).shape} != input_ids shape {batch.input_ids.shape}"
            )
    seq = batch.input_ids.shape[1]
    if seq > config.max_seq_len:
        raise DimensionError(f"input_ids length {seq} exceeds max_seq_len {config.max_seq_len}")
    if params["embeddings.word"].shape != (config.vocab_size, config.hidden_size):
        raise DimensionError(
            f"embeddings.word shape {params['embeddings.word'].shape} does not match config "
            f"({config.vocab_size}, {config.hidden_size})"
        )
    if batch.input_ids.size and (batch.input_ids.min() < 0 or batch.input_ids.max() >= config.vocab_size):
        raise DimensionError(f"input_ids out of range for vocab_size {config.vocab_size}")


def forward(
    params: Parameters,
    config: ModelConfig,
    batch: Batch,
    rng: np.random.Generator | None = None,
) -> Activations:
    """Run the encoder. Dropout is active only when ``rng`` is given."""
    _check_batch(params, config, batch)
    b, s = batch.shape
    h, nh, dh = config.hidden_size, config.num_heads, config.head_size
    rate = config.dropout_rate
    dtype = params["embeddings.word"].dtype
    cache: dict = {"batch": batch}

    x = (
        params["embeddings.word"][batch.input_ids]
        + params["embeddings.position"][:s][None, :, :]
        + params["embeddings.segment"][batch.segment_ids]
    )
    x, cache["emb_ln"] = layer_norm_forward(x, params["embeddings.ln.g"], params["embeddings.ln.b"], config.layer_norm_eps)
    cache["emb_drop"] = m = dropout_mask(rng, x.shape, rate, dtype)
    x = apply_mask(x, m)

    key_bias = ((1 - batch.attention_mask) * _MASK_VALUE).astype(dtype)[:, None, None, :]
    scale = 1.0 / math.sqrt(dh)
    layers = []
    for layer in range(config.num_layers):
        pre = f"layer.{layer}"
        lc: dict = {"x": x}

        def heads(t: np.ndarray) -> np.ndarray:
            return t.reshape(b, s, nh, dh).transpose(0, 2, 1, 3)

        q = heads(x @ params[f"{pre}.attn.q.w"] + params[f"{pre}.attn.q.b"])
        k = heads(x @ params[f"{pre}.attn.k.w"] + params[f"{pre}.attn.k.b"])
        v = heads(x @ params[f"{pre}.attn.v.w"] + params[f"{pre}.attn.v.b"])
        probs = softmax(q @ k.transpose(0, 1, 3, 2) * scale + key_bias)
        lc["probs_drop"] = m = dropout_mask(rng, probs.shape, rate, dtype)
        probs_d = apply_mask(probs, m)
        ctx = (probs_d @ v).transpose(0, 2, 1, 3).reshape(b, s, h)
        attn = ctx @ params[f"{pre}.attn.o.w"] + params[f"{pre}.attn.o.b"]
        lc["attn_drop"] = m = dropout_mask(rng, attn.shape, rate, dtype)
        attn = apply_mask(attn, m)
        h1, lc["attn_ln"] = layer_norm_forward(
            x + attn, params[f"{pre}.attn.ln.g"], params[f"{pre}.attn.ln.b"], config.layer_norm_eps
        )
        lc.update(q=q, k=k, v=v, probs=probs, probs_d=probs_d, ctx=ctx, h1=h1)

        u = h1 @ params[f"{pre}.ffn.in.w"] + params[f"{pre}.ffn.in.b"]
        a = gelu_forward(u)
        f = a @ params[f"{pre}.ffn.out.w"] + params[f"{pre}.ffn.out.b"]
        lc["ffn_drop"] = m = dropout_mask(rng, f.shape, rate, dtype)
        f = apply_mask(f, m)
        x, lc["ffn_ln"] = layer_norm_forward(
            h1 + f, params[f"{pre}.ffn.ln.g"], params[f"{pre}.ffn.ln.b"], config.layer_norm_eps
        )
        lc.update(u=u, a=a)
        layers.append(lc)
    cache["layers"] = layers

    cls = x[:, 0, :]
    pooled = np.tanh(cls @ params["pooler.w"] + params["pooler.b"])
    cache["cls"] = cls
    return Activations(x, pooled, config, rng, cache)


def attention_probabilities(acts: Activations) -> list[np.ndarray]:
    """Per-layer attention weights [batch, heads, query, key] before dropout."""
    return [lc["probs"] for lc in acts.cache["layers"]]


def _encoder_backward(
    params: Parameters,
    acts: Activations,
    d_seq: np.ndarray | None,
    d_pooled: np.ndarray | None,
) -> Gradients:
    config = acts.config
    cache = acts.cache
    batch: Batch = cache["batch"]
    b, s = batch.shape
    h, nh, dh = config.hidden_size, config.num_heads, config.head_size
    scale = 1.0 / math.sqrt(dh)
    g: Gradients = {}

    dx = np.zeros_like(acts.sequence_output) if d_seq is None else d_seq.copy()
    if d_pooled is not None:
        dz = d_pooled * (1.0 - acts.pooled * acts.pooled)
        dcls, g["pooler.w"], g["pooler.b"] = linear_backward(dz, cache["cls"], params["pooler.w"])
        dx[:, 0, :] += dcls
    else:
        g["pooler.w"] = np.zeros_like(params["pooler.w"])
        g["pooler.b"] = np.zeros_like(params["pooler.b"])

    for layer in reversed(range(config.num_layers)):
        pre = f"layer.{layer}"
        lc = cache["layers"][layer]
        # feed-forward sublayer
        dres, g[f"{pre}.ffn.ln.g"], g[f"{pre}.ffn.ln.b"] = layer_norm_backward(dx, lc["ffn_ln"], params[f"{pre}.ffn.ln.g"])
        df = apply_mask(dres, lc["ffn_drop"])
        da, g[f"{pre}.ffn.out.w"], g[f"{pre}.ffn.out.b"] = linear_backward(df, lc["a"], params[f"{pre}.ffn.out.w"])
        du = gelu_backward(da, lc["u"])
        dh1, g[f"{pre}.ffn.in.w"], g[f"{pre}.ffn.in.b"] = linear_backward(du, lc["h1"], params[f"{pre}.ffn.in.w"])
        dh1 += dres
        # attention sublayer
        dres, g[f"{pre}.attn.ln.g"], g[f"{pre}.attn.ln.b"] = layer_norm_backward(dh1, lc["attn_ln"], params[f"{pre}.attn.ln.g"])
        dattn = apply_mask(dres, lc["attn_drop"])
        dctx, g[f"{pre}.attn.o.w"], g[f"{pre}.attn.o.b"] = linear_backward(dattn, lc["ctx"], params[f"{pre}.attn.o.w"])
        dctx = dctx.reshape(b, s, nh, dh).transpose(0, 2, 1, 3)
        dprobs_d = dctx @ lc["v"].transpose(0, 1, 3, 2)
        dv = lc["probs_d"].transpose(0, 1, 3, 2) @ dctx
        dprobs = apply_mask(dprobs_d, lc["probs_drop"])
        dscores = softmax_backward(dprobs, lc["probs"]) * scale
        dq = dscores @ lc["k"]
        dk = dscores.transpose(0, 1, 3, 2) @ lc["q"]
        x_in = lc["x"]
        dx = dres.copy()
        for name, d in (("q", dq), ("k", dk), ("v", dv)):
            d = d.transpose(0, 2, 1, 3).reshape(b, s, h)
            dxi, g[f"{pre}.attn.{name}.w"], g[f"{pre}.attn.{name}.b"] = linear_backward(
                d, x_in, params[f"{pre}.attn.{name}.w"]
            )
            dx += dxi

    dx = apply_mask(dx, cache["emb_drop"])
    de, g["embeddings.ln.g"], g["embeddings.ln.b"] = layer_norm_backward(dx, cache["emb_ln"], params["embeddings.ln.g"])
    dword = np.zeros_like(params["embeddings.word"])
    np.add.at(dword, batch.input_ids.reshape(-1), de.reshape(-1, h))
    g["embeddings.word"] = dword
    dpos = np.zeros_like(params["embeddings.position"])
    dpos[:s] = de.sum(axis=0)
    g["embeddings.position"] = dpos
    dseg = np.zeros_like(params["embeddings.segment"])
    np.add.at(dseg, batch.segment_ids.reshape(-1), de.reshape(-1, h))
    g["embeddings.segment"] = dseg
    return g


def backward(
    params: Parameters,
    acts: Activations,
    losses: Sequence[LossOutput],
    *,
    scale: float = 1.0,
    frozen: Collection[str] = (),
) -> Gradients:
    """Gradients of ``scale * sum(losses)`` for every parameter not in ``frozen``.

    When every encoder parameter is frozen the encoder pass is skipped.
    Raises :class:`NumericError` naming the first non-finite gradient.
    """
    grads: Gradients = {}
    d_seq = None
    d_pooled = None

    def accumulate(part: Gradients) -> None:
        for name, g in part.items():
            grads[name] = grads[name] + g if name in grads else g

    for out in losses:
        part, ds, dp = out.backward_fn(scale)
        accumulate(part)
        if ds is not None:
            d_seq = ds if d_seq is None else d_seq + ds
        if dp is not None:
            d_pooled = dp if d_pooled is None else d_pooled + dp

    frozen = set(frozen)
    encoder_names = [n for n in params if is_encoder_param(n)]
    if (d_seq is not None or d_pooled is not None) and not all(n in frozen for n in encoder_names):
        accumulate(_encoder_backward(params, acts, d_seq, d_pooled))

    result = {}
    for name in params:
        if name in frozen or name not in grads:
            continue
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(name, "non-finite gradient")
        result[name] = g
    return result


# --- heads -------------------------------------------------------------------


def _check_loss(value: float, name: str) -> None:
    if not math.isfinite(value):
        raise NumericError(name, "non-finite loss")


def mlm_loss(acts: Activations, params: Parameters, mlm_positions: np.ndarray, mlm_labels: np.ndarray) -> LossOutput:
    """Cross-entropy over masked positions; ``mlm_positions`` is [M, 2] of (row, position).

    The output projection is tied to the word embeddings, with its own bias.
    """
    positions = np.asarray(mlm_positions, dtype=np.int64).reshape(-1, 2)
    labels = np.asarray(mlm_labels, dtype=np.int64).reshape(-1)
    if positions.shape[0] == 0:
        raise LossError("mlm_loss: no masked positions")
    if labels.shape[0] != positions.shape[0]:
        raise DimensionError(f"mlm_positions has {positions.shape[0]} rows but mlm_labels has {labels.shape[0]}")
    eps = acts.config.layer_norm_eps
    rows, cols = positions[:, 0], positions[:, 1]
    hm = acts.sequence_output[rows, cols]
    t = hm @ params["mlm.dense.w"] + params["mlm.dense.b"]
    a = gelu_forward(t)
    n, ln_cache = layer_norm_forward(a, params["mlm.ln.g"], params["mlm.ln.b"], eps)
    emb = params["embeddings.word"]
    logits = n @ emb.T + params["mlm.bias"]
    loss, dlogits, _ = cross_entropy(logits, labels)
    _check_loss(loss, "mlm_loss")

    def backward_fn(scale: float):
        dl = dlogits * scale
        g: Gradients = {"mlm.bias": dl.sum(axis=0), "embeddings.word": dl.T @ n}
        dn = dl @ emb
        da, g["mlm.ln.g"], g["mlm.ln.b"] = layer_norm_backward(dn, ln_cache, params["mlm.ln.g"])
        dt = gelu_backward(da, t)
        dhm, g["mlm.dense.w"], g["mlm.dense.b"] = linear_backward(dt, hm, params["mlm.dense.w"])
        d_seq = np.zeros_like(acts.sequence_output)
        np.add.at(d_seq, (rows, cols), dhm)
        return g, d_seq, None

    return LossOutput(loss, logits, backward_fn, "mlm")


def sop_loss(acts: Activations, params: Parameters, sop_labels: np.ndarray) -> LossOutput:
    """Two-way sentence-order classification from the pooled vector."""
    labels = np.asarray(sop_labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != acts.pooled.shape[0]:
        raise DimensionError(f"sop_labels has {labels.shape[0]} rows, pooled has {acts.pooled.shape[0]}")
    logits = acts.pooled @ params["sop.w"] + params["sop.b"]
    loss, dlogits, _ = cross_entropy(logits, labels)
    _check_loss(loss, "sop_loss")

    def backward_fn(scale: float):
        dl = dlogits * scale
        dp, gw, gb = linear_backward(dl, acts.pooled, params["sop.w"])
        return {"sop.w": gw, "sop.b": gb}, None, dp

    return LossOutput(loss, logits, backward_fn, "sop")


def token_classification_loss(
    acts: Activations,
    params: Parameters,
    head: str,
    labels: np.ndarray,
    label_mask: np.ndarray,
) -> LossOutput:
    """Mean cross-entropy over positions where ``label_mask`` is set. ``logits`` covers all positions."""
    labels = np.asarray(labels, dtype=np.int64)
    label_mask = np.asarray(label_mask, dtype=bool)
    seq = acts.sequence_output
    if labels.shape != seq.shape[:2] or label_mask.shape != seq.shape[:2]:
        raise DimensionError(
            f"labels {labels.shape} / label_mask {label_mask.shape} must match sequence_output {seq.shape[:2]}"
        )
    if not label_mask.any():
        raise LossError(f"{head}: label_mask selects no positions")
    drop = dropout_mask(acts.rng, seq.shape, acts.config.dropout_rate, seq.dtype)
    x = apply_mask(seq, drop)
    logits = x @ params[head + ".w"] + params[head + ".b"]
    rows, cols = np.nonzero(label_mask)
    loss, dsel, _ = cross_entropy(logits[rows, cols], labels[rows, cols])
    _check_loss(loss, head)

    def backward_fn(scale: float):
        dl = np.zeros_like(logits)
        dl[rows, cols] = dsel * scale
        dx, gw, gb = linear_backward(dl, x, params[head + ".w"])
        return {head + ".w": gw, head + ".b": gb}, apply_mask(dx, drop), None

    return LossOutput(loss, logits, backward_fn, head)


def sequence_classification_loss(acts: Activations, params: Parameters, head: str, labels: np.ndarray) -> LossOutput:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    pooled = acts.pooled
    if labels.shape[0] != pooled.shape[0]:
        raise DimensionError(f"labels has {labels.shape[0]} rows, pooled has {pooled.shape[0]}")
    drop = dropout_mask(acts.rng, pooled.shape, acts.config.dropout_rate, pooled.dtype)
    x = apply_mask(pooled, drop)
    logits = x @ params[head + ".w"] + params[head + ".b"]
    loss, dlogits, _ = cross_entropy(logits, labels)
    _check_loss(loss, head)

    def backward_fn(scale: float):
        dx, gw, gb = linear_backward(dlogits * scale, x, params[head + ".w"])
        return {head + ".w": gw, head + ".b": gb}, None, apply_mask(dx, drop)

    return LossOutput(loss, logits, backward_fn, head)


def token_logits(acts: Activations, params: Parameters, head: str) -> np.ndarray:
    return acts.sequence_output @ params[head + ".w"] + params[head + ".b"]


def sequence_logits(acts: Activations, params: Parameters, head: str) -> np.ndarray:
    return acts.pooled @ params[head + ".w"] + params[head + ".b"]


def sop_logits(acts: Activations, params: Parameters) -> np.ndarray:
    return acts.pooled @ params["sop.w"] + params["sop.b"]

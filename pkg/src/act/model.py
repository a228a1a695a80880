"""Fully self-attentional classifier for short 2D pose sequences.

Architecture: each frame's pose vector is linearly projected to the token
width, a learnable class token is prepended, a learnable positional row is
added per token, and the sequence runs through a stack of post-norm
Transformer encoder layers. Only the class token of the last layer feeds the
two-layer classification head, so the model accepts any sequence length up
to the trained maximum without retraining.

Public operations work on plain numpy arrays and run in inference mode by
default. Training builds the same computation as a taped graph via
``forward_graph`` so gradients flow to every parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericsError, ParameterError, ShapeError
from .tensor import Tape, Tensor

# name -> (num_heads, d_model, num_layers, head_hidden)
_PRESETS = {
    "micro": (1, 64, 4, 256),
    "small": (2, 128, 5, 256),
    "medium": (3, 192, 6, 256),
    "large": (4, 256, 6, 512),
}


@dataclass(frozen=True)
class ModelConfig:
    """Architectural hyperparameters. ``d_model`` must equal
    ``num_heads * head_dim``; the published sizes all use head_dim 64 and a
    feed-forward width of 4x the token width."""

    seq_len: int = 30
    in_features: int = 52
    num_classes: int = 20
    d_model: int = 64
    num_heads: int = 1
    head_dim: int = 64
    num_layers: int = 4
    d_ffn: int = 256
    head_hidden: int = 256
    dropout_rate: float = 0.3
    name: str = "custom"

    def __post_init__(self) -> None:
        dims = {
            "seq_len": self.seq_len,
            "in_features": self.in_features,
            "num_classes": self.num_classes,
            "d_model": self.d_model,
            "num_heads": self.num_heads,
            "head_dim": self.head_dim,
            "num_layers": self.num_layers,
            "d_ffn": self.d_ffn,
            "head_hidden": self.head_hidden,
        }
        for key, value in dims.items():
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{key} must be a positive integer, got {value!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.d_model != self.num_heads * self.head_dim:
            raise ConfigError(
                f"d_model ({self.d_model}) must equal num_heads * head_dim "
                f"({self.num_heads} * {self.head_dim} = {self.num_heads * self.head_dim})"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


def preset(name: str, in_features: int = 52, num_classes: int = 20,
           seq_len: int = 30, dropout_rate: float = 0.3) -> ModelConfig:
    """One of the four published model sizes; data-dependent dims are the
    caller's to supply."""
    if name not in _PRESETS:
        raise ParameterError(
            f"unknown preset {name!r}; valid names: {', '.join(sorted(_PRESETS))}"
        )
    num_heads, d_model, num_layers, head_hidden = _PRESETS[name]
    return ModelConfig(
        seq_len=seq_len,
        in_features=in_features,
        num_classes=num_classes,
        d_model=d_model,
        num_heads=num_heads,
        head_dim=64,
        num_layers=num_layers,
        d_ffn=4 * d_model,
        head_hidden=head_hidden,
        dropout_rate=dropout_rate,
        name=name,
    )


def param_count(config: ModelConfig) -> int:
    """Closed-form scalar count; must agree with the allocated arrays."""
    d = config.d_model
    qkv_width = config.num_heads * config.head_dim
    per_layer = (
        3 * (d * qkv_width + qkv_width)      # query/key/value projections
        + (qkv_width * d + d)                # output projection
        + (d * config.d_ffn + config.d_ffn)  # feed-forward expand
        + (config.d_ffn * d + d)             # feed-forward contract
        + 4 * d                              # two layer norms, gain + bias
    )
    return (
        (config.in_features * d + d)         # input projection
        + d                                  # class token
        + (config.seq_len + 1) * d           # positional embedding
        + config.num_layers * per_layer
        + (d * config.head_hidden + config.head_hidden)
        + (config.head_hidden * config.num_classes + config.num_classes)
    )


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter names and shapes, in serialization order."""
    d = config.d_model
    e = config.num_heads * config.head_dim
    f = config.d_ffn
    shapes: dict[str, tuple[int, ...]] = {
        "embed.w": (config.in_features, d),
        "embed.b": (d,),
        "cls": (d,),
        "pos": (config.seq_len + 1, d),
    }
    for i in range(config.num_layers):
        p = f"layers.{i}."
        shapes[p + "attn.wq"] = (d, e)
        shapes[p + "attn.bq"] = (e,)
        shapes[p + "attn.wk"] = (d, e)
        shapes[p + "attn.bk"] = (e,)
        shapes[p + "attn.wv"] = (d, e)
        shapes[p + "attn.bv"] = (e,)
        shapes[p + "attn.wo"] = (e, d)
        shapes[p + "attn.bo"] = (d,)
        shapes[p + "ffn.w1"] = (d, f)
        shapes[p + "ffn.b1"] = (f,)
        shapes[p + "ffn.w2"] = (f, d)
        shapes[p + "ffn.b2"] = (d,)
        shapes[p + "ln1.gain"] = (d,)
        shapes[p + "ln1.bias"] = (d,)
        shapes[p + "ln2.gain"] = (d,)
        shapes[p + "ln2.bias"] = (d,)
    shapes["head.w1"] = (d, config.head_hidden)
    shapes["head.b1"] = (config.head_hidden,)
    shapes["head.w2"] = (config.head_hidden, config.num_classes)
    shapes["head.b2"] = (config.num_classes,)
    return shapes


@dataclass
class ActParams:
    """All trainable arrays, keyed by canonical name."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        expected = parameter_shapes(self.config)
        if list(self.arrays) != list(expected):
            missing = [k for k in expected if k not in self.arrays]
            extra = [k for k in self.arrays if k not in expected]
            raise ConfigError(
                "parameter set does not match config: "
                f"missing {missing[:4]}, unexpected {extra[:4]}"
            )
        for name, shape in expected.items():
            got = self.arrays[name].shape
            if got != shape:
                raise ShapeError(f"parameter {name} has shape {got}, expected {shape}")

    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())

    @property
    def dtype(self):
        return self.arrays["embed.w"].dtype

    def astype(self, dtype) -> "ActParams":
        return ActParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self) -> "ActParams":
        return ActParams(self.config, {k: v.copy() for k, v in self.arrays.items()})


def _truncated_normal(rng: np.random.Generator, shape, std: float, clip_stds: float = 2.0):
    out = rng.normal(0.0, std, size=shape)
    bound = clip_stds * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ActParams:
    """Truncated-normal weights (std 0.02, clipped at two standard
    deviations), zero biases, unit layer-norm gains. Deterministic in seed."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gain":
            a = np.ones(shape)
        elif leaf.startswith("b") or leaf == "bias":
            a = np.zeros(shape)
        else:  # weight matrices, class token, positional table
            a = _truncated_normal(rng, shape, std=0.02)
        arrays[name] = a.astype(dtype)
    return ActParams(config, arrays)


@dataclass
class AttentionMaps:
    """Per-layer, per-head attention matrices for one input sequence.

    ``maps`` has shape [num_layers, num_heads, n, n] where n counts the class
    token plus the frames actually fed in.
    """

    maps: np.ndarray

    @property
    def num_layers(self) -> int:
        return self.maps.shape[0]

    @property
    def num_heads(self) -> int:
        return self.maps.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.maps.shape[2]

    def validate(self, tol: float = 1e-6) -> None:
        sums = self.maps.sum(axis=-1)
        err = float(np.abs(sums - 1.0).max())
        if err > tol:
            raise NumericsError(f"attention rows deviate from sum 1 by {err:.3g}")


# ---------------------------------------------------------------------------
# Taped computation graph (shared by training and inference)
# ---------------------------------------------------------------------------


def params_on_tape(params: ActParams, tape: Tape) -> dict[str, Tensor]:
    return {name: tape.leaf(a, name=name) for name, a in params.arrays.items()}


def params_as_constants(params: ActParams) -> dict[str, Tensor]:
    return {name: Tensor(a, name=name) for name, a in params.arrays.items()}


def _check_batch(x: np.ndarray, config: ModelConfig) -> None:
    if x.ndim != 3:
        raise ShapeError(f"batch must be [batch, frames, features], got shape {x.shape}")
    if x.shape[2] != config.in_features:
        raise ShapeError(
            f"feature width {x.shape[2]} does not match model input width "
            f"{config.in_features}"
        )
    if x.shape[1] < 1:
        raise ShapeError("sequence must contain at least one frame")
    if x.shape[1] > config.seq_len:
        raise ShapeError(
            f"sequence length {x.shape[1]} exceeds trained maximum {config.seq_len}"
        )


def _resolve_positions(n_frames: int, positions, config: ModelConfig) -> np.ndarray:
    if positions is None:
        return np.arange(1, n_frames + 1)
    pos = np.asarray(positions, dtype=np.int64)
    if pos.shape != (n_frames,):
        raise ShapeError(f"positions shape {pos.shape} does not match frame count {n_frames}")
    if pos.min() < 1 or pos.max() > config.seq_len:
        raise ParameterError(
            f"frame positions must lie in [1, {config.seq_len}], got range "
            f"[{pos.min()}, {pos.max()}]"
        )
    return pos


def _embed_graph(p: dict[str, Tensor], x: np.ndarray, positions: np.ndarray,
                 config: ModelConfig) -> Tensor:
    batch = x.shape[0]
    tok = T.matmul(Tensor(x), p["embed.w"]) + p["embed.b"]
    cls = T.broadcast_to(T.reshape(p["cls"], (1, 1, config.d_model)),
                         (batch, 1, config.d_model))
    tok = T.concat([cls, tok], axis=1)
    rows = T.take_rows(p["pos"], np.concatenate([[0], positions]))
    return tok + rows


def _msa_graph(p: dict[str, Tensor], prefix: str, tok: Tensor, config: ModelConfig):
    batch, n, _ = tok.shape
    heads, hd = config.num_heads, config.head_dim

    def split_heads(t: Tensor) -> Tensor:
        return T.swapaxes(T.reshape(t, (batch, n, heads, hd)), 1, 2)

    q = split_heads(T.matmul(tok, p[prefix + "attn.wq"]) + p[prefix + "attn.bq"])
    k = split_heads(T.matmul(tok, p[prefix + "attn.wk"]) + p[prefix + "attn.bk"])
    v = split_heads(T.matmul(tok, p[prefix + "attn.wv"]) + p[prefix + "attn.bv"])
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(hd))
    attn = T.softmax(scores)  # [batch, heads, n, n]
    ctx = T.matmul(attn, v)
    merged = T.reshape(T.swapaxes(ctx, 1, 2), (batch, n, heads * hd))
    out = T.matmul(merged, p[prefix + "attn.wo"]) + p[prefix + "attn.bo"]
    return out, attn.data


def _encoder_layer_graph(p: dict[str, Tensor], layer: int, tok: Tensor,
                         config: ModelConfig, training: bool,
                         rng: np.random.Generator | None):
    prefix = f"layers.{layer}."
    rate = config.dropout_rate
    attn_out, attn = _msa_graph(p, prefix, tok, config)
    attn_out = T.dropout(attn_out, rate, rng, training)
    x1 = T.layer_norm(tok + attn_out, p[prefix + "ln1.gain"], p[prefix + "ln1.bias"])
    hidden = T.gelu(T.matmul(x1, p[prefix + "ffn.w1"]) + p[prefix + "ffn.b1"])
    ffn_out = T.matmul(hidden, p[prefix + "ffn.w2"]) + p[prefix + "ffn.b2"]
    ffn_out = T.dropout(ffn_out, rate, rng, training)
    x2 = T.layer_norm(x1 + ffn_out, p[prefix + "ln2.gain"], p[prefix + "ln2.bias"])
    return x2, attn


def forward_graph(p: dict[str, Tensor], x: np.ndarray, config: ModelConfig,
                  training: bool = False, rng: np.random.Generator | None = None,
                  positions: np.ndarray | None = None,
                  want_attention: bool = False):
    """Logits for a batch, built op by op so the tape can differentiate it.

    ``x`` is [batch, frames, features] with 1 <= frames <= seq_len. Returns
    (logits tensor [batch, num_classes], attention arrays per layer or None).
    """
    _check_batch(x, config)
    pos = _resolve_positions(x.shape[1], positions, config)
    tok = _embed_graph(p, x, pos, config)
    attn_layers = [] if want_attention else None
    for layer in range(config.num_layers):
        tok, attn = _encoder_layer_graph(p, layer, tok, config, training, rng)
        if attn_layers is not None:
            attn_layers.append(attn)
    cls_final = T.getitem(tok, (slice(None), 0))  # [batch, d_model]
    hidden = T.gelu(T.matmul(cls_final, p["head.w1"]) + p["head.b1"])
    hidden = T.dropout(hidden, config.dropout_rate, rng, training)
    logits = T.matmul(hidden, p["head.w2"]) + p["head.b2"]
    return logits, attn_layers


# ---------------------------------------------------------------------------
# Public inference operations (plain arrays in, plain arrays out)
# ---------------------------------------------------------------------------


def embed(x: np.ndarray, params: ActParams,
          positions: Sequence[int] | None = None) -> np.ndarray:
    """Tokens for one sequence: projected frames behind the class token, with
    positional rows added. ``positions`` pins frames to their original slots
    (1-based; row 0 always belongs to the class token)."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"expected a single sequence [frames, features], got {x.shape}")
    cfg = params.config
    _check_batch(x[None], cfg)
    pos = _resolve_positions(x.shape[0], positions, cfg)
    out = _embed_graph(params_as_constants(params), x[None], pos, cfg)
    return out.data[0]


def msa(tokens: np.ndarray, params: ActParams, layer: int):
    """Multi-head self-attention sublayer of one encoder layer, inference
    mode. Returns (output [n, d_model], attention [heads, n, n])."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] != params.config.d_model:
        raise ShapeError(f"tokens must be [n, {params.config.d_model}], got {tokens.shape}")
    out, attn = _msa_graph(params_as_constants(params), f"layers.{layer}.",
                           Tensor(tokens[None]), params.config)
    return out.data[0], attn[0]


def encoder_layer(tokens: np.ndarray, params: ActParams, layer: int,
                  training: bool = False,
                  rng: np.random.Generator | None = None):
    """One full post-norm encoder layer. Returns (tokens', attention)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2 or tokens.shape[1] != params.config.d_model:
        raise ShapeError(f"tokens must be [n, {params.config.d_model}], got {tokens.shape}")
    out, attn = _encoder_layer_graph(params_as_constants(params), layer,
                                     Tensor(tokens[None]), params.config,
                                     training, rng)
    return out.data[0], attn[0]


def forward(batch: np.ndarray, params: ActParams, training: bool = False,
            rng: np.random.Generator | None = None,
            positions: np.ndarray | None = None,
            want_attention: bool = False):
    """Classify a batch of equal-length sequences.

    Returns (logits [batch, num_classes], maps) where maps is a list of
    :class:`AttentionMaps`, one per sample, when ``want_attention`` is set,
    else None.
    """
    batch = np.asarray(batch)
    logits, attn_layers = forward_graph(
        params_as_constants(params), batch, params.config,
        training=training, rng=rng, positions=positions,
        want_attention=want_attention,
    )
    maps = None
    if want_attention:
        stacked = np.stack(attn_layers)  # [layers, batch, heads, n, n]
        maps = [AttentionMaps(stacked[:, b]) for b in range(batch.shape[0])]
        for m in maps:
            m.validate()
    return logits.data, maps


def logits_for_sequences(params: ActParams, sequences: Sequence[np.ndarray],
                         batch_size: int = 256, want_attention: bool = False):
    """Logits for sequences of mixed lengths, preserving input order.

    Sequences are grouped by length so each group runs as one dense batch;
    no padding frames are ever fed to the model, so shorter sequences cannot
    be influenced by fill values.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be positive, got {batch_size}")
    n = len(sequences)
    logits = np.zeros((n, params.config.num_classes), dtype=np.float32)
    maps: list[AttentionMaps | None] | None = [None] * n if want_attention else None
    by_length: dict[int, list[int]] = {}
    for i, seq in enumerate(sequences):
        seq = np.asarray(seq)
        if seq.ndim != 2:
            raise ShapeError(f"sequence {i} must be [frames, features], got {seq.shape}")
        by_length.setdefault(seq.shape[0], []).append(i)
    for length in sorted(by_length):
        idx = by_length[length]
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            stack = np.stack([np.asarray(sequences[i]) for i in chunk])
            out, chunk_maps = forward(stack, params, want_attention=want_attention)
            logits[chunk] = out
            if maps is not None:
                for i, m in zip(chunk, chunk_maps):
                    maps[i] = m
    return (logits, maps) if want_attention else logits

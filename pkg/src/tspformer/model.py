"""Encoder/decoder transformer for Euclidean TSP.

The encoder embeds each node's coordinates (plus a 2-D sinusoidal encoding of
those coordinates) and refines them with post-norm self-attention blocks. Its
output, the *memory*, is used three times: as the lookup table for decoder
input tokens, as keys/values of the decoder cross-attention, and as the output
projection whose inner products with decoder states give next-node logits.
There is therefore no learned output matrix, and the parameter count does not
depend on the number of nodes.

All model methods are batched: ``points`` is (B, N, 2) and node sequences are
(B, V) integer arrays. The module-level functions accept a single instance.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import posenc
from .numerics import functional as F
from .numerics.layers import FeedForward, LayerNorm, Module, MultiHeadAttention
from .numerics.tensor import Parameter, Tensor, gather_rows, matmul
from .tsp import Instance, Tour

ENCODER_PE = ("none", "spatial")
DECODER_PE = ("sinusoidal", "circular")
DECODER_INPUT = ("memory", "shared_lut", "unshared_lut")
OUTPUT_HEAD = ("dynamic_embedding", "encoder_lut")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 128
    layers: int = 6
    heads: int = 8
    ffn_dim: int | None = None
    dropout: float = 0.1
    encoder_pe: str = "spatial"
    decoder_pe: str = "circular"
    decoder_input: str = "memory"
    output_head: str = "dynamic_embedding"
    pe_scale: float = posenc.DEFAULT_SPATIAL_SCALE
    max_nodes: int = 128
    logit_scale: float | None = None

    def __post_init__(self):
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.d)
        self.validate()

    def validate(self) -> None:
        if self.d <= 0 or self.d % 2:
            raise F.ConfigError(f"d must be a positive even number, got {self.d}")
        if self.heads <= 0 or self.d % self.heads:
            raise F.ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.layers < 1:
            raise F.ConfigError(f"need at least one layer, got {self.layers}")
        if self.encoder_pe == "spatial" and self.d % 4:
            raise F.ConfigError(f"spatial encoding needs d divisible by 4, got {self.d}")
        if not 0.0 <= self.dropout < 1.0:
            raise F.ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for name, allowed in (
            ("encoder_pe", ENCODER_PE),
            ("decoder_pe", DECODER_PE),
            ("decoder_input", DECODER_INPUT),
            ("output_head", OUTPUT_HEAD),
        ):
            if getattr(self, name) not in allowed:
                raise F.ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @property
    def output_scale(self) -> float:
        """Multiplier on decoder-memory inner products; 1/sqrt(d) unless set.

        Unscaled products of two layer-normed d-vectors are O(d) at
        initialization, which saturates the softmax and stalls training.
        """
        return self.d**-0.5 if self.logit_scale is None else float(self.logit_scale)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class EncoderMemory:
    """Encoder output ``z`` (B, N, d) plus the input embedding ``embedding``
    (coordinates times W_e plus b_e, before positional encoding)."""

    z: Tensor
    embedding: Tensor
    points: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.z.shape[-2]


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.attn = MultiHeadAttention(cfg.d, cfg.heads, rng)
        self.norm1 = LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffn_dim, rng)
        self.norm2 = LayerNorm(cfg.d)

    def __call__(self, x: Tensor, p: float, rng) -> Tensor:
        h = self.norm1(x + F.dropout(self.attn(x, x, x), p, self.training, rng))
        return self.norm2(h + F.dropout(self.ffn(h), p, self.training, rng))


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg.d, cfg.heads, rng)
        self.norm1 = LayerNorm(cfg.d)
        self.cross_attn = MultiHeadAttention(cfg.d, cfg.heads, rng)
        self.norm2 = LayerNorm(cfg.d)
        self.ffn = FeedForward(cfg.d, cfg.ffn_dim, rng)
        self.norm3 = LayerNorm(cfg.d)

    def __call__(self, x: Tensor, memory: Tensor, causal: np.ndarray, p: float, rng) -> Tensor:
        h1 = self.norm1(x + F.dropout(self.self_attn(x, x, x, causal), p, self.training, rng))
        h2 = self.norm2(h1 + F.dropout(self.cross_attn(h1, memory, memory), p, self.training, rng))
        return self.norm3(h2 + F.dropout(self.ffn(h2), p, self.training, rng))


class TSPTransformer(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.d
        bound = np.sqrt(6.0 / (2 + d))
        self.w_e = Parameter(rng.uniform(-bound, bound, size=(2, d)))
        self.b_e = Parameter(np.zeros(d))
        self.encoder = [EncoderLayer(config, rng) for _ in range(config.layers)]
        self.decoder = [DecoderLayer(config, rng) for _ in range(config.layers)]
        if config.decoder_input == "unshared_lut":
            self.lut = Parameter(rng.normal(0.0, d**-0.5, size=(config.max_nodes, d)))

    @property
    def dtype(self):
        return self.w_e.data.dtype

    # -- encoder -----------------------------------------------------------

    def embed_inputs(self, points: np.ndarray, rng=None) -> tuple[Tensor, Tensor]:
        """Return ``(e, x)``: the linear embedding and the encoder input with
        positional encoding added (and dropout in training mode)."""
        pts = np.asarray(points, dtype=self.dtype)
        e = matmul(Tensor(pts), self.w_e) + self.b_e
        x = e
        if self.config.encoder_pe == "spatial":
            pe = posenc.spatial_pe(pts.astype(np.float64), self.config.d, self.config.pe_scale)
            x = e + Tensor(pe.astype(self.dtype))
        return e, F.dropout(x, self.config.dropout, self.training, rng)

    def encode(self, points: np.ndarray, rng=None) -> EncoderMemory:
        points = np.asarray(points)
        if points.ndim == 2:
            points = points[None]
        e, x = self.embed_inputs(points, rng)
        for layer in self.encoder:
            x = layer(x, self.config.dropout, rng)
        if not np.all(np.isfinite(x.data)):
            raise F.NumericError("encoder produced non-finite values")
        return EncoderMemory(x, e, points)

    # -- decoder -----------------------------------------------------------

    def decoder_inputs(self, memory: EncoderMemory, prefix: np.ndarray, rng=None) -> Tensor:
        prefix = np.asarray(prefix, dtype=np.int64)
        n = memory.n
        kind = self.config.decoder_input
        if kind == "memory":
            tokens = gather_rows(memory.z, prefix)
        elif kind == "shared_lut":
            tokens = gather_rows(memory.embedding, prefix)
        else:
            if n > self.config.max_nodes:
                raise F.ConfigError(f"unshared lookup table holds {self.config.max_nodes} nodes, instance has {n}")
            tokens = gather_rows(self.lut, prefix.reshape(-1)).reshape(*prefix.shape, self.config.d)
        pe = decoder_pe_table(self.config.decoder_pe, prefix.shape[-1], n, self.config.d)
        x = tokens + Tensor(pe.astype(self.dtype))
        return F.dropout(x, self.config.dropout, self.training, rng)

    def decode(self, memory: EncoderMemory, prefix: np.ndarray, rng=None) -> Tensor:
        prefix = _check_prefix(prefix, memory.n)
        if prefix.shape[0] != memory.z.shape[0]:
            raise F.ShapeError(f"prefix batch {prefix.shape[0]} != memory batch {memory.z.shape[0]}")
        x = self.decoder_inputs(memory, prefix, rng)
        causal = build_causal_mask(prefix.shape[-1]).astype(self.dtype)
        for layer in self.decoder:
            x = layer(x, memory.z, causal, self.config.dropout, rng)
        return x

    def output_logits(self, decoder_out: Tensor, memory: EncoderMemory) -> Tensor:
        keys = memory.z if self.config.output_head == "dynamic_embedding" else memory.embedding
        return matmul(decoder_out, keys.swapaxes(-1, -2)) * self.config.output_scale

    def output_head(self, decoder_out: Tensor, memory: EncoderMemory, visited: np.ndarray) -> Tensor:
        return F.softmax_masked(self.output_logits(decoder_out, memory), visited)

    # -- full passes -------------------------------------------------------

    def forward_teacher_forced(self, points: np.ndarray, tours: np.ndarray, rng=None) -> Tensor:
        """Probabilities (B, N-1, N); row v is the distribution over the node at
        tour position v+1 given positions 0..v."""
        memory, out, visited = self._teacher_forced(points, tours, rng)
        return self.output_head(out, memory, visited)

    def teacher_forced_log_probs(self, points: np.ndarray, tours: np.ndarray, rng=None, use_visited_mask=True):
        """Return ``(log_probs, visited)`` for the same rows as
        :meth:`forward_teacher_forced`."""
        memory, out, visited = self._teacher_forced(points, tours, rng)
        logits = self.output_logits(out, memory)
        mask = visited if use_visited_mask else None
        return F.log_softmax_masked(logits, mask), visited

    def _teacher_forced(self, points, tours, rng):
        points = np.asarray(points)
        tours = np.asarray(tours, dtype=np.int64)
        if points.ndim == 2:
            points, tours = points[None], tours[None]
        n = points.shape[1]
        if tours.shape != (points.shape[0], n):
            raise F.ShapeError(f"tours {tours.shape} do not match points {points.shape}")
        memory = self.encode(points, rng)
        prefix = tours[:, : n - 1]
        out = self.decode(memory, prefix, rng)
        visited = build_visited_mask(prefix, n).astype(self.dtype)
        return memory, out, visited


# ---------------------------------------------------------------------------
# masks and tables


def build_causal_mask(length: int) -> np.ndarray:
    """(length, length) additive mask: 0 where j <= i, -inf above the diagonal."""
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = -np.inf
    return mask


def build_visited_mask(prefix, n: int) -> np.ndarray:
    """Row i masks (with -inf) every node in ``prefix[..., :i+1]``.

    ``prefix`` is (V,) or (B, V); the result is (V, n) or (B, V, n).
    """
    prefix = _check_prefix(prefix, n)
    onehot = np.zeros(prefix.shape + (n,), dtype=bool)
    np.put_along_axis(onehot, prefix[..., None], True, axis=-1)
    seen = np.logical_or.accumulate(onehot, axis=-2)
    mask = np.where(seen, -np.inf, 0.0)
    return mask


def _check_prefix(prefix, n: int) -> np.ndarray:
    prefix = np.asarray(prefix, dtype=np.int64)
    if prefix.ndim not in (1, 2) or prefix.shape[-1] == 0:
        raise ValueError(f"prefix must be a non-empty (V,) or (B, V) index array, got shape {prefix.shape}")
    if prefix.min() < 0 or prefix.max() >= n:
        raise ValueError(f"prefix indices must lie in [0, {n})")
    rows = prefix.reshape(-1, prefix.shape[-1])
    srt = np.sort(rows, axis=-1)
    if (srt[:, 1:] == srt[:, :-1]).any():
        raise ValueError("prefix contains a repeated node")
    return prefix


@lru_cache(maxsize=256)
def _decoder_pe_cached(kind: str, length: int, n: int, d: int) -> np.ndarray:
    pos = np.arange(length)
    table = posenc.circular_pe(pos, n, d) if kind == "circular" else posenc.sinusoidal_pe(pos, d)
    table.flags.writeable = False
    return table


def decoder_pe_table(kind: str, length: int, n: int, d: int) -> np.ndarray:
    """Decoder positional rows for positions 0..length-1 on a tour of ``n`` nodes."""
    return _decoder_pe_cached(kind, length, n, d)


# ---------------------------------------------------------------------------
# single-instance conveniences


def _points(instance: Instance | np.ndarray) -> np.ndarray:
    pts = instance.points if isinstance(instance, Instance) else np.asarray(instance)
    return pts[None]


def embed_inputs(instance: Instance, model: TSPTransformer) -> Tensor:
    _, x = model.embed_inputs(_points(instance))
    return x.reshape(x.shape[1:])


def encode(instance: Instance, model: TSPTransformer) -> EncoderMemory:
    return model.encode(_points(instance))


def decode(memory: EncoderMemory, prefix: Sequence[int], model: TSPTransformer) -> Tensor:
    out = model.decode(memory, np.asarray(prefix, dtype=np.int64)[None])
    return out.reshape(out.shape[1:])


def output_head(decoder_out: Tensor, memory: EncoderMemory, visited: np.ndarray, model: TSPTransformer) -> Tensor:
    if decoder_out.ndim == 2:
        decoder_out = decoder_out.reshape(1, *decoder_out.shape)
    probs = model.output_head(decoder_out, memory, np.asarray(visited, dtype=model.dtype))
    return probs.reshape(probs.shape[-2:]) if probs.shape[0] == 1 else probs


def forward_teacher_forced(instance: Instance, tour: Tour | Sequence[int], model: TSPTransformer) -> Tensor:
    order = np.asarray(Tour(tour).validate(_points(instance).shape[1]).order)
    probs = model.forward_teacher_forced(_points(instance), order[None])
    return probs.reshape(probs.shape[1:])

"""Dual aware encoder: argument-pair attention over encoder states plus a
stacked convolution summarised by global max pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import ConfigError, ShapeError
from .numcore import Tensor

# Additive score for padded positions; exp() of it underflows to exactly 0.
_MASKED = -1e30


@dataclass
class AttentionParams:
    """Token scores ``v . tanh(h_t @ W_a + a @ U_a)``.

    ``v`` reduces the tanh vector to one scalar per token.
    """

    W_a: Tensor  # (2*hidden, score_dim)
    U_a: Tensor  # (pair_dim, score_dim)
    v: Tensor  # (score_dim, 1)

    def tensors(self) -> list[Tensor]:
        return [self.W_a, self.U_a, self.v]

    @classmethod
    def init(cls, state_dim: int, pair_dim: int, score_dim: int, rng) -> "AttentionParams":
        def u(fan_in, *shape):
            b = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-b, b, size=shape), requires_grad=True)

        return cls(u(state_dim, state_dim, score_dim), u(pair_dim, pair_dim, score_dim), u(score_dim, score_dim, 1))


@dataclass
class ConvLayer:
    W: Tensor  # (width * channels_in, channels_out), window rows in token order
    b: Tensor  # (channels_out,)
    width: int


@dataclass
class ConvStackParams:
    layers: list[ConvLayer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("conv_stack needs at least one layer")
        for i, layer in enumerate(self.layers, 1):
            if layer.width != 2 * i + 1:
                raise ConfigError(f"conv layer {i} has width {layer.width}, expected {2 * i + 1}")

    @property
    def widths(self) -> list[int]:
        return [layer.width for layer in self.layers]

    @property
    def channels_out(self) -> int:
        return self.layers[-1].b.shape[0]

    def tensors(self) -> list[Tensor]:
        return [t for layer in self.layers for t in (layer.W, layer.b)]

    @classmethod
    def init(cls, channels_in: int, filters: int, depth: int, rng) -> "ConvStackParams":
        if depth < 1:
            raise ConfigError(f"conv_depth must be >= 1, got {depth}")
        layers, c_in = [], channels_in
        for i in range(1, depth + 1):
            width = 2 * i + 1
            bound = 1.0 / np.sqrt(width * c_in)
            W = Tensor(rng.uniform(-bound, bound, size=(width * c_in, filters)), requires_grad=True)
            b = Tensor(np.zeros(filters), requires_grad=True)
            layers.append(ConvLayer(W, b, width))
            c_in = filters
        return cls(layers)


def pair_embedding(word_vectors: Tensor, arg1_mask: np.ndarray, arg2_mask: np.ndarray) -> Tensor:
    """Mean word vector of each argument, concatenated: (B, 2*word_dim).

    ``word_vectors`` is (B, T, word_dim); the masks are (B, T) 0/1 arrays.
    """
    parts = []
    for m in (arg1_mask, arg2_mask):
        m = np.asarray(m, dtype=float)
        counts = m.sum(axis=1, keepdims=True)
        if (counts == 0).any():
            raise ShapeError("pair_embedding: an argument mask is empty")
        weights = (m / counts)[:, :, None]
        parts.append(nc.sum(nc.hadamard(word_vectors, weights), axis=1))
    return nc.concat(parts, axis=-1)


def attend(
    H: Tensor, a: Tensor, params: AttentionParams, mask: np.ndarray | None = None
) -> tuple[Tensor, Tensor]:
    """Attention weights over tokens and the reweighted states.

    ``H`` is (T, 2d) with ``a`` (pair_dim,), or batched (B, T, 2d) with
    ``a`` (B, pair_dim). Returns ``alpha`` (T,)/(B, T) and ``F_local``
    with the shape of ``H``.
    """
    unbatched = H.ndim == 2
    if unbatched:
        H = nc.reshape(H, (1,) + H.shape)
        a = nc.reshape(a, (1,) + a.shape)
    B, T, D = H.shape
    if D != params.W_a.shape[0] or a.shape[-1] != params.U_a.shape[0] or a.shape[0] != B:
        raise ShapeError(
            f"attend: H {H.shape}, a {a.shape} do not fit W_a {params.W_a.shape}, U_a {params.U_a.shape}"
        )
    s = params.W_a.shape[1]
    pre = nc.add(nc.matmul(H, params.W_a), nc.reshape(nc.matmul(a, params.U_a), (B, 1, s)))
    scores = nc.reshape(nc.matmul(nc.tanh(pre), params.v), (B, T))
    if mask is not None:
        scores = nc.add(scores, (1.0 - np.asarray(mask, dtype=float)) * _MASKED)
    alpha = nc.softmax(scores, axis=-1)
    F_local = nc.hadamard(H, nc.reshape(alpha, (B, T, 1)))
    if unbatched:
        alpha = nc.reshape(alpha, (T,))
        F_local = nc.reshape(F_local, (T, D))
    return alpha, F_local


def conv_stack(X: Tensor, params: ConvStackParams, mask: np.ndarray | None = None) -> Tensor:
    """Stacked same-length convolutions (widths 3, 5, 7, ...) then max over time.

    Each layer zero-pads symmetrically so every layer sees T positions.
    With a mask, padded positions are zeroed before each layer so they act
    exactly like the zero padding; since ReLU outputs are non-negative the
    zeros never win the max.
    """
    unbatched = X.ndim == 2
    if unbatched:
        X = nc.reshape(X, (1,) + X.shape)
    B, T, _ = X.shape
    m = None if mask is None else np.asarray(mask, dtype=float)[:, :, None]
    cur = X if m is None else nc.hadamard(X, m)
    for layer in params.layers:
        C = cur.shape[-1]
        if layer.W.shape[0] != layer.width * C:
            raise ShapeError(f"conv_stack: layer expects {layer.W.shape[0]} inputs, got {layer.width}x{C}")
        p = (layer.width - 1) // 2
        pad = Tensor(np.zeros((B, p, C)))
        padded = nc.concat([pad, cur, pad], axis=1)
        windows = nc.concat(
            [nc.getitem(padded, (slice(None), slice(k, k + T))) for k in range(layer.width)], axis=-1
        )
        cur = nc.relu(nc.add(nc.matmul(windows, layer.W), layer.b))
        if m is not None:
            cur = nc.hadamard(cur, m)
    pooled = nc.max_over_time(cur, axis=1)
    if unbatched:
        pooled = nc.reshape(pooled, pooled.shape[1:])
    return pooled


def fuse(F_local: Tensor, F_global: Tensor) -> Tensor:
    """Repeat the sentence vector at every step and append it to the local row."""
    if F_local.ndim == 2:
        T = F_local.shape[0]
        return nc.concat([F_local, nc.broadcast_to(F_global, (T, F_global.shape[-1]))], axis=-1)
    B, T, _ = F_local.shape
    g = nc.broadcast_to(nc.reshape(F_global, (B, 1, F_global.shape[-1])), (B, T, F_global.shape[-1]))
    return nc.concat([F_local, g], axis=-1)

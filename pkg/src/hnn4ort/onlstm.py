"""Ordered-neurons LSTM cell and a bidirectional sentence encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import InputError, ShapeError
from .numcore import Tensor

# Column blocks of W, U and b, in this order.
GATES = ("f", "i", "c", "o", "master_f", "master_i")


@dataclass
class ONLSTMParams:
    """All six gates stacked column-wise: block k of width ``hidden`` is gate ``GATES[k]``.

    Applied as ``x @ W + h @ U + b``, so ``W`` is (input, 6*hidden).
    """

    W: Tensor
    U: Tensor
    b: Tensor
    master_input_complement: bool = False

    def __post_init__(self):
        d6 = self.b.shape[0]
        if d6 % 6 or self.W.shape[1] != d6 or self.U.shape != (d6 // 6, d6):
            raise ShapeError(
                f"inconsistent ON-LSTM shapes W={self.W.shape} U={self.U.shape} b={self.b.shape}"
            )

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views (W_g, U_g, b_g) of one gate's block."""
        d, k = self.hidden, GATES.index(name)
        cols = slice(k * d, (k + 1) * d)
        return self.W.data[:, cols], self.U.data[:, cols], self.b.data[cols]

    def tensors(self) -> list[Tensor]:
        return [self.W, self.U, self.b]

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator, **kw) -> "ONLSTMParams":
        bound = 1.0 / np.sqrt(hidden)

        def u(*shape):
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        return cls(u(input_dim, 6 * hidden), u(hidden, 6 * hidden), u(6 * hidden), **kw)


@dataclass
class ONLSTMState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "ONLSTMState":
        return cls(Tensor(np.zeros((batch, hidden))), Tensor(np.zeros((batch, hidden))))


def cell_step(
    params: ONLSTMParams,
    x_t: Tensor | None,
    prev: ONLSTMState,
    x_proj: Tensor | None = None,
    gates: dict | None = None,
) -> ONLSTMState:
    """One ON-LSTM step on a (B, input) batch.

    ``x_proj`` may carry a precomputed ``x_t @ W`` (the encoder projects
    the whole sequence at once). If ``gates`` is a dict it receives every
    gate activation of this step.
    """
    d = params.hidden
    if x_proj is None:
        if x_t.shape[-1] != params.input_dim:
            raise ShapeError(f"cell_step: input dim {x_t.shape[-1]} != {params.input_dim}")
        x_proj = nc.matmul(x_t, params.W)
    if prev.h.shape[-1] != d:
        raise ShapeError(f"cell_step: state dim {prev.h.shape[-1]} != hidden {d}")
    z = nc.add(nc.add(x_proj, nc.matmul(prev.h, params.U)), params.b)

    def block(k):
        return nc.getitem(z, (slice(None), slice(k * d, (k + 1) * d)))

    f = nc.sigmoid(block(0))
    i = nc.sigmoid(block(1))
    c_hat = nc.tanh(block(2))
    o = nc.sigmoid(block(3))
    mf = nc.cumax(block(4))
    mi = nc.cumax(block(5))
    if params.master_input_complement:
        mi = nc.sub(1.0, mi)
    omega = nc.hadamard(mf, mi)
    inner = nc.add(nc.hadamard(f, prev.c), nc.hadamard(i, c_hat))
    c = nc.add(
        nc.add(nc.hadamard(omega, inner), nc.hadamard(nc.sub(mf, omega), prev.c)),
        nc.hadamard(nc.sub(mi, omega), c_hat),
    )
    h = nc.hadamard(o, nc.tanh(c))
    if gates is not None:
        gates.update(f=f, i=i, c_hat=c_hat, o=o, master_f=mf, master_i=mi, omega=omega)
    return ONLSTMState(h, c)


def _run(params, xw, mask, reverse):
    B, T = xw.shape[0], xw.shape[1]
    state = ONLSTMState.zeros(B, params.hidden)
    hs = [None] * T
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        new = cell_step(params, None, state, x_proj=nc.getitem(xw, (slice(None), t)))
        if mask is not None and not mask[:, t].all():
            m = mask[:, t : t + 1]
            keep = 1.0 - m
            new = ONLSTMState(
                nc.add(nc.hadamard(new.h, m), nc.hadamard(state.h, keep)),
                nc.add(nc.hadamard(new.c, m), nc.hadamard(state.c, keep)),
            )
        state = new
        hs[t] = state.h
    return nc.stack(hs, axis=1)


def encode_bidirectional(
    fw: ONLSTMParams, bw: ONLSTMParams, X: Tensor, mask: np.ndarray | None = None
) -> Tensor:
    """Concatenate forward and backward hidden states per token.

    ``X`` is (T, input) or (B, T, input); the output keeps the same batch
    convention with 2*hidden features. ``mask`` (B, T) marks real tokens;
    padded positions leave the running state untouched, so the backward
    pass starts from a zero state at each sequence's last real token.
    """
    unbatched = X.ndim == 2
    if unbatched:
        X = nc.reshape(X, (1,) + X.shape)
    if X.shape[1] == 0:
        raise InputError("encode_bidirectional: empty sequence")
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
    H = nc.concat(
        [
            _run(fw, nc.matmul(X, fw.W), mask, reverse=False),
            _run(bw, nc.matmul(X, bw.W), mask, reverse=True),
        ],
        axis=-1,
    )
    if unbatched:
        H = nc.reshape(H, H.shape[1:])
    return H

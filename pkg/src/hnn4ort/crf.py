"""Linear-chain CRF over K labels with virtual start and end symbols.

The transition matrix ``A`` is (K+2, K+2): row ``K`` is the start symbol,
column ``K+1`` the end symbol. ``A[i, j]`` scores a move from label i to j.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .errors import InputError, ShapeError
from .numcore import Tensor


@dataclass
class CRFParams:
    A: Tensor

    @property
    def num_labels(self) -> int:
        return self.A.shape[0] - 2

    def tensors(self) -> list[Tensor]:
        return [self.A]

    @classmethod
    def init(cls, num_labels: int, rng=None, scale: float = 0.0) -> "CRFParams":
        k = num_labels + 2
        data = np.zeros((k, k)) if rng is None else rng.uniform(-scale, scale, size=(k, k))
        return cls(Tensor(data, requires_grad=True))


def _arrays(P, A) -> tuple[np.ndarray, np.ndarray]:
    P = np.asarray(P.data if isinstance(P, Tensor) else P, dtype=float)
    A = np.asarray(A.data if isinstance(A, Tensor) else A, dtype=float)
    if P.ndim != 2 or P.shape[0] < 1:
        raise ShapeError(f"emissions must be (T>=1, K), got {P.shape}")
    if A.shape != (P.shape[1] + 2, P.shape[1] + 2):
        raise ShapeError(f"transitions must be {(P.shape[1] + 2,) * 2}, got {A.shape}")
    return P, A


def score(P, A, y: Sequence[int]) -> float:
    """Path score: start/end boundary transitions plus emissions."""
    P, A = _arrays(P, A)
    T, K = P.shape
    y = [int(v) for v in y]
    if len(y) != T:
        raise InputError(f"label sequence has length {len(y)}, expected {T}")
    if any(v < 0 or v >= K for v in y):
        raise InputError(f"labels must lie in [0, {K}), got {y}")
    total = A[K, y[0]] + A[y[-1], K + 1]
    for t in range(T):
        total += P[t, y[t]]
        if t:
            total += A[y[t - 1], y[t]]
    return float(total)


def _logsumexp(x, axis):
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def log_partition(P, A) -> float:
    P, A = _arrays(P, A)
    T, K = P.shape
    alpha = A[K, :K] + P[0]
    for t in range(1, T):
        alpha = _logsumexp(alpha[:, None] + A[:K, :K], axis=0) + P[t]
    return float(_logsumexp(alpha + A[:K, K + 1], axis=0))


def viterbi(P, A) -> tuple[list[int], float, float]:
    """Best unconstrained path, its score, and its probability under the CRF.

    Ties go to the lowest label index.
    """
    P, A = _arrays(P, A)
    T, K = P.shape
    delta = A[K, :K] + P[0]
    back = []
    for t in range(1, T):
        cand = delta[:, None] + A[:K, :K]
        bp = cand.argmax(axis=0)
        back.append(bp)
        delta = cand[bp, np.arange(K)] + P[t]
    final = delta + A[:K, K + 1]
    best = int(final.argmax())
    path = [best]
    for bp in reversed(back):
        path.append(int(bp[path[-1]]))
    path.reverse()
    best_score = float(final[best])
    confidence = float(np.exp(min(0.0, best_score - log_partition(P, A))))
    return path, best_score, confidence


def nll_loss(P: Tensor, A: Tensor, y_gold, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood ``log Z - score(gold)`` over a batch.

    ``P`` is (T, K) with ``y_gold`` (T,), or (B, T, K) with ``y_gold``
    (B, T) and an optional (B, T) prefix ``mask`` of real positions.
    """
    y = np.asarray(y_gold, dtype=np.int64)
    if P.ndim == 2:
        P = nc.reshape(P, (1,) + P.shape)
        y = y[None]
    B, T, K = P.shape
    if A.shape != (K + 2, K + 2):
        raise ShapeError(f"transitions must be {(K + 2,) * 2}, got {A.shape}")
    if y.shape != (B, T):
        raise InputError(f"gold labels have shape {y.shape}, expected {(B, T)}")
    mask = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=float)
    lengths = mask.sum(axis=1).astype(int)
    if (lengths < 1).any():
        raise InputError("every sequence needs at least one real position")
    real = mask.astype(bool)
    if (y[real] < 0).any() or (y[real] >= K).any():
        raise InputError(f"gold labels must lie in [0, {K})")

    trans = nc.getitem(A, (slice(0, K), slice(0, K)))
    start = nc.getitem(A, (K, slice(0, K)))
    end = nc.getitem(A, (slice(0, K), K + 1))

    alpha = nc.add(start, nc.getitem(P, (slice(None), 0)))
    for t in range(1, T):
        emit = nc.reshape(nc.getitem(P, (slice(None), t)), (B, 1, K))
        new = nc.logsumexp(nc.add(nc.add(nc.reshape(alpha, (B, K, 1)), trans), emit), axis=1)
        m = mask[:, t : t + 1]
        alpha = new if m.all() else nc.add(nc.hadamard(new, m), nc.hadamard(alpha, 1.0 - m))
    log_z = nc.logsumexp(nc.add(alpha, end), axis=-1)

    y_safe = np.where(real, y, 0)
    onehot = np.eye(K)[y_safe] * mask[:, :, None]
    counts = np.zeros((K + 2, K + 2))
    for b in range(B):
        n = lengths[b]
        seq = y_safe[b, :n]
        counts[K, seq[0]] += 1
        counts[seq[-1], K + 1] += 1
        np.add.at(counts, (seq[:-1], seq[1:]), 1)
    gold = nc.add(nc.sum(nc.hadamard(P, onehot)), nc.sum(nc.hadamard(A, counts)))
    return nc.scale(nc.sub(nc.sum(log_z), gold), 1.0 / B)

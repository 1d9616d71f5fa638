"""HNN4ORT assembly: token features -> bidirectional ON-LSTM -> pair
attention + global convolution -> affine emissions -> CRF.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .corpus import PAD_ID, UNK_ID, CorpusRecord, Vocab
from .crf import CRFParams, nll_loss, viterbi
from .dualaware import AttentionParams, ConvStackParams, attend, conv_stack, fuse, pair_embedding
from .errors import CheckpointError, ConfigError, InputError
from .evaluation import Extraction
from .numcore import Tensor
from .onlstm import ONLSTMParams, encode_bidirectional
from .tagspace import (
    ARG_PAD,
    ARG_SYMBOLS,
    OK,
    REL_INDEX,
    REL_LABELS,
    Sentence,
    SpanSet,
    argument_onehot,
    decode_role,
)


@dataclass
class ModelConfig:
    word_dim: int = 300
    pos_dim: int = 59
    arg_dim: int = 10
    hidden: int = 200
    conv_filters: int = 200
    conv_depth: int = 3
    dropout_p: float = 0.5
    batch_size: int = 256
    lr: float = 0.001
    lr_factor: float = 0.1
    lr_patience: int = 3
    early_stop_patience: int = 10
    max_epochs: int = 100
    seed: int = 13
    master_input_complement: bool = False
    num_labels: int = 5

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "master_input_complement":
                if not isinstance(value, bool):
                    raise ConfigError(f"{f.name} must be a boolean, got {value!r}")
            elif f.name == "dropout_p":
                if not 0.0 <= value < 1.0:
                    raise ConfigError(f"dropout_p must satisfy 0 <= p < 1, got {value}")
            elif f.name == "seed":
                if not isinstance(value, int) or value < 0:
                    raise ConfigError(f"seed must be a non-negative integer, got {value!r}")
            elif f.type in (int, "int"):
                if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                    raise ConfigError(f"{f.name} must be a positive integer, got {value!r}")
            elif not value > 0:
                raise ConfigError(f"{f.name} must be positive, got {value!r}")
        if self.arg_dim != len(ARG_SYMBOLS):
            raise ConfigError(f"arg_dim must be {len(ARG_SYMBOLS)}, got {self.arg_dim}")
        if self.num_labels != len(REL_LABELS):
            raise ConfigError(f"num_labels must be {len(REL_LABELS)}, got {self.num_labels}")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small settings that train in seconds on one core."""
        base = dict(word_dim=50, hidden=32, conv_filters=32, batch_size=8, lr=0.005,
                    dropout_p=0.0, max_epochs=200, early_stop_patience=20, lr_patience=5)
        base.update(overrides)
        return cls(**base)

    @property
    def input_dim(self) -> int:
        return self.word_dim + self.arg_dim + self.pos_dim


@dataclass
class HNN4ORTParams:
    embedding: Tensor
    fw: ONLSTMParams
    bw: ONLSTMParams
    attention: AttentionParams
    conv: ConvStackParams
    W_out: Tensor
    b_out: Tensor
    crf: CRFParams

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("embedding", self.embedding)]
        for prefix, lstm in (("fw", self.fw), ("bw", self.bw)):
            out += [(f"{prefix}.W", lstm.W), (f"{prefix}.U", lstm.U), (f"{prefix}.b", lstm.b)]
        out += [("attention.W_a", self.attention.W_a), ("attention.U_a", self.attention.U_a),
                ("attention.v", self.attention.v)]
        for i, layer in enumerate(self.conv.layers):
            out += [(f"conv.{i}.W", layer.W), (f"conv.{i}.b", layer.b)]
        out += [("out.W", self.W_out), ("out.b", self.b_out), ("crf.A", self.crf.A)]
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    @classmethod
    def init(
        cls, config: ModelConfig, vocab_size: int, rng: np.random.Generator,
        word_vectors: np.ndarray | None = None,
    ) -> "HNN4ORTParams":
        if word_vectors is None:
            word_vectors = rng.uniform(-0.05, 0.05, size=(vocab_size, config.word_dim))
        if word_vectors.shape != (vocab_size, config.word_dim):
            raise ConfigError(
                f"word_vectors shape {word_vectors.shape} != {(vocab_size, config.word_dim)}"
            )
        d = config.hidden
        fw = ONLSTMParams.init(config.input_dim, d, rng,
                               master_input_complement=config.master_input_complement)
        bw = ONLSTMParams.init(config.input_dim, d, rng,
                               master_input_complement=config.master_input_complement)
        attention = AttentionParams.init(2 * d, 2 * config.word_dim, d, rng)
        conv = ConvStackParams.init(config.input_dim, config.conv_filters, config.conv_depth, rng)
        fused = 2 * d + config.conv_filters
        bound = 1.0 / np.sqrt(fused)
        W_out = Tensor(rng.uniform(-bound, bound, size=(fused, config.num_labels)), requires_grad=True)
        b_out = Tensor(np.zeros(config.num_labels), requires_grad=True)
        return cls(Tensor(word_vectors.copy(), requires_grad=True), fw, bw, attention, conv,
                   W_out, b_out, CRFParams.init(config.num_labels))


@dataclass
class Model:
    config: ModelConfig
    words: Vocab
    pos: Vocab
    params: HNN4ORTParams

    @classmethod
    def create(cls, config: ModelConfig, words: Vocab, pos: Vocab, rng=None, word_vectors=None):
        rng = np.random.default_rng(config.seed) if rng is None else rng
        return cls(config, words, pos, HNN4ORTParams.init(config, len(words), rng, word_vectors))


@dataclass
class Batch:
    """Padded index matrices for B sequences of at most T tokens."""

    words: np.ndarray  # (B, T) int
    pos: np.ndarray  # (B, T) int
    args: np.ndarray  # (B, T) int into ARG_SYMBOLS
    mask: np.ndarray  # (B, T) float, 1 on real tokens
    arg1_mask: np.ndarray  # (B, T) float
    arg2_mask: np.ndarray  # (B, T) float
    tags: np.ndarray  # (B, T) int into REL_LABELS, O on padding

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1).astype(int)


def make_batch(
    model: Model,
    items: Sequence[CorpusRecord | tuple[Sentence, tuple[SpanSet, SpanSet]]],
    pad_to: int | None = None,
) -> Batch:
    """Pad records, or (sentence, pair) tuples without gold tags, into one batch."""
    if not items:
        raise InputError("empty batch")
    rows = []
    for item in items:
        if isinstance(item, CorpusRecord):
            rows.append((item.sentence, item.pair, item.gold_tags))
        else:
            rows.append((item[0], item[1], None))
    T = max(len(s) for s, _, _ in rows)
    T = T if pad_to is None else max(T, pad_to)
    B = len(rows)
    words = np.full((B, T), PAD_ID, dtype=np.int64)
    pos = np.full((B, T), PAD_ID, dtype=np.int64)
    args = np.full((B, T), ARG_PAD, dtype=np.int64)
    mask = np.zeros((B, T))
    a1 = np.zeros((B, T))
    a2 = np.zeros((B, T))
    tags = np.full((B, T), REL_INDEX["O"], dtype=np.int64)
    pos_dim = model.config.pos_dim
    for b, (sentence, pair, gold) in enumerate(rows):
        n = len(sentence)
        words[b, :n] = [model.words.index(t) for t in sentence.tokens]
        pos[b, :n] = [i if i < pos_dim else UNK_ID for i in map(model.pos.index, sentence.pos)]
        args[b] = argument_onehot(sentence, pair, length=T)
        mask[b, :n] = 1.0
        a1[b, list(pair[0])] = 1.0
        a2[b, list(pair[1])] = 1.0
        if gold is not None:
            tags[b, :n] = [REL_INDEX[t] for t in gold]
    return Batch(words, pos, args, mask, a1, a2, tags)


def forward_batch(model: Model, batch: Batch, training: bool = False, seed: int | None = None) -> Tensor:
    """Emission scores (B, T, K)."""
    cfg, p = model.config, model.params
    emb = nc.gather_rows(p.embedding, batch.words)
    arg_onehot = np.eye(cfg.arg_dim)[batch.args]
    pos_onehot = np.eye(cfg.pos_dim)[batch.pos]
    X = nc.concat([emb, arg_onehot, pos_onehot], axis=-1)
    H = encode_bidirectional(p.fw, p.bw, X, batch.mask)
    a = pair_embedding(emb, batch.arg1_mask, batch.arg2_mask)
    _, F_local = attend(H, a, p.attention, batch.mask)
    F_global = conv_stack(X, p.conv, batch.mask)
    F = nc.dropout(fuse(F_local, F_global), cfg.dropout_p, seed=seed, training=training)
    return nc.add(nc.matmul(F, p.W_out), p.b_out)


def forward(model: Model, record: CorpusRecord | tuple[Sentence, tuple[SpanSet, SpanSet]]) -> Tensor:
    """Emission matrix (T, K) for one record or (sentence, pair)."""
    sentence = record.sentence if isinstance(record, CorpusRecord) else record[0]
    if len(sentence) == 0:
        raise InputError("cannot run the model on an empty sentence")
    P = forward_batch(model, make_batch(model, [record]))
    return nc.reshape(P, P.shape[1:])


def batch_loss(model: Model, batch: Batch, training: bool = False, seed: int | None = None) -> Tensor:
    P = forward_batch(model, batch, training=training, seed=seed)
    return nll_loss(P, model.params.crf.A, batch.tags, batch.mask)


def decode_batch(model: Model, batch: Batch, P: Tensor | None = None):
    """Viterbi labels and confidence per sequence."""
    if P is None:
        with nc.no_tape():
            P = forward_batch(model, batch)
    A = model.params.crf.A.data
    out = []
    for b, n in enumerate(batch.lengths):
        path, _, conf = viterbi(P.data[b, :n], A)
        out.append(([REL_LABELS[i] for i in path], conf))
    return out


def _extraction(sentence: Sentence, pair, tags, confidence) -> Extraction:
    rel, reason = decode_role(tags, "R")
    confidence = max(confidence, np.finfo(float).tiny)
    return Extraction(
        sentence.id,
        sentence.phrase(pair[0]),
        sentence.phrase(rel) if rel else "",
        sentence.phrase(pair[1]),
        confidence,
        OK if rel else reason,
        tuple(pair[0]),
        rel,
        tuple(pair[1]),
    )


def predict(model: Model, sentence: Sentence, candidate_pairs: Sequence[tuple[SpanSet, SpanSet]]) -> list[Extraction]:
    """One extraction per candidate pair; rejected pairs carry the decoder's reason."""
    if not candidate_pairs:
        return []
    pairs = [(tuple(a), tuple(b)) for a, b in candidate_pairs]
    batch = make_batch(model, [(sentence, pair) for pair in pairs])
    return [
        _extraction(sentence, pair, tags, conf)
        for pair, (tags, conf) in zip(pairs, decode_batch(model, batch))
    ]


def gold_extraction(record: CorpusRecord) -> Extraction:
    return _extraction(record.sentence, record.pair, record.gold_tags, 1.0)


def predict_records(model: Model, records: Sequence[CorpusRecord], batch_size: int = 64) -> list[Extraction]:
    out = []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        decoded = decode_batch(model, make_batch(model, chunk))
        out += [_extraction(r.sentence, r.pair, tags, conf) for r, (tags, conf) in zip(chunk, decoded)]
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"HNN4ORT\x00"
FORMAT_VERSION = 1


def save(model: Model, path: str | Path) -> None:
    """Binary container: magic, version, JSON metadata, then named float64 arrays.

    Each array is stored as name, rank, dims and little-endian data.
    """
    meta = json.dumps(
        {"config": asdict(model.config), "words": model.words.to_dict(), "pos": model.pos.to_dict()},
        sort_keys=True,
    ).encode("utf-8")
    named = model.params.named_tensors()
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(named))]
    for name, t in named:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<HB", len(raw), t.ndim) + raw)
        chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(t.data.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load(path: str | Path) -> Model:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not an HNN4ORT checkpoint")
    version, meta_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {FORMAT_VERSION})")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
        config = ModelConfig(**meta["config"])
        words, pos = Vocab.from_dict(meta["words"]), Vocab.from_dict(meta["pos"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    model = Model.create(config, words, pos, rng=np.random.default_rng(0))
    expected = dict(model.params.named_tensors())
    (count,) = r.unpack("<I")
    if count != len(expected):
        raise CheckpointError(f"checkpoint holds {count} tensors, model needs {len(expected)}")
    for _ in range(count):
        name_len, ndim = r.unpack("<HB")
        name = r.take(name_len).decode("utf-8")
        shape = r.unpack(f"<{ndim}I")
        if name not in expected:
            raise CheckpointError(f"unexpected tensor {name!r}")
        target = expected.pop(name)
        if tuple(shape) != target.shape:
            raise CheckpointError(f"tensor {name!r} has shape {tuple(shape)}, model needs {target.shape}")
        n = int(np.prod(shape)) if shape else 1
        target.data[...] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape)
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after last tensor")
    return model

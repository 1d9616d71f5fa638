import numpy as np
import pytest

from hnn4ort import numcore as nc
from hnn4ort.corpus import build_vocabs, make_record
from hnn4ort.errors import CheckpointError, ConfigError
from hnn4ort.model import (
    Model,
    ModelConfig,
    batch_loss,
    forward,
    forward_batch,
    load,
    make_batch,
    predict,
    save,
)
from hnn4ort.synthetic import WORKED_SENTENCE, WORKED_TRIPLES, worked_records, templated_records
from hnn4ort.tagspace import REL_INDEX, Sentence, Triple
from hnn4ort.training import PlateauSchedule, train

TINY = dict(word_dim=4, pos_dim=6, hidden=4, conv_filters=3, conv_depth=2, dropout_p=0.0, seed=5)


def _toy_model(records, **kw):
    words, pos = build_vocabs(records)
    return Model.create(ModelConfig(**{**TINY, **kw}), words, pos)


def _toy_record():
    s = Sentence("toy", "alice will visit the bank".split(), "NNP MD VB DT NN".split())
    return make_record(s, Triple((0,), (1, 2), (3, 4)))


class TestConfig:
    def test_full_size_defaults(self):
        c = ModelConfig()
        assert (c.word_dim, c.pos_dim, c.arg_dim, c.hidden, c.conv_filters) == (300, 59, 10, 200, 200)
        assert (c.batch_size, c.lr, c.lr_factor, c.num_labels) == (256, 0.001, 0.1, 5)

    def test_desk_preset(self):
        c = ModelConfig.desk()
        assert (c.hidden, c.conv_filters, c.word_dim) == (32, 32, 50)

    @pytest.mark.parametrize("field,value", [("hidden", 0), ("dropout_p", 1.0), ("lr", -1.0),
                                             ("arg_dim", 9), ("batch_size", 2.5),
                                             ("master_input_complement", 1)])
    def test_invalid_values_name_the_field(self, field, value):
        with pytest.raises(ConfigError, match=field):
            ModelConfig(**{field: value})


class TestForward:
    def test_shape(self):
        recs = templated_records(8)
        m = _toy_model(recs)
        for r in recs:
            assert forward(m, r).shape == (len(r.sentence), 5)

    def test_candidate_pair_changes_emissions(self):
        recs = worked_records()
        m = _toy_model(recs)
        a, b = forward(m, recs[0]).data, forward(m, recs[1]).data
        assert not np.allclose(a, b)

    def test_padding_leaves_real_positions_unchanged(self):
        recs = templated_records(6)
        m = _toy_model(recs)
        for r in recs:
            n = len(r.sentence)
            alone = forward_batch(m, make_batch(m, [r])).data[0]
            padded = forward_batch(m, make_batch(m, [r], pad_to=n + 4)).data[0]
            assert np.abs(padded[:n] - alone).max() < 1e-9

    def test_batched_equals_single(self):
        recs = templated_records(6)
        m = _toy_model(recs)
        P = forward_batch(m, make_batch(m, recs)).data
        for b, r in enumerate(recs):
            n = len(r.sentence)
            assert np.abs(P[b, :n] - forward(m, r).data).max() < 1e-12

    def test_unknown_pos_maps_to_unk(self):
        recs = templated_records(8)
        m = _toy_model(recs, pos_dim=3)
        batch = make_batch(m, recs)
        assert batch.pos.max() < 3

    def test_full_gradient_check(self):
        r = _toy_record()
        # seed 1: every conv unit starts off its relu kink (zero biases can land exactly on it)
        m = _toy_model([r], hidden=8, seed=1)
        batch = make_batch(m, [r])
        worst = {}
        for name, t in m.params.named_tensors():
            worst[name] = nc.grad_check(lambda _: batch_loss(m, batch), t)
        assert max(worst.values()) < 1e-5, worst

    def test_gradient_check_with_dropout_and_padding(self):
        recs = templated_records(3, seed=1)
        m = _toy_model(recs, dropout_p=0.3)
        batch = make_batch(m, recs)
        for name, t in m.params.named_tensors():
            if name in ("fw.W", "attention.W_a", "conv.1.W", "crf.A", "embedding"):
                err = nc.grad_check(lambda _: batch_loss(m, batch, training=True, seed=11), t)
                assert err < 1e-5, name


class TestPredict:
    def _biased(self, label):
        recs = worked_records()
        m = _toy_model(recs)
        m.params.W_out.data[:] = 0.0
        m.params.b_out.data[:] = 0.0
        m.params.b_out.data[REL_INDEX[label]] = 50.0
        return m

    def test_all_outside_is_missed(self):
        m = self._biased("O")
        (x,) = predict(m, WORKED_SENTENCE, [((0, 1), (3,))])
        assert x.status == "missed" and not x.accepted and x.rel == ""

    def test_inside_without_begin_is_scheme_violation(self):
        m = self._biased("R-I")
        (x,) = predict(m, WORKED_SENTENCE, [((0, 1), (3,))])
        assert x.status == "scheme_violation"

    def test_empty_pairs(self):
        assert predict(self._biased("O"), WORKED_SENTENCE, []) == []

    def test_pure(self):
        recs = templated_records(4)
        m = _toy_model(recs)
        s = recs[0].sentence
        assert predict(m, s, [recs[0].pair]) == predict(m, s, [recs[0].pair])

    @pytest.mark.slow
    def test_overfit_worked_example(self):
        recs = worked_records()
        words, pos = build_vocabs(recs)
        cfg = ModelConfig.desk(word_dim=16, hidden=16, conv_filters=16, dropout_p=0.0, batch_size=3,
                               lr=0.02, max_epochs=150, early_stop_patience=50,
                               lr_patience=20, seed=1)
        m, history = train(cfg, recs, recs, words, pos)
        out = predict(m, WORKED_SENTENCE, [(t.arg1, t.arg2) for t in WORKED_TRIPLES])
        assert [(x.arg1, x.rel, x.arg2) for x in out] == [
            ("The America", "President", "Trump"),
            ("Trump", "will visit", "the Apple"),
            ("the Apple", "founded by", "Steven Paul Jobs"),
        ]
        assert all(x.accepted and 0 < x.confidence <= 1 for x in out)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        recs = templated_records(10)
        m = _toy_model(recs)
        p = tmp_path / "m.ckpt"
        save(m, p)
        m2 = load(p)
        for (n1, a), (n2, b) in zip(m.params.named_tensors(), m2.params.named_tensors()):
            assert n1 == n2 and np.array_equal(a.data, b.data)
        assert m2.config == m.config and m2.words.itos == m.words.itos
        for r in recs:
            assert np.array_equal(forward(m, r).data, forward(m2, r).data)
        assert predict(m, recs[0].sentence, [recs[0].pair]) == predict(m2, recs[0].sentence, [recs[0].pair])

    def test_save_is_deterministic(self, tmp_path):
        m = _toy_model(templated_records(4))
        save(m, tmp_path / "a")
        save(load(tmp_path / "a"), tmp_path / "b")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_truncated(self, tmp_path):
        m = _toy_model(templated_records(4))
        p = tmp_path / "m.ckpt"
        save(m, p)
        raw = p.read_bytes()
        for cut in (4, 20, len(raw) // 2, len(raw) - 1):
            p.write_bytes(raw[:cut])
            with pytest.raises(CheckpointError):
                load(p)

    def test_trailing_bytes_bad_magic_and_version(self, tmp_path):
        m = _toy_model(templated_records(4))
        p = tmp_path / "m.ckpt"
        save(m, p)
        raw = p.read_bytes()
        for bad in (raw + b"\0", b"X" + raw[1:], raw[:8] + b"\x02" + raw[9:]):
            p.write_bytes(bad)
            with pytest.raises(CheckpointError):
                load(p)

    def test_shape_mismatch(self, tmp_path):
        m = _toy_model(templated_records(4))
        p = tmp_path / "m.ckpt"
        save(m, p)
        raw = bytearray(p.read_bytes())
        marker = raw.find(b"out.b")
        # out.b has rank 1; its single dim follows the name
        raw[marker + 5] += 1
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="shape"):
            load(p)


class TestTraining:
    def test_schedule_rule(self):
        s = PlateauSchedule(1e-3, 0.1, lr_patience=3, stop_patience=10)
        assert s.update(1.0)
        for _ in range(3):
            assert not s.update(1.0)
        assert s.lr == pytest.approx(1e-4) and not s.should_stop
        for _ in range(5):
            s.update(2.0)
        assert not s.should_stop
        for _ in range(2):
            s.update(2.0)
        assert s.should_stop
        assert s.lr == pytest.approx(1e-6)

    def test_deterministic_and_loss_decreases(self):
        recs = templated_records(16, seed=2)
        train_recs, val_recs = recs[:-4], recs[-4:]
        cfg = ModelConfig(**{**TINY, "dropout_p": 0.2}, batch_size=4, lr=0.01, max_epochs=5)
        m1, h1 = train(cfg, train_recs, val_recs)
        m2, h2 = train(cfg, train_recs, val_recs)
        assert h1 == h2
        for a, b in zip(m1.params.tensors(), m2.params.tensors()):
            assert np.array_equal(a.data, b.data)
        losses = [s.val_loss for s in h1]
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_restores_best_epoch(self):
        recs = templated_records(12, seed=3)
        cfg = ModelConfig(**TINY, batch_size=4, lr=0.01, max_epochs=4)
        seen = []
        m, history = train(cfg, recs[:-3], recs[-3:], on_epoch=seen.append)
        assert seen == history
        from hnn4ort.training import evaluate_loss

        best = min(s.val_loss for s in history)
        assert evaluate_loss(m, recs[-3:]) == pytest.approx(best, abs=1e-12)

    def test_empty_split_rejected(self):
        from hnn4ort.errors import InputError

        with pytest.raises(InputError):
            train(ModelConfig(**TINY), templated_records(2), [])

    def test_divergence_is_reported(self):
        from hnn4ort.errors import TrainingDiverged

        recs = templated_records(4)
        cfg = ModelConfig(**TINY, lr=1e300, max_epochs=3, batch_size=2)
        with pytest.raises(TrainingDiverged, match="epoch"):
            with np.errstate(all="ignore"):
                train(cfg, recs, recs)

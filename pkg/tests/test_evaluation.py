from collections import Counter, namedtuple

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hnn4ort import evaluation as ev
from hnn4ort.errors import ConfigError, FormatError, InputError
from hnn4ort.evaluation import (
    ErrorBreakdown,
    Extraction,
    MetricsReport,
    categorize_errors,
    match_relation,
    overlap_subset,
    pr_curve,
    prf,
)
from hnn4ort.synthetic import WORKED_SENTENCE, worked_records, templated_records

WORDS = "the company was founded by alice and will visit soon".split()
LONG = [f"w{i}" for i in range(40)]


def _x(sid, rel_span, conf=1.0, status="ok", pair=((0,), (9,)), words=WORDS):
    rel = " ".join(words[i] for i in rel_span) if rel_span else ""
    return Extraction(sid, "a", rel, "b", conf, status, pair[0], tuple(rel_span) if rel_span else None, pair[1])


class TestMatch:
    def test_identical_spans_match_everywhere(self):
        a = _x("s", (2, 3, 4))
        for c in ev.CRITERIA:
            assert match_relation(a, a, c)

    def test_auxiliary_only_matches_on_head(self):
        will_visit = Extraction("s", "trump", "will visit", "the apple")
        visit = Extraction("s", "trump", "visit", "the apple")
        assert not match_relation(will_visit, visit, "exact_string")
        assert match_relation(will_visit, visit, "head_overlap")
        s_wv = _x("s", (7, 8))
        s_v = _x("s", (8,))
        assert not match_relation(s_wv, s_v, "exact_span")
        assert match_relation(s_wv, s_v, "head_overlap")

    def test_exact_string_normalizes(self):
        assert match_relation(Extraction("s", "a", "Will  Visit.", "b"), Extraction("s", "a", "will visit", "b"), "exact_string")

    def test_different_sentences_never_match(self):
        assert not match_relation(_x("s", (1,)), _x("t", (1,)), "exact_span")

    def test_unknown_criterion(self):
        with pytest.raises(ConfigError):
            match_relation(_x("s", (1,)), _x("s", (1,)), "fuzzy")
        with pytest.raises(ConfigError):
            prf([], [], "fuzzy")

    def test_exact_span_needs_positions(self):
        with pytest.raises(InputError):
            match_relation(Extraction("s", "a", "r", "b"), _x("s", (1,)), "exact_span")

    def test_random_perturbations_agree_with_definitions(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            g = tuple(sorted(rng.choice(10, size=int(rng.integers(1, 4)), replace=False)))
            p = list(g)
            for _ in range(int(rng.integers(0, 3))):
                if rng.random() < 0.5 and len(p) > 1:
                    p.pop(int(rng.integers(len(p))))
                else:
                    p.append(int(rng.integers(10)))
            p = tuple(sorted(set(p)))
            gx, px = _x("s", g), _x("s", p)
            assert match_relation(px, gx, "exact_span") == (p == g)
            assert match_relation(px, gx, "exact_string") == ([WORDS[i] for i in p] == [WORDS[i] for i in g])
            heads = []
            for span in (p, g):
                content = [i for i in span if WORDS[i] not in ev.FUNCTION_WORDS]
                heads.append(content[-1] if content else span[-1])
            assert match_relation(px, gx, "head_overlap") == (heads[0] == heads[1])


class TestPRF:
    def test_perfect(self):
        golds = [_x("s", (1,)), _x("t", (2, 3))]
        r = prf(golds, golds)
        assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)

    def test_worked_case(self):
        golds = [_x("s", (1,), pair=((0,), (2,))), _x("s", (3,), pair=((0,), (4,))),
                 _x("t", (1,)), _x("t", (2,)), _x("u", (5,))]
        preds = [_x("s", (1,)), _x("t", (2,)), _x("t", (7,)), _x("u", (6,))]
        r = prf(preds, golds)
        assert (r.tp, r.fp, r.fn) == (2, 2, 3)
        assert r.precision == 0.5 and r.recall == 0.4
        assert abs(r.f1 - 4 / 9) < 1e-12

    def test_duplicates_count_once(self):
        golds = [_x("s", (1,))]
        r = prf([_x("s", (1,)), _x("s", (1,), 0.5)], golds)
        assert (r.tp, r.fp, r.fn) == (1, 1, 0)

    def test_rejected_predictions_are_ignored(self):
        r = prf([_x("s", (), status="missed"), _x("s", (), status="scheme_violation")], [_x("s", (1,))])
        assert (r.tp, r.fp, r.fn) == (0, 0, 1) and r.precision == 0.0

    def test_empty_gold_gives_zero_recall(self):
        assert prf([_x("s", (1,))], []).recall == 0.0

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            golds = [_x(f"s{rng.integers(3)}", (int(rng.integers(5)),)) for _ in range(rng.integers(0, 8))]
            preds = [_x(f"s{rng.integers(3)}", (int(rng.integers(5)),), float(rng.random()) + 0.01)
                     for _ in range(rng.integers(0, 8))]
            pc = Counter((p.sentence_id, p.rel_span) for p in preds)
            gc = Counter((g.sentence_id, g.rel_span) for g in golds)
            tp = sum(min(n, gc[k]) for k, n in pc.items())
            assert prf(preds, golds) == MetricsReport.from_counts(tp, len(preds), len(golds))

    @given(st.integers(0, 50), st.integers(1, 50), st.integers(1, 50))
    def test_f1_zero_iff_no_tp(self, tp, extra_p, extra_g):
        r = MetricsReport.from_counts(tp, tp + extra_p, tp + extra_g)
        assert (r.f1 == 0) == (tp == 0)
        if tp:
            assert abs(r.f1 - 2 / (1 / r.precision + 1 / r.recall)) < 1e-12

    def test_parallel_matches_serial(self):
        rng = np.random.default_rng(1)
        golds = [_x(f"s{i % 20}", (int(rng.integers(4)),)) for i in range(60)]
        preds = [_x(f"s{i % 20}", (int(rng.integers(4)),), float(rng.random()) + 0.1) for i in range(60)]
        assert prf(preds, golds, workers=2) == prf(preds, golds)


def _random_scored(rng, n_gold=12, n_pred=15):
    golds = [_x(f"s{i % 4}", (i,), words=LONG) for i in range(n_gold)]
    preds = []
    for _ in range(n_pred):
        i = int(rng.integers(n_gold + 5))
        conf = float(rng.choice([0.2, 0.4, 0.6, 0.8])) if rng.random() < 0.3 else float(rng.random()) + 1e-3
        preds.append(_x(f"s{i % 4}", (i,), conf, words=LONG))
    return preds, golds


def _auc_oracle(preds, golds):
    """Recompute P/R from scratch at each threshold, then integrate with numpy."""
    levels = sorted({p.confidence for p in preds if p.accepted}, reverse=True)
    rs, ps = [], []
    for tau in levels:
        rep = prf([p for p in preds if p.confidence >= tau], golds)
        rs.append(rep.recall)
        ps.append(rep.precision)
    if not rs:
        return 0.0
    r = np.array([0.0] + rs)
    p = np.array([max(ps)] + ps)
    return float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2))


class TestPRCurve:
    def test_all_correct(self):
        golds = [_x(f"s{i}", (1,)) for i in range(5)]
        preds = [_x(f"s{i}", (1,), 0.1 + i / 10) for i in range(5)]
        assert pr_curve(preds, golds).auc == 1.0

    def test_all_wrong(self):
        golds = [_x(f"s{i}", (1,)) for i in range(5)]
        preds = [_x(f"s{i}", (2,), 0.1 + i / 10) for i in range(5)]
        assert pr_curve(preds, golds).auc == 0.0

    def test_empty(self):
        c = pr_curve([], [_x("s", (1,))])
        assert c.auc == 0.0 and c.points == []

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            preds, golds = _random_scored(rng)
            assert abs(pr_curve(preds, golds).auc - _auc_oracle(preds, golds)) < 1e-9

    def test_full_prefix_equals_prf(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            preds, golds = _random_scored(rng)
            c, r = pr_curve(preds, golds), prf(preds, golds)
            assert c.precision[-1] == r.precision and c.recall[-1] == r.recall

    def test_recall_nondecreasing_and_auc_in_unit_interval(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            c = pr_curve(*_random_scored(rng))
            assert all(a <= b for a, b in zip(c.recall, c.recall[1:]))
            assert 0.0 <= c.auc <= 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["cube", "log", "affine", "sigmoid"]))
    def test_monotone_rescaling_leaves_auc_unchanged(self, seed, kind):
        f = {
            "cube": lambda c: c**3,
            "log": lambda c: 5.0 + np.log(c),
            "affine": lambda c: 3.0 * c + 0.25,
            "sigmoid": lambda c: 1 / (1 + np.exp(-4 * c)),
        }[kind]
        preds, golds = _random_scored(np.random.default_rng(seed))
        moved = [Extraction(p.sentence_id, p.arg1, p.rel, p.arg2, float(f(p.confidence)), p.status,
                            p.arg1_span, p.rel_span, p.arg2_span) for p in preds]
        assert pr_curve(moved, golds).auc == pr_curve(preds, golds).auc

    def test_ties_enter_together(self):
        golds = [_x("s", (1,), pair=((0,), (5,))), _x("s", (2,), pair=((0,), (6,)))]
        preds = [_x("s", (1,), 0.5), _x("s", (3,), 0.5)]
        c = pr_curve(preds, golds)
        assert c.thresholds == (0.5,) and c.precision == (0.5,) and c.recall == (0.5,)


class TestErrors:
    def test_all_o_is_missed(self):
        g = _x("s", (1,))
        assert categorize_errors([_x("s", (), status="missed")], [g]) == ErrorBreakdown(missed=1)
        assert categorize_errors([], [g]) == ErrorBreakdown(missed=1)

    def test_start_takes_precedence(self):
        words = "trump will visit the apple".split()
        g = _x("s", (1, 2), words=words)
        p = _x("s", (2, 3), words=words)
        assert categorize_errors([p], [g]) == ErrorBreakdown(wrong_start=1)
        p_end = _x("s", (1, 2, 3), words=words)
        assert categorize_errors([p_end], [g]) == ErrorBreakdown(wrong_end=1)

    def test_planted_suite(self):
        rng = np.random.default_rng(4)
        plan = Counter()
        preds, golds = [], []
        for k in range(400):
            pair = ((0,), (9,))
            start = int(rng.integers(1, 4))
            span = tuple(range(start, start + int(rng.integers(1, 4))))
            golds.append(_x(f"s{k}", span, pair=pair))
            kind = rng.choice(["ok", "missed", "absent", "scheme_violation", "wrong_start", "wrong_end"])
            if kind == "ok":
                preds.append(_x(f"s{k}", span, 0.9, pair=pair))
            elif kind == "missed":
                preds.append(_x(f"s{k}", (), 0.9, status="missed", pair=pair))
            elif kind == "scheme_violation":
                preds.append(_x(f"s{k}", (), 0.9, status="scheme_violation", pair=pair))
            elif kind == "wrong_start":
                preds.append(_x(f"s{k}", (span[0] + 1,) + span[1:] if len(span) > 1 else (span[0] + 1,), 0.9, pair=pair))
            elif kind == "wrong_end":
                preds.append(_x(f"s{k}", span + (span[-1] + 1,), 0.9, pair=pair))
            plan["missed" if kind in ("missed", "absent") else kind] += 1
        got = categorize_errors(preds, golds)
        assert got == ErrorBreakdown(plan["missed"], plan["scheme_violation"], plan["wrong_start"], plan["wrong_end"])
        assert got.total == len(golds) - prf(preds, golds).tp
        assert abs(sum(got.proportions().values()) - 1) < 1e-12


Rec = namedtuple("Rec", "sentence_id")


class TestOverlap:
    def test_single_triple_excluded(self):
        assert overlap_subset([Rec("a"), Rec("b"), Rec("b")]) == ([Rec("b"), Rec("b")], 2 / 3)

    def test_worked_included(self):
        subset, share = overlap_subset(worked_records())
        assert len(subset) == 3 and share == 1.0
        assert subset[0].sentence.id == WORKED_SENTENCE.id

    def test_known_forty_percent(self):
        recs = [Rec(f"m{i // 2}") for i in range(40)] + [Rec(f"u{i}") for i in range(60)]
        order = np.random.default_rng(0).permutation(100)
        _, share = overlap_subset([recs[i] for i in order])
        assert share == 0.40

    def test_on_corpus_records(self):
        recs = templated_records(64)
        counts = Counter(r.sentence_id for r in recs)
        subset, _ = overlap_subset(recs)
        assert all(counts[r.sentence_id] >= 2 for r in subset)


class TestFiles:
    def test_round_trip(self, tmp_path):
        items = [_x("s", (2, 3), 0.1234567890123), _x("t", (), 0.5, status="missed"),
                 Extraction("u", "x y", "r", "z", 1.0)]
        p = tmp_path / "x.tsv"
        ev.write_extractions(p, items)
        assert ev.read_extractions(p) == items

    def test_five_field_gold(self, tmp_path):
        p = tmp_path / "g.tsv"
        p.write_text("s1\t0.7\tTrump\twill visit\tthe Apple\n")
        (x,) = ev.read_extractions(p)
        assert x.confidence == 0.7 and x.status == "ok" and x.rel_span is None

    def test_bad_lines(self, tmp_path):
        p = tmp_path / "g.tsv"
        p.write_text("s1\t0.7\tTrump\n")
        with pytest.raises(FormatError, match=":1:"):
            ev.read_extractions(p)
        p.write_text("s1\t-1\ta\tb\tc\n")
        with pytest.raises(FormatError):
            ev.read_extractions(p)

    def test_pr_curve_file(self, tmp_path):
        rng = np.random.default_rng(2)
        c = pr_curve(*_random_scored(rng))
        p = tmp_path / "pr.tsv"
        ev.write_pr_curve(p, c)
        lines = p.read_text().splitlines()
        assert lines[0] == "threshold\trecall\tprecision" and len(lines) == len(c.recall) + 1

    def test_reports(self):
        r = MetricsReport.from_counts(2, 4, 5)
        assert "precision    0.5000" in ev.format_table(r)
        assert "m.precision=0.5" in ev.format_kv("m", {"precision": 0.5})

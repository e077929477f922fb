import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from labelmatch.corpus import Dataset, Document, Label, LabelVocabulary
from labelmatch.evaluation import (ZERO_SHOT, PredictionSet, apply_threshold, average_precision, evaluate,
                                   expected_random_ap, frequency_buckets, macro_ap, macro_micro, select_threshold,
                                   threshold_curve)

from oracles import brute_macro_ap, brute_macro_micro


def vocab_of(*ids):
    return LabelVocabulary(tuple(Label(i, (i.lower(),)) for i in ids))


def pset(doc_id, scores: dict, gold):
    return PredictionSet(doc_id, tuple(sorted(scores.items(), key=lambda p: (-p[1], p[0]))), frozenset(gold))


def random_predictions(rng, n_docs=None, n_labels=None, quantize=False):
    n_labels = n_labels or int(rng.integers(1, 7))
    n_docs = n_docs or int(rng.integers(1, 9))
    ids = [f"L{j}" for j in range(n_labels)]
    preds = []
    for i in range(n_docs):
        raw = rng.uniform(0.01, 0.99, n_labels)
        if quantize:
            raw = np.round(raw * 4) / 4 * 0.98 + 0.01
        gold = {l for l in ids if rng.uniform() < 0.35}
        preds.append(pset(f"d{i}", dict(zip(ids, raw.tolist())), gold))
    return preds, vocab_of(*ids)


def test_apply_threshold_examples():
    preds = [pset("d", {"a": 0.7, "b": 0.5}, set())]
    assert apply_threshold(preds, 0.0) == [{"a", "b"}]
    assert apply_threshold(preds, 1.0) == [set()]
    assert apply_threshold(preds, 0.6) == [{"a"}]


def test_macro_micro_worked_example():
    vocab = vocab_of("A", "B")
    # A: tp=1 fp=1 fn=0, B: tp=0 fp=0 fn=1
    preds = [{"A"}, {"A"}]
    gold = [{"A"}, {"B"}]
    p, r, f, micro = macro_micro(preds, gold, vocab)
    assert p == pytest.approx(0.25, abs=1e-12)
    assert r == pytest.approx(0.5, abs=1e-12)
    assert f == pytest.approx(0.33333, abs=1e-5)
    assert micro == pytest.approx(0.5, abs=1e-5)


def test_macro_micro_edge_cases():
    vocab = vocab_of("A", "B")
    assert macro_micro([{"A"}, {"B"}], [{"A"}, {"B"}], vocab) == (1.0, 1.0, 1.0, 1.0)
    p, r, f, micro = macro_micro([set(), set()], [{"A"}, {"B"}], vocab)
    assert (p, f, micro) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        macro_micro([set()], [set(), set()], vocab)


def test_average_precision_examples():
    assert average_precision(["g", "x"], {"g"}) == 1.0
    assert average_precision(["x", "g1", "g2"], {"g1", "g2"}) == pytest.approx(0.58333, abs=1e-5)
    assert average_precision(["x"], set()) is None


def test_macro_ap_examples():
    vocab = vocab_of("A", "B")
    preds = [pset("d0", {"A": 0.9, "B": 0.1}, {"A"}), pset("d1", {"A": 0.8, "B": 0.3}, {"A"})]
    assert macro_ap(preds, vocab) == 1.0
    preds = [pset("d0", {"A": 0.9, "B": 0.4}, {"B"})]
    assert macro_ap(preds, vocab) == 0.5


def test_metric_oracles_on_random_sets(rng):
    for _ in range(200):
        preds, vocab = random_predictions(rng)
        t = float(rng.uniform(0.1, 0.9))
        pred_sets = apply_threshold(preds, t)
        golds = [p.gold for p in preds]
        assert macro_micro(pred_sets, golds, vocab) == pytest.approx(
            brute_macro_micro(pred_sets, golds, vocab.ids), abs=1e-12)
        rankings = [[l for l, _ in p.ranking] for p in preds]
        assert macro_ap(preds, vocab) == pytest.approx(brute_macro_ap(rankings, golds, vocab.ids), abs=1e-12)


def test_per_label_counts_reproduce_aggregates(rng):
    for _ in range(50):
        preds, vocab = random_predictions(rng)
        report = evaluate(preds, vocab, 0.5)
        stats = list(report.per_label.values())
        n = len(stats)
        assert report.macro_p == math.fsum(s.precision for s in stats) / n
        assert report.macro_r == math.fsum(s.recall for s in stats) / n
        assert report.macro_f1 == math.fsum(s.f1 for s in stats) / n
        TP, FP, FN = (sum(getattr(s, k) for s in stats) for k in ("tp", "fp", "fn"))
        assert report.micro_f1 == (2 * TP / (2 * TP + FP + FN) if TP + FP + FN else 0.0)
        for value in report.to_record().values():
            assert 0.0 <= value <= 1.0


def test_missing_labels_rank_last_with_zero_precision():
    vocab = vocab_of("A", "B", "C")
    partial = [PredictionSet("d", (("B", 0.9),), frozenset({"A"}))]
    assert macro_ap(partial, vocab) == 0.0


def test_select_threshold_single_document():
    vocab = vocab_of("a", "b")
    dev = [pset("d", {"a": 0.9, "b": 0.2}, {"a"})]
    # b is never gold, so its F1 is 0 at every cutoff and every candidate ties at 0.5
    for t in (0.0, 0.2, 0.9):
        assert macro_micro(apply_threshold(dev, t), [{"a"}], vocab)[2] == 0.5
    assert select_threshold(dev, vocab) == (0.0, 0.5)
    # once b is gold somewhere, 0.9 is the unique best cutoff on the first document
    dev2 = dev + [pset("e", {"a": 0.1, "b": 0.95}, {"b"})]
    assert select_threshold(dev2, vocab) == (0.9, 1.0)


def test_select_threshold_all_gold():
    vocab = vocab_of("a", "b")
    dev = [pset("d", {"a": 0.3, "b": 0.6}, {"a", "b"}), pset("e", {"a": 0.1, "b": 0.2}, {"a", "b"})]
    assert select_threshold(dev, vocab) == (0.0, 1.0)


def exhaustive_macro_f1(preds, vocab, t):
    return brute_macro_micro(apply_threshold(preds, t), [p.gold for p in preds], vocab.ids)[2]


def test_threshold_sweep_optimality(rng):
    for trial in range(50):
        preds, vocab = random_predictions(rng, quantize=trial % 2 == 0)
        threshold, best = select_threshold(preds, vocab)
        candidates = sorted({s for p in preds for _, s in p.ranking} | {0.0, 1.0})
        assert threshold in candidates
        values = {t: exhaustive_macro_f1(preds, vocab, t) for t in candidates}
        assert best == pytest.approx(values[threshold], abs=1e-12)
        for t, v in values.items():
            assert best >= v - 1e-12
            if v > best - 1e-12:
                assert threshold <= t or v < best


def test_threshold_curve_matches_direct(rng):
    preds, vocab = random_predictions(rng, n_docs=6, n_labels=4)
    scores = np.array([[dict(p.ranking)[l] for l in vocab.ids] for p in preds])
    gold = np.array([[l in p.gold for l in vocab.ids] for p in preds])
    cands = np.linspace(0, 1, 11)
    np.testing.assert_allclose(threshold_curve(scores, gold, cands, chunk=3),
                               [exhaustive_macro_f1(preds, vocab, t) for t in cands], atol=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_macro_ap_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    preds, vocab = random_predictions(rng)
    squashed = [pset(p.doc_id, {l: s ** 3 for l, s in p.ranking}, p.gold) for p in preds]
    assert macro_ap(squashed, vocab) == macro_ap(preds, vocab)


def test_unused_label_never_raises_macro_metrics(rng):
    for _ in range(30):
        preds, vocab = random_predictions(rng)
        report = evaluate(preds, vocab, 0.5)
        bigger = LabelVocabulary(vocab.labels + (Label("ZZ", ("zz",)),))
        padded = [pset(p.doc_id, dict(p.ranking) | {"ZZ": 0.001}, p.gold) for p in preds]
        grown = evaluate(padded, bigger, 0.5)
        n = len(vocab)
        assert grown.macro_f1 == pytest.approx(report.macro_f1 * n / (n + 1), abs=1e-12)
        assert grown.macro_f1 <= report.macro_f1


def dataset_with(freqs: dict):
    docs = []
    k = 0
    for label_id, count in freqs.items():
        for _ in range(count):
            docs.append(Document(f"d{k}", ("x",), frozenset({label_id})))
            k += 1
    return Dataset(tuple(docs), "train")


def test_frequency_buckets_examples():
    vocab = vocab_of("A", "B", "C", "D")
    buckets = frequency_buckets(dataset_with({"A": 10, "B": 5, "C": 2}), vocab)
    assert buckets == {"A": "q1", "B": "q2", "C": "q3", "D": ZERO_SHOT}
    vocab8 = vocab_of(*"HGFEDCBA")
    buckets = frequency_buckets(dataset_with({l: 3 for l in "ABCDEFGH"}), vocab8)
    assert [buckets[l] for l in "ABCDEFGH"] == ["q1", "q1", "q2", "q2", "q3", "q3", "q4", "q4"]


def test_frequency_bucket_sizes_balanced(rng):
    for _ in range(30):
        ids = [f"L{j:02d}" for j in range(int(rng.integers(1, 40)))]
        freqs = {l: int(rng.integers(0, 6)) for l in ids}
        buckets = frequency_buckets(dataset_with(freqs), vocab_of(*ids))
        sizes = [sum(1 for b in buckets.values() if b == f"q{q}") for q in range(1, 5)]
        assert max(sizes) - min(sizes) <= 1
        assert {l for l, b in buckets.items() if b == ZERO_SHOT} == {l for l, f in freqs.items() if f == 0}


@pytest.mark.parametrize("n, g", [(1, 1), (3, 1), (4, 2), (5, 3), (5, 5), (6, 2)])
def test_expected_random_ap_by_enumeration(n, g):
    """Average over all rankings of the precision at each gold item's rank."""
    gold = set(range(g))
    total = Fraction(0)
    count = 0
    for perm in itertools.permutations(range(n)):
        for item in gold:
            r = perm.index(item) + 1
            total += Fraction(sum(1 for x in perm[:r] if x in gold), r)
            count += 1
    assert expected_random_ap(n, g) == pytest.approx(float(total / count), abs=1e-12)


def test_report_buckets_include_zero_shot():
    vocab = vocab_of("A", "B")
    preds = [pset("d", {"A": 0.9, "B": 0.4}, {"A", "B"})]
    buckets = {"A": "q1", "B": ZERO_SHOT}
    record = evaluate(preds, vocab, 0.5, buckets).to_record()
    assert record["zero_shot.macro_ap"] == 1.0
    assert record["zero_shot.random_ap"] == pytest.approx(1.0)
    assert record["q1.macro_f1"] == 1.0 and record["zero_shot.macro_f1"] == 0.0

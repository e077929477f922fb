"""Multi-label metrics, global threshold selection, and long-tail breakdowns.

Most functions come in two flavours: a dense one working on a
``(n_docs, n_labels)`` score matrix with label columns in vocabulary order,
and a :class:`PredictionSet` one that matches the on-disk prediction format.
Labels missing from a (truncated) ranking are stored as NaN: never
predicted, and contributing zero precision to AP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .corpus import Dataset, LabelVocabulary

ZERO_SHOT = "zero_shot"


@dataclass(frozen=True)
class PredictionSet:
    doc_id: str
    ranking: tuple[tuple[str, float], ...]
    gold: frozenset[str]

    @classmethod
    def from_scores(cls, doc_id: str, scores: np.ndarray, vocab: LabelVocabulary, gold) -> PredictionSet:
        pairs = sorted(zip(vocab.ids, map(float, scores)), key=lambda p: (-p[1], p[0]))
        return cls(doc_id, tuple(pairs), frozenset(gold))


@dataclass(frozen=True)
class LabelStats:
    tp: int
    fp: int
    fn: int
    n_gold: int
    ap: float | None

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return _ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)


@dataclass
class MetricReport:
    macro_p: float
    macro_r: float
    macro_f1: float
    micro_f1: float
    macro_ap: float
    threshold: float
    per_label: dict[str, LabelStats]
    buckets: dict[str, dict[str, float]] = field(default_factory=dict)
    label_buckets: dict[str, str] = field(default_factory=dict)
    train_freq: dict[str, int] = field(default_factory=dict)

    def to_record(self) -> dict:
        record = {
            "macro_p": self.macro_p,
            "macro_r": self.macro_r,
            "macro_f1": self.macro_f1,
            "micro_f1": self.micro_f1,
            "macro_ap": self.macro_ap,
            "threshold": self.threshold,
        }
        for name, stats in self.buckets.items():
            for key, value in stats.items():
                record[f"{name}.{key}"] = value
        return record

    def per_label_rows(self) -> list[list]:
        rows = []
        for label_id, stats in self.per_label.items():
            rows.append([label_id, self.train_freq.get(label_id, ""), self.label_buckets.get(label_id, ""),
                         stats.tp, stats.fp, stats.fn, "" if stats.ap is None else stats.ap])
        return rows


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def _mean(values: Iterable[float]) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


# -- dense helpers -------------------------------------------------------------------------

def to_matrix(preds: Sequence[PredictionSet], vocab: LabelVocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Dense (scores, gold) matrices; labels absent from a ranking become NaN."""
    scores = np.full((len(preds), len(vocab)), np.nan)
    gold = np.zeros((len(preds), len(vocab)), dtype=bool)
    for i, pred in enumerate(preds):
        for label_id, score in pred.ranking:
            scores[i, vocab.position(label_id)] = score
        for label_id in pred.gold:
            if label_id not in vocab:
                raise ValueError(f"document {pred.doc_id!r}: gold label {label_id!r} not in vocabulary")
            gold[i, vocab.position(label_id)] = True
    return scores, gold


def gold_matrix(dataset: Dataset, vocab: LabelVocabulary) -> np.ndarray:
    gold = np.zeros((len(dataset), len(vocab)), dtype=bool)
    for i, doc in enumerate(dataset):
        for label_id in doc.gold_labels:
            gold[i, vocab.position(label_id)] = True
    return gold


def confusion(pred: np.ndarray, gold: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gold = np.asarray(gold, dtype=bool)
    if pred.shape != gold.shape:
        raise ValueError(f"prediction/gold shape mismatch: {pred.shape} vs {gold.shape}")
    tp = (pred & gold).sum(axis=0)
    fp = (pred & ~gold).sum(axis=0)
    fn = (~pred & gold).sum(axis=0)
    return tp, fp, fn


def metrics_from_counts(tp, fp, fn) -> tuple[float, float, float, float]:
    per_p = [_ratio(a, a + b) for a, b in zip(tp, fp)]
    per_r = [_ratio(a, a + c) for a, c in zip(tp, fn)]
    per_f = [_ratio(2 * a, 2 * a + b + c) for a, b, c in zip(tp, fp, fn)]
    TP, FP, FN = int(np.sum(tp)), int(np.sum(fp)), int(np.sum(fn))
    return _mean(per_p), _mean(per_r), _mean(per_f), _ratio(2 * TP, 2 * TP + FP + FN)


def rank_order(scores: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    """Column order for one row: score descending, label id ascending, missing last."""
    key = np.where(np.isnan(scores), np.inf, -scores)
    return np.lexsort((id_rank, key))


def label_id_ranks(vocab: LabelVocabulary) -> np.ndarray:
    ids = vocab.ids
    ranks = np.empty(len(ids), dtype=np.int64)
    ranks[np.argsort(np.array(ids, dtype=object), kind="stable")] = np.arange(len(ids))
    return ranks


def precision_at_gold(scores: np.ndarray, gold: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    """Precision at the rank of each gold label (0 where missing), NaN off-gold."""
    out = np.full(scores.shape, np.nan)
    for i in range(scores.shape[0]):
        order = rank_order(scores[i], id_rank)
        rel = gold[i, order]
        hits = np.cumsum(rel)
        prec = hits / np.arange(1, len(order) + 1)
        prec[np.isnan(scores[i, order])] = 0.0
        out[i, order[rel]] = prec[rel]
    return out


def per_label_ap(scores: np.ndarray, gold: np.ndarray, id_rank: np.ndarray) -> list[float | None]:
    prec = precision_at_gold(scores, gold, id_rank)
    result: list[float | None] = []
    for j in range(scores.shape[1]):
        vals = prec[gold[:, j], j]
        result.append(_mean(vals) if vals.size else None)
    return result


# -- public operations ---------------------------------------------------------------------

def apply_threshold(preds: Sequence[PredictionSet], threshold: float) -> list[set[str]]:
    return [{label_id for label_id, score in p.ranking if score >= threshold} for p in preds]


def macro_micro(pred_sets: Sequence[set[str]], gold_sets: Sequence[Iterable[str]],
                vocab: LabelVocabulary) -> tuple[float, float, float, float]:
    """(macro P, macro R, macro F1, micro F1); macro averages span every vocabulary label."""
    if len(pred_sets) != len(gold_sets):
        raise ValueError(f"{len(pred_sets)} prediction sets for {len(gold_sets)} gold sets")
    pred = np.zeros((len(pred_sets), len(vocab)), dtype=bool)
    gold = np.zeros_like(pred)
    for i, (p, g) in enumerate(zip(pred_sets, gold_sets)):
        for label_id in p:
            pred[i, vocab.position(label_id)] = True
        for label_id in g:
            gold[i, vocab.position(label_id)] = True
    return metrics_from_counts(*confusion(pred, gold))


def average_precision(ranking: Sequence[str], gold: Iterable[str]) -> float | None:
    """Mean precision at the rank of each gold item; unranked gold items count 0."""
    gold = set(gold)
    if not gold:
        return None
    hits = 0
    total = 0.0
    for rank, item in enumerate(ranking, start=1):
        if item in gold:
            hits += 1
            total += hits / rank
    return total / len(gold)


def macro_ap(preds: Sequence[PredictionSet], vocab: LabelVocabulary) -> float:
    """Per label: mean precision-at-its-rank over its gold documents; then mean over labels."""
    scores, gold = to_matrix(preds, vocab)
    return macro_ap_dense(scores, gold, label_id_ranks(vocab))


def macro_ap_dense(scores, gold, id_rank) -> float:
    return _mean(ap for ap in per_label_ap(scores, gold, id_rank) if ap is not None)


def _macro_f1_exact(scores: np.ndarray, gold: np.ndarray, threshold: float) -> Fraction:
    tp, fp, fn = confusion(scores >= threshold, gold)
    return sum((Fraction(2 * int(a), 2 * int(a) + int(b) + int(c)) for a, b, c in zip(tp, fp, fn)
                if a), Fraction(0)) / scores.shape[1]


def threshold_curve(scores: np.ndarray, gold: np.ndarray, candidates: np.ndarray,
                    chunk: int = 2048) -> np.ndarray:
    """MacroF1 at each candidate threshold (predict iff score >= threshold)."""
    n_labels = scores.shape[1]
    per_label = []
    for j in range(n_labels):
        ranked = ~np.isnan(scores[:, j])
        col = scores[ranked, j]
        per_label.append((np.sort(col), np.sort(col[gold[ranked, j]]), int(gold[:, j].sum())))
    out = np.empty(len(candidates))
    for start in range(0, len(candidates), chunk):
        cand = candidates[start:start + chunk]
        total = np.zeros(len(cand))
        for all_sorted, pos_sorted, n_gold in per_label:
            n_pred = len(all_sorted) - np.searchsorted(all_sorted, cand, side="left")
            tp = len(pos_sorted) - np.searchsorted(pos_sorted, cand, side="left")
            den = n_pred + n_gold
            total += np.where(tp > 0, 2.0 * tp / np.maximum(den, 1), 0.0)
        out[start:start + chunk] = total / n_labels
    return out


def select_threshold_dense(scores: np.ndarray, gold: np.ndarray) -> tuple[float, float]:
    if scores.shape[0] == 0:
        raise ValueError("threshold selection needs a non-empty dev set")
    finite = scores[~np.isnan(scores)]
    candidates = np.union1d(finite, [0.0, 1.0])
    candidates = candidates[(candidates >= 0.0) & (candidates <= 1.0)]
    curve = threshold_curve(scores, gold, candidates)
    best = curve.max()
    # float sums can split exact ties; settle near-ties with rational arithmetic
    near = np.nonzero(curve >= best - 1e-9)[0]
    exact = [(_macro_f1_exact(scores, gold, candidates[i]), -i) for i in near]
    _, neg_i = max(exact)
    threshold = float(candidates[-neg_i])
    _, _, macro_f1, _ = metrics_from_counts(*confusion(scores >= threshold, gold))
    return threshold, macro_f1


def select_threshold(dev_preds: Sequence[PredictionSet], vocab: LabelVocabulary) -> tuple[float, float]:
    """Global threshold maximizing dev MacroF1 over distinct dev scores plus {0, 1}.

    Ties go to the lowest threshold.
    """
    scores, gold = to_matrix(dev_preds, vocab)
    return select_threshold_dense(scores, gold)


def frequency_buckets(train: Dataset, vocab: LabelVocabulary, quartiles: int = 4) -> dict[str, str]:
    """Bucket labels by train frequency: ``q1`` (most frequent) .. ``qN``, plus ``zero_shot``.

    Non-zero labels are ordered by frequency descending, then id, and split
    into ``quartiles`` contiguous groups whose sizes differ by at most one.
    """
    freq = train.label_frequencies()
    seen = [(freq[i], i) for i in vocab.ids if freq.get(i, 0) > 0]
    seen.sort(key=lambda p: (-p[0], p[1]))
    buckets = {label_id: ZERO_SHOT for label_id in vocab.ids if freq.get(label_id, 0) == 0}
    for b, chunk in enumerate(np.array_split(np.arange(len(seen)), quartiles), start=1):
        for k in chunk:
            buckets[seen[k][1]] = f"q{b}"
    return {label_id: buckets[label_id] for label_id in vocab.ids}


def expected_random_ap(n_labels: int, n_gold: int) -> float:
    """Expected precision at a gold label's rank under a uniformly random ranking."""
    harmonic = math.fsum(1.0 / r for r in range(1, n_labels + 1))
    if n_labels == 1:
        return 1.0
    return (harmonic + (n_gold - 1) / (n_labels - 1) * (n_labels - harmonic)) / n_labels


def random_ap_dense(gold: np.ndarray, columns: Sequence[int] | None = None) -> float:
    """Random-ranking counterpart of :func:`macro_ap_dense` over ``columns``."""
    n_docs, n_labels = gold.shape
    per_doc = gold.sum(axis=1)
    cols = range(n_labels) if columns is None else columns
    per_label = []
    for j in cols:
        docs = np.nonzero(gold[:, j])[0]
        if docs.size:
            per_label.append(_mean(expected_random_ap(n_labels, int(per_doc[i])) for i in docs))
    return _mean(per_label)


def evaluate_dense(scores: np.ndarray, gold: np.ndarray, vocab: LabelVocabulary, threshold: float,
                   buckets: dict[str, str] | None = None,
                   train_freq: dict[str, int] | None = None) -> MetricReport:
    if scores.shape != gold.shape or scores.shape[1] != len(vocab):
        raise ValueError(f"score matrix {scores.shape} does not match gold {gold.shape} / {len(vocab)} labels")
    id_rank = label_id_ranks(vocab)
    tp, fp, fn = confusion(scores >= threshold, gold)
    macro_p, macro_r, macro_f1, micro_f1 = metrics_from_counts(tp, fp, fn)
    aps = per_label_ap(scores, gold, id_rank)
    n_gold = gold.sum(axis=0)
    per_label = {label_id: LabelStats(int(tp[j]), int(fp[j]), int(fn[j]), int(n_gold[j]), aps[j])
                 for j, label_id in enumerate(vocab.ids)}
    report = MetricReport(macro_p, macro_r, macro_f1, micro_f1,
                          _mean(ap for ap in aps if ap is not None), float(threshold), per_label,
                          label_buckets=dict(buckets or {}), train_freq=dict(train_freq or {}))
    if buckets:
        for name in sorted(set(buckets.values()), key=_bucket_key):
            cols = [j for j, label_id in enumerate(vocab.ids) if buckets[label_id] == name]
            bp, br, bf, _ = metrics_from_counts(tp[cols], fp[cols], fn[cols])
            ap_vals = [aps[j] for j in cols if aps[j] is not None]
            report.buckets[name] = {
                "n_labels": len(cols),
                "n_gold_labels": len(ap_vals),
                "macro_p": bp,
                "macro_r": br,
                "macro_f1": bf,
                "macro_ap": _mean(ap_vals),
                "random_ap": random_ap_dense(gold, cols),
            }
    return report


def evaluate(preds: Sequence[PredictionSet], vocab: LabelVocabulary, threshold: float,
             buckets: dict[str, str] | None = None, train_freq: dict[str, int] | None = None) -> MetricReport:
    scores, gold = to_matrix(preds, vocab)
    return evaluate_dense(scores, gold, vocab, threshold, buckets, train_freq)


def _bucket_key(name: str):
    return (1, 0) if name == ZERO_SHOT else (0, int(name[1:]))

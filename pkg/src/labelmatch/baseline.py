"""Mean-of-embeddings logistic classifier and its max-combination with interaction scores."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Document, LabelVocabulary
from .embeddings import EmbeddingError, EmbeddingTable, OovPolicy, format_row, load_embeddings
from .interaction import InteractionScorer, LabelPrediction, rank_predictions, sigmoid


class Mode(str, enum.Enum):
    BASE = "base"
    INTERACTION = "interaction"
    MAX = "max"


@dataclass
class BaselineWeights:
    """One weight row and bias per label, in vocabulary order."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (n_labels, dim) with a bias per row")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("baseline weights contain non-finite values")

    @classmethod
    def zeros(cls, n_labels: int, dim: int) -> BaselineWeights:
        return cls(np.zeros((n_labels, dim)), np.zeros(n_labels))

    def __len__(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> BaselineWeights:
        return BaselineWeights(self.weights.copy(), self.bias.copy())

    def extended(self, n_extra: int) -> BaselineWeights:
        """Append ``n_extra`` zero rows (labels added after training)."""
        dim = self.weights.shape[1]
        return BaselineWeights(np.vstack([self.weights, np.zeros((n_extra, dim))]),
                               np.concatenate([self.bias, np.zeros(n_extra)]))


def save_baseline(weights: BaselineWeights, vocab: LabelVocabulary, path: str | Path) -> None:
    """Text vector format keyed by label id; the bias is the last value of each row."""
    n, dim = weights.weights.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{n} {dim + 1}\n")
        for label_id, w, b in zip(vocab.ids, weights.weights, weights.bias):
            fh.write(format_row(label_id, np.append(w, b)) + "\n")


def load_baseline(path: str | Path, vocab: LabelVocabulary) -> BaselineWeights:
    table = load_embeddings(path)
    if set(table.index) != set(vocab.ids) or len(table) != len(vocab):
        raise EmbeddingError(f"{path}: baseline rows do not match the label vocabulary")
    rows = table.matrix[[table.index[i] for i in vocab.ids]]
    return BaselineWeights(rows[:, :-1], rows[:, -1])


@dataclass
class CombinedModel:
    table: EmbeddingTable
    weights: BaselineWeights
    vocab: LabelVocabulary
    policy: OovPolicy = OovPolicy.BINARY
    mode: Mode = Mode.MAX
    _scorer: InteractionScorer | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.policy = OovPolicy(self.policy)
        if len(self.weights) != len(self.vocab):
            raise ValueError(f"{len(self.weights)} baseline rows for {len(self.vocab)} labels")
        if self.weights.weights.shape[1] != self.table.dim:
            raise ValueError("baseline weight dim does not match embedding dim")

    @property
    def scorer(self) -> InteractionScorer:
        if self._scorer is None:
            self._scorer = InteractionScorer(self.vocab, self.policy)
        return self._scorer

    def predict(self, doc: Document, mode: Mode | None = None) -> list[LabelPrediction]:
        """Ranked predictions; anchors always come from the interaction branch."""
        scores, anchors = self.scores(doc, mode)
        preds = [LabelPrediction(label_id, float(s), None if a < 0 else int(a))
                 for label_id, s, a in zip(self.vocab.ids, scores, anchors)]
        return rank_predictions(preds)

    def scores(self, doc: Document, mode: Mode | None = None) -> tuple[np.ndarray, np.ndarray]:
        mode = Mode(mode or self.mode)
        match = self.scorer.forward(doc.tokens, self.table)
        base = base_scores(doc, self) if mode is not Mode.INTERACTION else None
        return combine_scores(base, match.scores, mode), match.anchors


def doc_representation(doc: Document, table: EmbeddingTable) -> np.ndarray:
    """Mean of in-vocabulary token embeddings; zero vector if there are none."""
    rows = table.rows(doc.tokens)
    rows = rows[rows >= 0]
    if rows.size == 0:
        return np.zeros(table.dim)
    return table.matrix[rows].mean(axis=0)


def base_logits(doc: Document, model: CombinedModel) -> np.ndarray:
    rep = doc_representation(doc, model.table)
    return model.weights.weights @ rep + model.weights.bias


def base_scores(doc: Document, model: CombinedModel) -> np.ndarray:
    return sigmoid(base_logits(doc, model))


def combine_scores(base, inter, mode: Mode = Mode.MAX) -> np.ndarray:
    mode = Mode(mode)
    base = None if base is None else np.asarray(base, dtype=np.float64)
    inter = None if inter is None else np.asarray(inter, dtype=np.float64)
    if base is not None and inter is not None and base.shape != inter.shape:
        raise ValueError(f"score length mismatch: {base.shape} vs {inter.shape}")
    if mode is Mode.INTERACTION:
        return inter
    if mode is Mode.BASE:
        return base
    return np.maximum(base, inter)

"""Soft n-gram interaction matching between label names and document text.

A label of ``n`` name tokens is scored against a document by sliding a
length-``n`` diagonal over the label x document cosine-similarity matrix:
position ``k`` averages ``S[m, k + m]`` for ``m < n`` (columns past the end
of the document are zero padding), the average goes through a sigmoid, and the
label score is the maximum over positions. The argmax position is kept as the
anchor of the match.

``similarity_matrix`` / ``position_scores`` / ``label_score`` are the
per-label reference path. :class:`InteractionScorer` computes the same
quantities for a whole vocabulary at once and is what training and
inference use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Document, Label, LabelVocabulary
from .embeddings import EmbeddingTable, OovPolicy, token_similarity, unit_rows


def sigmoid(x):
    """Numerically stable logistic function for scalars or arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LabelPrediction:
    label_id: str
    score: float
    anchor: int | None


def similarity_matrix(label: Label, doc: Document, table: EmbeddingTable,
                      policy: OovPolicy = OovPolicy.BINARY) -> np.ndarray:
    S = np.zeros((len(label.name_tokens), len(doc.tokens)))
    for j, lt in enumerate(label.name_tokens):
        for k, dt in enumerate(doc.tokens):
            S[j, k] = token_similarity(lt, dt, table, policy)
    return S


def window_means(S: np.ndarray) -> np.ndarray:
    """Length-normalized diagonal sums, one per document position."""
    S = np.asarray(S, dtype=np.float64)
    n_label, n_doc = S.shape
    if n_label < 1:
        raise ValueError("similarity matrix needs at least one label row")
    padded = np.zeros((n_label, n_doc + n_label - 1))
    padded[:, :n_doc] = S
    sums = np.zeros(n_doc)
    for m in range(n_label):
        sums += padded[m, m:m + n_doc]
    return sums / n_label


def position_scores(S: np.ndarray) -> np.ndarray:
    return sigmoid(window_means(S))


def label_score(P: np.ndarray) -> tuple[float, int | None]:
    """Max pooling with lowest-index tie-break; empty input scores sigmoid(0)."""
    P = np.asarray(P, dtype=np.float64)
    if P.size == 0:
        return 0.5, None
    anchor = int(np.argmax(P))
    return float(P[anchor]), anchor


def rank_predictions(preds: list[LabelPrediction]) -> list[LabelPrediction]:
    return sorted(preds, key=lambda p: (-p.score, p.label_id))


def add_label(vocab: LabelVocabulary, label: Label) -> LabelVocabulary:
    """New vocabulary with ``label`` appended; raises on an id collision."""
    if label.id in vocab:
        raise ValueError(f"label id {label.id!r} already present")
    return LabelVocabulary(vocab.labels + (label,))


@dataclass
class DocumentMatch:
    """Forward state for one document against every label in a vocabulary.

    ``logits`` holds each label's best window mean (the pre-sigmoid score),
    ``anchors`` its start position or -1 for an empty document.
    """

    doc_rows: np.ndarray
    doc_units: np.ndarray
    doc_norms: np.ndarray
    sim: np.ndarray
    grad_mask: np.ndarray
    logits: np.ndarray
    anchors: np.ndarray

    @property
    def scores(self) -> np.ndarray:
        return sigmoid(self.logits)


class InteractionScorer:
    """Scores all labels of a vocabulary against documents in one pass.

    Label tokens are deduplicated; the label x document similarity for each
    distinct token is computed once per document and gathered per label.
    Labels are processed in groups of equal name length.
    """

    def __init__(self, vocab: LabelVocabulary, policy: OovPolicy = OovPolicy.BINARY):
        self.vocab = vocab
        self.policy = OovPolicy(policy)
        tokens: dict[str, int] = {}
        for label in vocab:
            for tok in label.name_tokens:
                tokens.setdefault(tok, len(tokens))
        self.token_ids = tokens
        self.tokens = list(tokens)
        groups: dict[int, list[int]] = {}
        for i, label in enumerate(vocab):
            groups.setdefault(len(label), []).append(i)
        self.groups = [
            (length, np.array(members, dtype=np.int64),
             np.array([[tokens[t] for t in vocab.labels[i].name_tokens] for i in members], dtype=np.int64))
            for length, members in sorted(groups.items())
        ]

    def _label_units(self, table: EmbeddingTable):
        rows = table.rows(self.tokens)
        vecs = np.zeros((len(rows), table.dim))
        present = rows >= 0
        vecs[present] = table.matrix[rows[present]]
        units, norms = unit_rows(vecs)
        return rows, units, norms

    def forward(self, tokens, table: EmbeddingTable, label_state=None) -> DocumentMatch:
        label_rows, label_units, label_norms = label_state or self._label_units(table)
        n_doc = len(tokens)
        doc_rows = table.rows(tokens)
        doc_vecs = np.zeros((n_doc, table.dim))
        present = doc_rows >= 0
        doc_vecs[present] = table.matrix[doc_rows[present]]
        doc_units, doc_norms = unit_rows(doc_vecs)

        both = (label_rows >= 0)[:, None] & present[None, :]
        sim = np.clip(label_units @ doc_units.T, -1.0, 1.0)
        sim = np.where(both, sim, 0.0)
        # cosine of a zero-norm vector is pinned at 0, so it carries no gradient
        grad_mask = both & (label_norms > 0)[:, None] & (doc_norms > 0)[None, :]
        # a token against itself is exactly 1, not 1 - ulp
        sim[grad_mask & (label_rows[:, None] == doc_rows[None, :])] = 1.0
        if self.policy is OovPolicy.BINARY and n_doc:
            doc_ids = np.fromiter((self.token_ids.get(t, -1) for t in tokens), dtype=np.int64, count=n_doc)
            hit = doc_ids >= 0
            oov_pair = ~both[doc_ids[hit], np.nonzero(hit)[0]]
            sim[doc_ids[hit][oov_pair], np.nonzero(hit)[0][oov_pair]] = 1.0

        n_labels = len(self.vocab)
        logits = np.zeros(n_labels)
        anchors = np.full(n_labels, -1, dtype=np.int64)
        if n_doc:
            for length, members, tok in self.groups:
                means = self._group_means(sim, length, tok, n_doc)
                best = np.argmax(means, axis=1)
                logits[members] = means[np.arange(len(members)), best]
                anchors[members] = best
        return DocumentMatch(doc_rows, doc_units, doc_norms, sim, grad_mask, logits, anchors)

    @staticmethod
    def _group_means(sim, length, tok, n_doc):
        padded = np.zeros((sim.shape[0], n_doc + length - 1))
        padded[:, :n_doc] = sim
        sums = np.zeros((tok.shape[0], n_doc))
        for m in range(length):
            sums += padded[tok[:, m], m:m + n_doc]
        return sums / length

    def score(self, doc: Document, table: EmbeddingTable) -> list[LabelPrediction]:
        """Rank every label for ``doc``: score descending, then label id."""
        match = self.forward(doc.tokens, table)
        scores = match.scores
        preds = [
            LabelPrediction(label.id, float(scores[i]), None if match.anchors[i] < 0 else int(match.anchors[i]))
            for i, label in enumerate(self.vocab)
        ]
        return rank_predictions(preds)


def score_all_labels(doc: Document, vocab: LabelVocabulary, table: EmbeddingTable,
                     policy: OovPolicy = OovPolicy.BINARY) -> list[LabelPrediction]:
    return InteractionScorer(vocab, policy).score(doc, table)

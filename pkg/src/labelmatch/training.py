"""Joint training of the interaction matcher and the baseline classifier.

Gradients are derived by hand. For a label routed to the interaction branch
the loss gradient reaches only the max-pooled window: each similarity cell
on that diagonal receives ``dL/dlogit / |L|``, and each cell passes its
gradient to both embedding rows through the cosine partials.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .baseline import BaselineWeights, CombinedModel, Mode
from .corpus import Dataset, Document, LabelVocabulary
from .embeddings import EmbeddingTable, OovPolicy
from .evaluation import confusion, gold_matrix, metrics_from_counts, select_threshold_dense
from .interaction import sigmoid

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    mode: Mode = Mode.MAX
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_doc_len: int = 2500
    freeze_embeddings_for_base: bool = False
    policy: OovPolicy = OovPolicy.BINARY

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.policy = OovPolicy(self.policy)
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.max_doc_len < 1:
            raise ValueError("epochs, batch_size and max_doc_len must be positive")

    def manifest(self) -> dict[str, str]:
        return {k: (v.value if hasattr(v, "value") else str(v)) for k, v in asdict(self).items()}


@dataclass
class GradientBundle:
    """Sparse gradients: only embedding rows and label rows that were touched."""

    emb_rows: np.ndarray
    emb_grads: np.ndarray
    base_rows: np.ndarray
    weight_grads: np.ndarray
    bias_grads: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> GradientBundle:
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, dim)),
                   np.zeros(0, dtype=np.int64), np.zeros((0, dim)), np.zeros(0))

    def embedding(self) -> dict[int, np.ndarray]:
        return {int(r): g for r, g in zip(self.emb_rows, self.emb_grads)}

    def baseline(self) -> dict[int, tuple[np.ndarray, float]]:
        return {int(r): (w, float(b)) for r, w, b in zip(self.base_rows, self.weight_grads, self.bias_grads)}

    @classmethod
    def mean(cls, bundles: Sequence[GradientBundle], dim: int) -> GradientBundle:
        """Average of per-document gradients, reduced in list order."""
        if not bundles:
            return cls.empty(dim)
        n = len(bundles)
        emb_rows, emb_grads = _reduce([b.emb_rows for b in bundles], [b.emb_grads for b in bundles], dim)
        base_rows, packed = _reduce([b.base_rows for b in bundles],
                                    [np.column_stack([b.weight_grads, b.bias_grads]) for b in bundles], dim + 1)
        return cls(emb_rows, emb_grads / n, base_rows, packed[:, :-1] / n, packed[:, -1] / n)


def _reduce(rows, grads, width):
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    if rows.size == 0:
        return rows.astype(np.int64), np.zeros((0, width))
    grads = np.concatenate(grads)
    unique, inverse = np.unique(rows, return_inverse=True)
    out = np.zeros((len(unique), width))
    np.add.at(out, inverse, grads)
    return unique, out


def bce_loss(scores, gold) -> float:
    """Mean binary cross entropy over labels for probabilities strictly inside (0, 1)."""
    p = np.asarray(scores, dtype=np.float64)
    y = np.asarray(gold, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def bce_with_logits(logits: np.ndarray, y: np.ndarray) -> float:
    # softplus(-z) = -log sigmoid(z); stays finite where sigmoid rounds to 0 or 1
    return float(np.mean(y * np.logaddexp(0.0, -logits) + (1.0 - y) * np.logaddexp(0.0, logits)))


def gold_vector(gold, vocab: LabelVocabulary) -> np.ndarray:
    y = np.zeros(len(vocab))
    for label_id in gold:
        y[vocab.position(label_id)] = 1.0
    return y


@dataclass
class _Forward:
    logits: np.ndarray
    to_inter: np.ndarray
    match: object = None
    rep: np.ndarray | None = None
    rep_rows: np.ndarray | None = None
    base: np.ndarray | None = None


def _forward(tokens, model: CombinedModel, mode: Mode, label_state=None) -> _Forward:
    n = len(model.vocab)
    match = None
    if mode is not Mode.BASE:
        match = model.scorer.forward(tokens, model.table, label_state)
    rep = rep_rows = base = None
    if mode is not Mode.INTERACTION:
        rows = model.table.rows(tokens)
        rep_rows = rows[rows >= 0]
        rep = model.table.matrix[rep_rows].mean(axis=0) if rep_rows.size else np.zeros(model.table.dim)
        base = model.weights.weights @ rep + model.weights.bias
    if mode is Mode.INTERACTION:
        to_inter = np.ones(n, dtype=bool)
        logits = match.logits
    elif mode is Mode.BASE:
        to_inter = np.zeros(n, dtype=bool)
        logits = base
    else:
        to_inter = match.logits >= base
        logits = np.where(to_inter, match.logits, base)
    return _Forward(logits, to_inter, match, rep, rep_rows, base)


def loss_value(doc: Document, gold, model: CombinedModel, config: TrainConfig) -> float:
    tokens = doc.tokens[:config.max_doc_len]
    fwd = _forward(tokens, model, config.mode)
    return bce_with_logits(fwd.logits, gold_vector(gold, model.vocab))


def backward(doc: Document, gold, model: CombinedModel, config: TrainConfig,
             label_state=None) -> tuple[float, GradientBundle]:
    """Loss of one document and its gradient w.r.t. embeddings and baseline rows."""
    mode = config.mode
    if Mode(model.mode) is not mode:
        raise ValueError(f"model mode {model.mode.value} does not match config mode {mode.value}")
    tokens = doc.tokens[:config.max_doc_len]
    table = model.table
    dim = table.dim
    y = gold_vector(gold, model.vocab)
    fwd = _forward(tokens, model, mode, label_state)
    if not np.all(np.isfinite(fwd.logits)):
        bad = int(np.nonzero(~np.isfinite(fwd.logits))[0][0])
        anchor = None if fwd.match is None else int(fwd.match.anchors[bad])
        raise FloatingPointError(f"document {doc.id!r}: non-finite score for label "
                                 f"{model.vocab.labels[bad].id!r} at position {anchor}")
    loss = bce_with_logits(fwd.logits, y)
    grad_logit = (sigmoid(fwd.logits) - y) / len(y)

    emb_rows: list[np.ndarray] = []
    emb_grads: list[np.ndarray] = []

    if mode is not Mode.BASE:
        rows, grads = _interaction_backward(model, fwd.match, np.where(fwd.to_inter, grad_logit, 0.0),
                                            fwd.to_inter, len(tokens), label_state)
        emb_rows.append(rows)
        emb_grads.append(grads)

    base_rows = np.zeros(0, dtype=np.int64)
    w_grads = np.zeros((0, dim))
    b_grads = np.zeros(0)
    if mode is not Mode.INTERACTION:
        base_rows = np.nonzero(~fwd.to_inter)[0]
        g = grad_logit[base_rows]
        w_grads = np.outer(g, fwd.rep)
        b_grads = g
        if not config.freeze_embeddings_for_base and fwd.rep_rows.size and base_rows.size:
            d_rep = model.weights.weights[base_rows].T @ g
            emb_rows.append(fwd.rep_rows)
            emb_grads.append(np.tile(d_rep / fwd.rep_rows.size, (fwd.rep_rows.size, 1)))

    rows, grads = _reduce(emb_rows, emb_grads, dim)
    bundle = GradientBundle(rows, grads, base_rows.astype(np.int64), w_grads, b_grads)
    if not (np.all(np.isfinite(bundle.emb_grads)) and np.all(np.isfinite(bundle.weight_grads))):
        raise FloatingPointError(f"document {doc.id!r}: non-finite gradient")
    return loss, bundle


def _interaction_backward(model, match, g_inter, routed, n_doc, label_state):
    dim = model.table.dim
    empty = (np.zeros(0, dtype=np.int64), np.zeros((0, dim)))
    if n_doc == 0 or not routed.any():
        return empty
    scorer = model.scorer
    label_rows, label_units, label_norms = label_state or scorer._label_units(model.table)
    G = np.zeros_like(match.sim)
    for length, members, tok in scorer.groups:
        sel = routed[members]
        if not sel.any():
            continue
        gv = g_inter[members][sel] / length
        starts = match.anchors[members][sel]
        toks = tok[sel]
        for m in range(length):
            cols = starts + m
            inside = cols < n_doc
            np.add.at(G, (toks[inside, m], cols[inside]), gv[inside])
    G *= match.grad_mask
    u_idx = np.nonzero(G.any(axis=1))[0]
    t_idx = np.nonzero(G.any(axis=0))[0]
    if u_idx.size == 0:
        return empty
    Gs = G[np.ix_(u_idx, t_idx)]
    lu, du = label_units[u_idx], match.doc_units[t_idx]
    d_lu = Gs @ du
    d_du = Gs.T @ lu
    # through the normalization a / |a|: drop the radial component, scale by 1 / |a|
    d_l = (d_lu - np.sum(d_lu * lu, axis=1, keepdims=True) * lu) / label_norms[u_idx, None]
    d_d = (d_du - np.sum(d_du * du, axis=1, keepdims=True) * du) / match.doc_norms[t_idx, None]
    rows = np.concatenate([label_rows[u_idx], match.doc_rows[t_idx]])
    return rows, np.vstack([d_l, d_d])


class DegenerateInstance(ValueError):
    """The loss is not differentiable here: a max-pool or max-combination is (nearly) tied."""


def check_nondegenerate(doc: Document, model: CombinedModel, config: TrainConfig, margin: float = 1e-3) -> None:
    tokens = doc.tokens[:config.max_doc_len]
    fwd = _forward(tokens, model, config.mode)
    if fwd.match is not None and len(tokens) > 1:
        for length, members, tok in model.scorer.groups:
            means = model.scorer._group_means(fwd.match.sim, length, tok, len(tokens))
            top2 = np.sort(means, axis=1)[:, -2:]
            if np.any(top2[:, 1] - top2[:, 0] < margin):
                raise DegenerateInstance("max-pooling tie within margin")
    if config.mode is Mode.MAX and np.any(np.abs(fwd.match.logits - fwd.base) < margin):
        raise DegenerateInstance("max-combination tie within margin")


def grad_check(model: CombinedModel, doc: Document, gold, config: TrainConfig | None = None,
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every parameter present in the analytic :class:`GradientBundle` is
    perturbed in turn. Raises :class:`DegenerateInstance` near ties.
    """
    config = config or TrainConfig(mode=model.mode, policy=model.policy)
    check_nondegenerate(doc, model, config)
    _, bundle = backward(doc, gold, model, config)

    def numeric(array, index):
        saved = array[index]
        array[index] = saved + eps
        up = loss_value(doc, gold, model, config)
        array[index] = saved - eps
        down = loss_value(doc, gold, model, config)
        array[index] = saved
        return (up - down) / (2 * eps)

    worst = 0.0

    def compare(a, n):
        nonlocal worst
        worst = max(worst, abs(a - n) / max(abs(a), abs(n), 1e-8))

    for row, grad in zip(bundle.emb_rows, bundle.emb_grads):
        for c in range(model.table.dim):
            compare(grad[c], numeric(model.table.matrix, (row, c)))
    for row, wg, bg in zip(bundle.base_rows, bundle.weight_grads, bundle.bias_grads):
        for c in range(model.table.dim):
            compare(wg[c], numeric(model.weights.weights, (row, c)))
        compare(bg, numeric(model.weights.bias, row))
    return worst


@dataclass
class AdamState:
    emb_m: np.ndarray
    emb_v: np.ndarray
    w_m: np.ndarray
    w_v: np.ndarray
    b_m: np.ndarray
    b_v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, model: CombinedModel) -> AdamState:
        e, w = model.table.matrix, model.weights.weights
        return cls(np.zeros_like(e), np.zeros_like(e), np.zeros_like(w), np.zeros_like(w),
                   np.zeros(len(model.weights)), np.zeros(len(model.weights)))


def _adam_rows(param, m, v, rows, grad, config, t):
    b1, b2 = config.adam_beta1, config.adam_beta2
    m[rows] = b1 * m[rows] + (1.0 - b1) * grad
    v[rows] = b2 * v[rows] + (1.0 - b2) * grad * grad
    m_hat = m[rows] / (1.0 - b1 ** t)
    v_hat = v[rows] / (1.0 - b2 ** t)
    param[rows] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)


def adam_step(model: CombinedModel, grads: GradientBundle, state: AdamState, config: TrainConfig) -> AdamState:
    """Lazy sparse Adam: only rows in ``grads`` are updated; other moments are left as-is.

    Updates ``model`` in place and returns ``state`` (also updated in place).
    """
    state.t += 1
    if grads.emb_rows.size:
        _adam_rows(model.table.matrix, state.emb_m, state.emb_v, grads.emb_rows, grads.emb_grads, config, state.t)
    if grads.base_rows.size:
        _adam_rows(model.weights.weights, state.w_m, state.w_v, grads.base_rows, grads.weight_grads, config, state.t)
        _adam_rows(model.weights.bias, state.b_m, state.b_v, grads.base_rows, grads.bias_grads, config, state.t)
    return state


def score_matrix(model: CombinedModel, docs: Sequence[Document], mode: Mode | None = None,
                 jobs: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """(scores, anchors) for every document x label, label columns in vocabulary order."""
    def one(doc):
        return model.scores(doc, mode)

    if jobs > 1 and len(docs) > 1:
        model.scorer  # build once before threads share it
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, docs))
    else:
        results = [one(doc) for doc in docs]
    n = len(model.vocab)
    scores = np.array([r[0] for r in results]).reshape(len(docs), n)
    anchors = np.array([r[1] for r in results], dtype=np.int64).reshape(len(docs), n)
    return scores, anchors


@dataclass
class TrainResult:
    model: CombinedModel
    threshold: float
    best_epoch: int
    dev_macro_f1: float = 0.0
    log: list[dict] = field(default_factory=list)


def train(train_set: Dataset, dev_set: Dataset, vocab: LabelVocabulary, table: EmbeddingTable,
          config: TrainConfig, weights: BaselineWeights | None = None, jobs: int = 1,
          on_epoch=None) -> TrainResult:
    """Seeded mini-batch Adam over the full label set; keeps the epoch with best dev MacroF1.

    The input ``table`` is not modified.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if len(dev_set) == 0:
        raise ValueError("dev set is empty; it is needed for threshold selection")
    model = CombinedModel(table.copy(), weights.copy() if weights else BaselineWeights.zeros(len(vocab), table.dim),
                          vocab, config.policy, config.mode)
    state = AdamState.zeros(model)
    rng = np.random.default_rng(config.seed)
    docs = train_set.documents
    dev_gold = gold_matrix(dev_set, vocab)
    best: TrainResult | None = None
    history: list[dict] = []
    pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = rng.permutation(len(docs))
            total = 0.0
            for start in range(0, len(docs), config.batch_size):
                batch = [docs[i] for i in order[start:start + config.batch_size]]
                label_state = model.scorer._label_units(model.table) if config.mode is not Mode.BASE else None

                def step(doc):
                    return backward(doc, doc.gold_labels, model, config, label_state)

                results = list(pool.map(step, batch)) if pool else [step(doc) for doc in batch]
                total += sum(loss for loss, _ in results)
                adam_step(model, GradientBundle.mean([g for _, g in results], model.table.dim), state, config)

            dev_scores, _ = score_matrix(model, dev_set.documents, jobs=jobs)
            threshold, dev_macro_f1 = select_threshold_dense(dev_scores, dev_gold)
            _, _, _, dev_micro_f1 = metrics_from_counts(*confusion(dev_scores >= threshold, dev_gold))
            record = {
                "epoch": epoch,
                "train_loss": total / len(docs),
                "dev_macro_f1": dev_macro_f1,
                "dev_micro_f1": dev_micro_f1,
                "threshold": threshold,
                "wall_time_s": round(time.perf_counter() - started, 3),
            }
            history.append(record)
            log.info("epoch %d loss %.5f dev macroF1 %.4f microF1 %.4f threshold %.6f",
                     epoch, record["train_loss"], dev_macro_f1, dev_micro_f1, threshold)
            if on_epoch is not None:
                on_epoch(record)
            if best is None or dev_macro_f1 > best.dev_macro_f1:
                snapshot = CombinedModel(model.table.copy(), model.weights.copy(), vocab, config.policy, config.mode)
                best = TrainResult(snapshot, threshold, epoch, dev_macro_f1)
    finally:
        if pool:
            pool.shutdown()
    best.log = history
    return best

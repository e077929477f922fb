"""Deterministic long-tail multi-label corpora with known embedding structure.

Each label has a 1-3 token name. Documents are filler text with one mention
per gold label, either verbatim or *implicit*: every name token swapped for
one of its synonyms, whose embedding sits at a chosen cosine from the
original. Label frequencies follow a Zipf law, and a fraction of the rarer
labels never appears in training (zero-shot labels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset, Document, Label, LabelVocabulary, save_dataset, save_label_vocabulary
from .embeddings import EmbeddingTable, save_embeddings

MAX_LABELS_PER_DOC = 4


@dataclass
class SynthConfig:
    n_labels: int = 200
    zipf_exponent: float = 1.2
    n_train: int = 5000
    n_dev: int = 500
    n_test: int = 500
    dim: int = 100
    seed: int = 13
    synonym_noise: float = 0.15
    implicit_fraction: float = 0.5
    zero_shot_fraction: float = 0.05
    doc_len: int = 20
    labels_per_doc: float = 1.5
    n_filler: int = 2000
    synonyms_per_token: int = 2

    def __post_init__(self):
        for name in ("synonym_noise", "implicit_fraction", "zero_shot_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        for name in ("n_labels", "dim", "doc_len", "n_filler", "synonyms_per_token"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if min(self.n_train, self.n_dev, self.n_test) < 0:
            raise ValueError("document counts must be non-negative")
        if self.labels_per_doc < 1:
            raise ValueError("labels_per_doc must be >= 1")

    @property
    def n_zero_shot(self) -> int:
        return int(round(self.zero_shot_fraction * self.n_labels))


@dataclass
class SynthCorpus:
    train: Dataset
    dev: Dataset
    test: Dataset
    vocab: LabelVocabulary
    table: EmbeddingTable
    zero_shot: tuple[str, ...]
    zipf_rank: dict[str, int]

    def save(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "labels": out / "labels.tsv",
            "train": out / "train.jsonl",
            "dev": out / "dev.jsonl",
            "test": out / "test.jsonl",
            "embeddings": out / "embeddings.txt",
        }
        save_label_vocabulary(self.vocab, paths["labels"])
        for split in ("train", "dev", "test"):
            save_dataset(getattr(self, split), paths[split])
        save_embeddings(self.table, paths["embeddings"])
        return paths


def zipf_probabilities(n: int, exponent: float) -> np.ndarray:
    weights = np.arange(1, n + 1, dtype=np.float64) ** -exponent
    return weights / weights.sum()


def _synonym(vec: np.ndarray, cos: float, rng: np.random.Generator) -> np.ndarray:
    """A vector of the same norm at exactly cosine ``cos`` from ``vec``."""
    if cos >= 1.0:
        return vec.copy()
    unit = vec / np.linalg.norm(vec)
    ortho = rng.standard_normal(vec.shape)
    ortho -= ortho.dot(unit) * unit
    ortho /= np.linalg.norm(ortho)
    return np.linalg.norm(vec) * (cos * unit + math.sqrt(1.0 - cos * cos) * ortho)


def generate(config: SynthConfig) -> SynthCorpus:
    cfg = config
    n_zero = cfg.n_zero_shot
    if n_zero >= cfg.n_labels:
        raise ValueError("zero_shot_fraction leaves no label to train on")
    if n_zero and cfg.n_dev + cfg.n_test == 0:
        raise ValueError("zero-shot labels need a non-empty dev or test split")
    if cfg.n_train == 0:
        raise ValueError("n_train must be positive")
    rng = np.random.default_rng(cfg.seed)

    lengths = rng.integers(1, 4, size=cfg.n_labels)
    names: list[list[str]] = []
    k = 0
    for length in lengths:
        names.append([f"t{k + j:04d}" for j in range(length)])
        k += length
    label_ids = [f"L{i:03d}" for i in range(cfg.n_labels)]
    vocab = LabelVocabulary(tuple(Label(i, tuple(n)) for i, n in zip(label_ids, names)))

    # embeddings: name tokens, their synonyms, then filler
    dim = cfg.dim
    tokens: list[str] = []
    vectors: list[np.ndarray] = []
    synonyms: dict[str, list[str]] = {}
    for name in names:
        for tok in name:
            vec = rng.standard_normal(dim)
            tokens.append(tok)
            vectors.append(vec)
            synonyms[tok] = []
            for s in range(cfg.synonyms_per_token):
                cos = 1.0 - cfg.synonym_noise * rng.uniform()
                syn = f"{tok}s{s}"
                synonyms[tok].append(syn)
                tokens.append(syn)
                vectors.append(_synonym(vec, cos, rng))
    filler = [f"w{i:04d}" for i in range(cfg.n_filler)]
    tokens.extend(filler)
    vectors.extend(rng.standard_normal((cfg.n_filler, dim)))
    table = EmbeddingTable({t: i for i, t in enumerate(tokens)}, np.array(vectors))

    # Zipf ranks over a seeded permutation; zero-shot labels come from the rarer half
    order = rng.permutation(cfg.n_labels)
    probs = zipf_probabilities(cfg.n_labels, cfg.zipf_exponent)
    tail = order[min(cfg.n_labels // 2, cfg.n_labels - n_zero):]
    zero_shot = np.sort(rng.choice(tail, size=n_zero, replace=False)) if n_zero else np.zeros(0, dtype=int)
    p_all = np.zeros(cfg.n_labels)
    p_all[order] = probs
    p_train = p_all.copy()
    p_train[zero_shot] = 0.0
    p_train /= p_train.sum()

    def draw(p: np.ndarray) -> set[int]:
        available = int(np.count_nonzero(p))
        k = min(1 + rng.poisson(cfg.labels_per_doc - 1.0), MAX_LABELS_PER_DOC, available)
        return set(rng.choice(cfg.n_labels, size=k, replace=False, p=p).tolist())

    gold = {
        "train": [draw(p_train) for _ in range(cfg.n_train)],
        "dev": [draw(p_all) for _ in range(cfg.n_dev)],
        "test": [draw(p_all) for _ in range(cfg.n_test)],
    }
    train_seen = set().union(*gold["train"])
    for label in range(cfg.n_labels):
        if label not in train_seen and label not in set(zero_shot.tolist()):
            gold["train"][rng.integers(cfg.n_train)].add(label)
    for label in zero_shot.tolist():
        for split in ("dev", "test"):
            docs = gold[split]
            if docs and not any(label in g for g in docs):
                docs[rng.integers(len(docs))].add(label)

    def render(labels: set[int]) -> list[str]:
        mentions = []
        for label in sorted(labels):
            if rng.uniform() < cfg.implicit_fraction:
                mentions.append([synonyms[t][rng.integers(len(synonyms[t]))] for t in names[label]])
            else:
                mentions.append(list(names[label]))
        rng.shuffle(mentions)
        n_fill = max(int(rng.integers(cfg.doc_len // 2, cfg.doc_len * 3 // 2 + 1)), len(mentions) + 1)
        words = [filler[i] for i in rng.integers(cfg.n_filler, size=n_fill)]
        # distinct gaps keep at least one filler token between mentions
        gaps = np.sort(rng.choice(n_fill + 1, size=len(mentions), replace=False))
        out: list[str] = []
        prev = 0
        for gap, mention in zip(gaps, mentions):
            out.extend(words[prev:gap])
            out.extend(mention)
            prev = gap
        out.extend(words[prev:])
        return out

    splits = {}
    for split, sets in gold.items():
        docs = tuple(Document(f"{split}-{i:05d}", tuple(render(s)), frozenset(label_ids[j] for j in s))
                     for i, s in enumerate(sets))
        splits[split] = Dataset(docs, split)

    zipf_rank = {label_ids[label]: rank + 1 for rank, label in enumerate(order)}
    return SynthCorpus(splits["train"], splits["dev"], splits["test"], vocab, table,
                       tuple(label_ids[j] for j in zero_shot.tolist()), zipf_rank)

import sys

import numpy as np
import pytest

from labelmatch.baseline import BaselineWeights, CombinedModel, Mode
from labelmatch.corpus import Document, Label, LabelVocabulary
from labelmatch.embeddings import EmbeddingTable, OovPolicy


def make_table(vectors: dict) -> EmbeddingTable:
    tokens = list(vectors)
    return EmbeddingTable({t: i for i, t in enumerate(tokens)}, np.array([vectors[t] for t in tokens], dtype=float))


def random_instance(rng, mode=Mode.MAX, dim=None, n_labels=None, oov=True, policy=OovPolicy.BINARY):
    """Small random model + document for gradient checks (dim 2-8, |L| <= 4, |T| <= 12)."""
    dim = dim or int(rng.integers(2, 9))
    pool = [f"v{i}" for i in range(10)]
    vectors = {t: rng.standard_normal(dim) for t in pool}
    table = make_table(vectors)
    words = pool + (["oova", "oovb"] if oov else [])
    n_labels = n_labels or int(rng.integers(1, 5))
    labels = []
    for i in range(n_labels):
        length = int(rng.integers(1, 5))
        labels.append(Label(f"lab{i}", tuple(rng.choice(words, size=length))))
    vocab = LabelVocabulary(tuple(labels))
    n_doc = int(rng.integers(1, 13))
    doc = Document("d", tuple(rng.choice(words, size=n_doc)))
    gold = {lab.id for lab in labels if rng.uniform() < 0.5}
    weights = BaselineWeights(rng.standard_normal((n_labels, dim)) * 0.5, rng.standard_normal(n_labels) * 0.5)
    model = CombinedModel(table, weights, vocab, policy, mode)
    return model, doc, gold


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def ab_table():
    return make_table({"a": [1.0, 0.0], "b": [0.0, 1.0]})


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

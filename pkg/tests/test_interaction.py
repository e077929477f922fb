import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from labelmatch.corpus import Document, Label, LabelVocabulary
from labelmatch.embeddings import OovPolicy
from labelmatch.interaction import (InteractionScorer, add_label, label_score, position_scores, score_all_labels,
                                    sigmoid, similarity_matrix, window_means)

from conftest import make_table
from oracles import naive_label_score, naive_position_scores, naive_similarity

SIGMA_1 = 0.7310585786300049


def test_similarity_matrix_orthogonal(ab_table):
    S = similarity_matrix(Label("x", ("a",)), Document("d", ("a", "b")), ab_table)
    np.testing.assert_array_equal(S, [[1.0, 0.0]])
    S = similarity_matrix(Label("x", ("a", "b")), Document("d", ("a", "b")), ab_table)
    np.testing.assert_array_equal(S, [[1.0, 0.0], [0.0, 1.0]])


def test_similarity_matrix_empty_document(ab_table):
    assert similarity_matrix(Label("x", ("a", "b")), Document("d", ()), ab_table).shape == (2, 0)


def test_similarity_matrix_matches_double_loop(rng):
    vectors = {t: rng.standard_normal(5) for t in "abcdefg"}
    table = make_table(vectors)
    label = Label("x", tuple(rng.choice(list("abcdefg"), 3)))
    doc = Document("d", tuple(rng.choice(list("abcdefgz"), 5)))
    expected = naive_similarity(label.name_tokens, doc.tokens, {k: list(v) for k, v in vectors.items()})
    np.testing.assert_allclose(similarity_matrix(label, doc, table), expected, atol=1e-14)


@pytest.mark.parametrize("S, expected", [
    ([[0.5, -0.2]], [0.62245933, 0.45016600]),
    ([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]], [0.73105858, 0.73105858, 0.62245933]),
    ([[0.2, 0.4, 0.6], [0.1, 0.3, 0.5]], [0.56217650, 0.61063923, 0.57444252]),
])
def test_position_scores_examples(S, expected):
    np.testing.assert_allclose(position_scores(S), expected, atol=5e-9)


def test_window_means_hand_computed():
    np.testing.assert_allclose(window_means([[0.2, 0.4, 0.6], [0.1, 0.3, 0.5]]), [0.25, 0.45, 0.3], atol=1e-15)


def test_position_scores_empty_document():
    assert position_scores(np.zeros((3, 0))).shape == (0,)


def test_position_scores_random_oracle(rng):
    for _ in range(1000):
        S = rng.uniform(-1, 1, size=(rng.integers(1, 7), rng.integers(1, 21)))
        np.testing.assert_allclose(position_scores(S), naive_position_scores(S.tolist()), atol=1e-12, rtol=0)


def test_label_score_examples():
    assert label_score([0.5622, 0.6106, 0.5744]) == (0.6106, 1)
    assert label_score([0.5, 0.5, 0.5]) == (0.5, 0)
    assert label_score([]) == (0.5, None)


def test_sigmoid_stable_for_large_inputs():
    assert sigmoid(1000.0) == 1.0 and sigmoid(-1000.0) == 0.0
    np.testing.assert_allclose(sigmoid(np.array([-5.0, 0.0, 5.0])), [1 / (1 + math.e ** 5), 0.5, 1 / (1 + math.e ** -5)])


matrices = st.integers(1, 6).flatmap(lambda rows: st.integers(1, 20).flatmap(
    lambda cols: arrays(np.float64, (rows, cols), elements=st.floats(-1, 1))))


@given(matrices)
def test_scores_strictly_inside_unit_interval(S):
    P = position_scores(S)
    assert np.all((P > 0) & (P < 1))


@given(matrices)
def test_argmax_unaffected_by_sigmoid(S):
    means = window_means(S)
    top = means.max()
    # distinct maxima only; sigmoid can merge means closer than an ulp of its output
    if np.sum(means >= top - 1e-12) == 1:
        assert label_score(position_scores(S))[1] == int(np.argmax(means))


@pytest.mark.parametrize("length", range(1, 7))
def test_length_normalization_all_ones(length):
    for n_doc in range(length, length + 4):
        score, anchor = label_score(position_scores(np.ones((length, n_doc))))
        assert score == SIGMA_1 and anchor == 0


@given(matrices, st.data())
def test_monotone_at_anchor(S, data):
    score, anchor = label_score(position_scores(S))
    L, T = S.shape
    cells = [(m, anchor + m) for m in range(L) if anchor + m < T]
    m, k = data.draw(st.sampled_from(cells))
    bumped = S.copy()
    bumped[m, k] = min(1.0, S[m, k] + data.draw(st.floats(0, 1)))
    assert label_score(position_scores(bumped))[0] >= score


@settings(max_examples=200)
@given(matrices)
def test_no_matrix_beats_exact_match_ceiling(S):
    assert label_score(position_scores(S))[0] <= SIGMA_1


@pytest.fixture
def tool_setup(rng):
    words = ["select", "the", "brush", "tool", "open", "preset", "panel", "new", "document", "file"]
    table = make_table({w: rng.standard_normal(8) for w in words})
    vocab = LabelVocabulary((
        Label("brush_tool", ("brush", "tool")),
        Label("file_new", ("file", "new")),
        Label("preset_panel", ("brush", "preset", "panel")),
        Label("zoom", ("zoom",)),
    ))
    doc = Document("d", ("create", "a", "new", "document", "select", "the", "brush", "tool", "and", "open",
                         "the", "brush", "preset", "panel"))
    return table, vocab, doc


def test_score_all_labels_matches_reference_path(tool_setup):
    table, vocab, doc = tool_setup
    preds = score_all_labels(doc, vocab, table)
    assert [p.label_id for p in preds] == sorted([p.label_id for p in preds],
                                                 key=lambda i: (-next(p.score for p in preds if p.label_id == i), i))
    for p in preds:
        ref = label_score(position_scores(similarity_matrix(vocab[p.label_id], doc, table)))
        assert p.score == pytest.approx(ref[0], abs=1e-12)
        assert p.anchor == ref[1]


def test_exact_contiguous_match_is_sigma_one(tool_setup):
    table, vocab, doc = tool_setup
    scores = {p.label_id: p for p in score_all_labels(doc, vocab, table)}
    assert scores["brush_tool"].score == pytest.approx(SIGMA_1, abs=1e-9)
    assert scores["brush_tool"].anchor == 6
    assert scores["preset_panel"].score == pytest.approx(SIGMA_1, abs=1e-9)
    assert max(p.score for p in scores.values()) <= SIGMA_1


def test_singleton_vocabulary_is_composition(tool_setup):
    table, _, doc = tool_setup
    label = Label("only", ("brush", "tool"))
    (pred,) = score_all_labels(doc, LabelVocabulary((label,)), table)
    assert (pred.score, pred.anchor) == label_score(position_scores(similarity_matrix(label, doc, table)))


def test_empty_document_scores_half(tool_setup):
    table, vocab, _ = tool_setup
    preds = score_all_labels(Document("e", ()), vocab, table)
    assert all(p.score == 0.5 and p.anchor is None for p in preds)


@pytest.mark.parametrize("policy", list(OovPolicy))
def test_oov_tokens_vectorized_matches_oracle(rng, policy):
    vectors = {t: rng.standard_normal(4) for t in "abcd"}
    table = make_table(vectors)
    words = list("abcdxyz")
    labels = tuple(Label(f"l{i}", tuple(rng.choice(words, rng.integers(1, 4)))) for i in range(12))
    vocab = LabelVocabulary(labels)
    plain = {k: list(v) for k, v in vectors.items()}
    for _ in range(20):
        doc = Document("d", tuple(rng.choice(words, rng.integers(0, 9))))
        for p in score_all_labels(doc, vocab, table, policy):
            score, anchor = naive_label_score(vocab[p.label_id].name_tokens, doc.tokens, plain,
                                              binary=policy is OovPolicy.BINARY)
            assert p.score == pytest.approx(score, abs=1e-12)
            assert p.anchor == anchor


def test_fifty_labels_parallel_equals_sequential(rng):
    words = [f"w{i}" for i in range(40)]
    table = make_table({w: rng.standard_normal(6) for w in words})
    vocab = LabelVocabulary(tuple(Label(f"l{i:02d}", tuple(rng.choice(words, rng.integers(1, 4))))
                                  for i in range(50)))
    doc = Document("d", tuple(rng.choice(words, 30)))
    seq = {lab.id: label_score(position_scores(similarity_matrix(lab, doc, table))) for lab in vocab}
    batch = score_all_labels(doc, vocab, table)
    for p in batch:
        assert p.score == pytest.approx(seq[p.label_id][0], abs=1e-12)
        assert p.anchor == seq[p.label_id][1]
    scorer = InteractionScorer(vocab)
    docs = [Document(f"d{i}", tuple(rng.choice(words, rng.integers(0, 25)))) for i in range(16)]
    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(lambda d: scorer.score(d, table), docs))
    assert parallel == [scorer.score(d, table) for d in docs]


def test_add_label_keeps_existing_scores(tool_setup):
    table, vocab, doc = tool_setup
    before = {p.label_id: p for p in score_all_labels(doc, vocab, table)}
    bigger = add_label(vocab, Label("open_doc", ("open", "document")))
    after = {p.label_id: p for p in score_all_labels(doc, bigger, table)}
    assert "open_doc" in after
    for label_id, pred in before.items():
        assert after[label_id] == pred
    with pytest.raises(ValueError):
        add_label(bigger, Label("zoom", ("zoom",)))


def test_unseen_label_tokens_match_by_surface(tool_setup):
    table, vocab, _ = tool_setup
    bigger = add_label(vocab, Label("lasso", ("lasso", "tool")))
    doc = Document("d", ("grab", "the", "lasso", "tool"))
    preds = {p.label_id: p for p in score_all_labels(doc, bigger, table)}
    # "lasso" is OOV and matches itself exactly; "tool" is in-vocab, cosine 1 with itself
    assert preds["lasso"].score == SIGMA_1 and preds["lasso"].anchor == 2

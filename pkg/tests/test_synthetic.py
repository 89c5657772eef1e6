import numpy as np

from scriptsev.corpus import SeverityLevel
from scriptsev.embedding import tokenize
from scriptsev.synthetic import (
    MARKER_TOKEN,
    make_corpus,
    make_document,
    make_popularity,
    severity_for_count,
)

L = SeverityLevel


def marker_count(doc):
    return sum(tok == MARKER_TOKEN for utt in doc.utterances for tok in tokenize(utt.text))


def test_staircase_mapping():
    assert severity_for_count(0) is L.NONE
    assert severity_for_count(1) is L.MILD
    assert severity_for_count(2) is L.MILD
    assert severity_for_count(3) is L.MODERATE
    assert severity_for_count(5) is L.MODERATE
    assert severity_for_count(6) is L.SEVERE
    assert severity_for_count(40) is L.SEVERE


def test_make_document_plants_exact_count():
    rng = np.random.default_rng(0)
    for count in (0, 1, 4, 9):
        doc = make_document("m1", "T", count, rng)
        assert marker_count(doc) == count
        assert 40 <= len(doc.utterances) <= 80


def test_corpus_labels_follow_staircase():
    ds = make_corpus(n_docs=80, seed=3)
    assert len(ds) == 80
    for inst in ds:
        assert inst.label is severity_for_count(marker_count(inst.document))
        assert inst.votes >= 5
    counts = {lv: sum(1 for i in ds if i.label == lv) for lv in L}
    assert all(c == 20 for c in counts.values())  # balanced by construction


def test_corpus_is_deterministic():
    a = make_corpus(n_docs=20, seed=5)
    b = make_corpus(n_docs=20, seed=5)
    for x, y in zip(a, b):
        assert x.movie_id == y.movie_id and x.label == y.label
        assert [u.text for u in x.document.utterances] == [
            u.text for u in y.document.utterances
        ]


def test_popularity_covers_corpus():
    ds = make_corpus(n_docs=40, seed=1)
    popularity = make_popularity(ds, seed=2)
    assert set(popularity) == {i.movie_id for i in ds}
    assert any(v >= 200_000 for v in popularity.values())
    assert all(v >= 0 for v in popularity.values())

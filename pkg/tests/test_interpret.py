import json
import logging

import numpy as np
import pytest

from scriptsev.corpus import Aspect, AspectDataset, SeverityLevel
from scriptsev.errors import DataError, UnsupportedOperationError
from scriptsev.interpret import (
    ComparatorSet,
    comparator_report,
    outcome_score,
    read_popularity,
    select_comparators,
    write_comparator_report,
)
from scriptsev.siamese import RankLabel

from conftest import make_instance
from test_siamese import tiny_model

L = SeverityLevel


def build_pool(per_level=8, votes_step=10):
    instances = []
    popularity = {}
    idx = 0
    for lv in L:
        for j in range(per_level):
            movie_id = f"m{idx:03d}"
            instances.append(
                make_instance(movie_id, lv, votes=votes_step * (per_level - j))
            )
            popularity[movie_id] = 500_000 if j < 6 else 50_000
            idx += 1
    return AspectDataset(aspect=Aspect.PROFANITY, instances=instances), popularity


def test_select_comparators_takes_top_five_per_level():
    dataset, popularity = build_pool()
    comparators = select_comparators(dataset, popularity)
    assert comparators.total() == 20
    for lv in L:
        members = comparators.levels[lv]
        assert len(members) == 5
        votes = [m.votes for m in members]
        assert votes == sorted(votes, reverse=True)
        assert all(popularity[m.movie_id] >= 200_000 for m in members)


def test_select_comparators_threshold_above_everything(caplog):
    dataset, popularity = build_pool()
    with caplog.at_level(logging.WARNING):
        comparators = select_comparators(dataset, popularity, min_popularity=10**9)
    assert comparators.total() == 0
    assert sum("no eligible" in rec.message for rec in caplog.records) == 4


def test_select_comparators_tie_break_by_movie_id():
    instances = [
        make_instance("zzz", L.MILD, votes=50),
        make_instance("aaa", L.MILD, votes=50),
        make_instance("mmm", L.MILD, votes=50),
    ]
    dataset = AspectDataset(aspect=Aspect.PROFANITY, instances=instances)
    popularity = {i.movie_id: 10**6 for i in instances}
    comparators = select_comparators(dataset, popularity, per_level=2)
    assert [m.movie_id for m in comparators.levels[L.MILD]] == ["aaa", "mmm"]


def test_select_comparators_stable_under_reordering():
    dataset, popularity = build_pool()
    reordered = AspectDataset(
        aspect=dataset.aspect, instances=list(reversed(dataset.instances))
    )
    a = select_comparators(dataset, popularity)
    b = select_comparators(reordered, popularity)
    for lv in L:
        assert [m.movie_id for m in a.levels[lv]] == [m.movie_id for m in b.levels[lv]]


def test_select_comparators_exclude_and_missing_popularity():
    dataset, popularity = build_pool()
    top = select_comparators(dataset, popularity).levels[L.NONE][0]
    without = select_comparators(dataset, popularity, exclude={top.movie_id})
    assert top.movie_id not in [m.movie_id for m in without.levels[L.NONE]]
    nothing = select_comparators(dataset, {})  # missing popularity counts as 0
    assert nothing.total() == 0


def test_outcome_score_mapping():
    assert outcome_score(RankLabel.HIGHER) == 1
    assert outcome_score(RankLabel.EQUAL) == 0
    assert outcome_score(RankLabel.LOWER) == -1


def test_comparator_report_structure(tmp_path):
    dataset, popularity = build_pool(per_level=3)
    comparators = select_comparators(dataset, popularity, per_level=3)
    model = tiny_model(multitask=True)
    movie = make_instance("test01", L.SEVERE).document
    report = comparator_report(model, movie, comparators, gold=L.SEVERE)
    for lv in L:
        assert len(report.outcomes[lv]) == len(comparators.levels[lv])
    assert report.predicted in list(L)
    assert report.gold is L.SEVERE
    text = report.to_text()
    assert "prediction:" in text

    write_comparator_report(report, tmp_path / "r.txt", tmp_path / "r.json", {"pool": "train+dev"})
    payload = json.loads((tmp_path / "r.json").read_text())
    assert payload["movie_id"] == "test01" and payload["pool"] == "train+dev"
    assert set(payload["outcomes"]) == {lv.label for lv in L}


def test_comparator_report_self_comparison_is_equal():
    model = tiny_model(multitask=True)
    inst = make_instance("self01", L.MILD)
    comparators = ComparatorSet(
        aspect=Aspect.PROFANITY, levels={lv: [] for lv in L} | {L.MILD: [inst]}
    )
    report = comparator_report(model, inst.document, comparators)
    (movie_id, outcome), = report.outcomes[L.MILD]
    assert movie_id == "self01"
    assert outcome is RankLabel.EQUAL


def test_comparator_report_empty_level_has_zero_outcomes():
    model = tiny_model(multitask=True)
    comparators = ComparatorSet(aspect=Aspect.PROFANITY, levels={lv: [] for lv in L})
    report = comparator_report(model, make_instance("x", L.MILD).document, comparators)
    assert all(report.outcomes[lv] == [] for lv in L)


def test_comparator_report_requires_multitask_and_matching_aspect():
    cls_model = tiny_model(multitask=False)
    comparators = ComparatorSet(aspect=Aspect.PROFANITY, levels={lv: [] for lv in L})
    with pytest.raises(UnsupportedOperationError):
        comparator_report(cls_model, make_instance("x", L.MILD).document, comparators)
    model = tiny_model(multitask=True)
    wrong = ComparatorSet(aspect=Aspect.SEX, levels={lv: [] for lv in L})
    with pytest.raises(DataError):
        comparator_report(model, make_instance("x", L.MILD).document, wrong)


def test_monotone_sanity_on_planted_model(synth_model, synth_dataset):
    """Against None-level comparators, a severe movie should rank higher on
    average than against Severe-level comparators, for nearly all test movies."""
    from scriptsev.interpret import select_comparators
    from scriptsev.synthetic import make_popularity

    model, _ = synth_model
    pool = AspectDataset(
        aspect=synth_dataset.aspect,
        instances=synth_dataset.part("train") + synth_dataset.part("dev"),
    )
    popularity = make_popularity(synth_dataset, seed=77)
    comparators = select_comparators(pool, popularity)
    assert comparators.total() == 20

    candidates = [i for i in synth_dataset.part("test") if i.label > L.NONE]
    rng = np.random.default_rng(13)
    picks = rng.choice(len(candidates), size=50, replace=True)
    ok = 0
    for idx in picks:
        inst = candidates[int(idx)]
        report = comparator_report(model, inst.document, comparators, gold=inst.label)
        mean_none = np.mean([outcome_score(o) for _, o in report.outcomes[L.NONE]])
        mean_severe = np.mean([outcome_score(o) for _, o in report.outcomes[L.SEVERE]])
        ok += mean_none >= mean_severe
    assert ok >= 45, f"monotone ordering held for only {ok}/50 test movies"


def test_read_popularity(tmp_path):
    path = tmp_path / "pop.tsv"
    path.write_text("# header comment\nm1\t250000\nm2\t100\n")
    assert read_popularity(path) == {"m1": 250_000, "m2": 100}
    path.write_text("m1\tlots\n")
    with pytest.raises(DataError, match=":1"):
        read_popularity(path)
    path.write_text("m1\t-3\n")
    with pytest.raises(DataError, match="negative"):
        read_popularity(path)
    with pytest.raises(DataError, match="not found"):
        read_popularity(tmp_path / "missing.tsv")

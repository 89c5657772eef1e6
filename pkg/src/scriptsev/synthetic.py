"""Planted-signal synthetic corpora for desk-scale end-to-end verification.

Each generated script is filler dialogue with a known number of occurrences of
one marker token; the severity label is a deterministic staircase of that
count (0 -> None, 1-2 -> Mild, 3-5 -> Moderate, >= 6 -> Severe). A model that
learns to rate these scripts has, by construction, learned to read a severity
signal out of dialogue, which makes thresholds on macro F1 and pairwise
ranking accuracy meaningful without any external data.
"""

from __future__ import annotations

import numpy as np

from .corpus import (
    Aspect,
    AspectDataset,
    LabeledInstance,
    ScriptDocument,
    SeverityLevel,
    Utterance,
)

MARKER_TOKEN = "grawlix"

_FILLER_WORDS = (
    "morning coffee window river garden letter evening dinner road station "
    "paper music silence summer winter answer question brother sister doctor "
    "captain story father friend city house light shadow door train travel "
    "market bridge harbor mountain valley weather journey moment memory"
).split()

# Sampled count range per level. Each range sits strictly inside its staircase
# band, leaving a one-count gap at the 2/3 and 5/6 boundaries so labels stay a
# deterministic function of the count while the count classes stay separable.
_COUNT_RANGES = {
    SeverityLevel.NONE: (0, 0),
    SeverityLevel.MILD: (1, 2),
    SeverityLevel.MODERATE: (4, 5),
    SeverityLevel.SEVERE: (7, 10),
}


def severity_for_count(count: int) -> SeverityLevel:
    """Staircase mapping from marker-token count to severity level."""
    if count == 0:
        return SeverityLevel.NONE
    if count <= 2:
        return SeverityLevel.MILD
    if count <= 5:
        return SeverityLevel.MODERATE
    return SeverityLevel.SEVERE


def make_document(
    movie_id: str,
    title: str,
    marker_count: int,
    rng: np.random.Generator,
    n_utterances: tuple[int, int] = (40, 80),
    utterance_tokens: tuple[int, int] = (4, 10),
) -> ScriptDocument:
    """One synthetic script with exactly ``marker_count`` marker occurrences.

    Each marker is its own one-token utterance (an interjection line), so the
    token count equals the number of marked lines and each occurrence is a
    maximally salient dialogue unit.
    """
    n_utt = int(rng.integers(n_utterances[0], n_utterances[1] + 1))
    if marker_count > n_utt:
        raise ValueError(f"marker_count {marker_count} exceeds utterance count {n_utt}")
    marked = set(rng.choice(n_utt, size=marker_count, replace=False).tolist())
    utterances = []
    for i in range(n_utt):
        if i in marked:
            utterances.append(MARKER_TOKEN)
            continue
        n_tok = int(rng.integers(utterance_tokens[0], utterance_tokens[1] + 1))
        utterances.append(" ".join(str(w) for w in rng.choice(_FILLER_WORDS, size=n_tok)))
    return ScriptDocument(
        movie_id=movie_id,
        title=title,
        utterances=tuple(Utterance(text=t, index=i) for i, t in enumerate(utterances)),
    )


def make_corpus(
    n_docs: int = 600,
    seed: int = 0,
    aspect: Aspect = Aspect.PROFANITY,
    n_utterances: tuple[int, int] = (40, 80),
) -> AspectDataset:
    """Balanced planted-signal dataset of ``n_docs`` labeled scripts."""
    max_count = max(hi for _, hi in _COUNT_RANGES.values())
    if n_utterances[0] < max_count:
        raise ValueError(
            f"documents need at least {max_count} utterances to hold every marker count"
        )
    rng = np.random.default_rng(seed)
    instances = []
    for i in range(n_docs):
        level = SeverityLevel(i % 4)
        lo, hi = _COUNT_RANGES[level]
        count = int(rng.integers(lo, hi + 1))
        doc = make_document(
            movie_id=f"syn{i:04d}",
            title=f"Synthetic Movie {i:04d}",
            marker_count=count,
            rng=rng,
            n_utterances=n_utterances,
        )
        votes = int(rng.integers(5, 500))
        instances.append(
            LabeledInstance(document=doc, aspect=aspect, label=level, votes=votes)
        )
    return AspectDataset(aspect=aspect, instances=instances)


def make_popularity(
    dataset: AspectDataset, seed: int = 0, popular_fraction: float = 0.5
) -> dict[str, int]:
    """Synthetic rating counts; roughly ``popular_fraction`` clear 200k ratings."""
    rng = np.random.default_rng(seed)
    popularity = {}
    for inst in dataset.instances:
        if rng.random() < popular_fraction:
            popularity[inst.movie_id] = int(rng.integers(200_000, 2_000_000))
        else:
            popularity[inst.movie_id] = int(rng.integers(0, 200_000))
    return popularity

"""Comparator selection and pairwise-comparison interpretability reports.

A prediction is contextualized by ranking the test movie against well-known
reference movies (comparators) of every severity level: up to five per level,
chosen among movies popular enough to be widely recognizable and ordered by
how many severity votes back their label. The report renders one ``<``/``=``/
``>`` glyph per comparator, grouped by level.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

from .corpus import Aspect, AspectDataset, LabeledInstance, ScriptDocument, SeverityLevel
from .errors import DataError, UnsupportedOperationError
from .siamese import RankLabel, SiameseModel
from .utils import atomic_write_text

log = logging.getLogger(__name__)

COMPARATORS_PER_LEVEL = 5
DEFAULT_MIN_POPULARITY = 200_000

_GLYPH = {RankLabel.LOWER: "<", RankLabel.EQUAL: "=", RankLabel.HIGHER: ">"}


@dataclass
class ComparatorSet:
    """Per-severity-level reference instances for one aspect."""

    aspect: Aspect
    levels: dict[SeverityLevel, list[LabeledInstance]]

    def total(self) -> int:
        return sum(len(members) for members in self.levels.values())


def select_comparators(
    dataset: AspectDataset,
    popularity: dict[str, int],
    min_popularity: int = DEFAULT_MIN_POPULARITY,
    per_level: int = COMPARATORS_PER_LEVEL,
    exclude: frozenset[str] | set[str] = frozenset(),
) -> ComparatorSet:
    """Pick the top comparators per severity level.

    Eligible movies have popularity (rating count) >= ``min_popularity``;
    within each level they rank by descending severity-vote count with ties
    broken by ascending movie_id. Missing popularity entries count as 0. A
    level with no eligible movie stays empty and logs a warning.
    """
    levels: dict[SeverityLevel, list[LabeledInstance]] = {}
    for lv in SeverityLevel:
        eligible = [
            inst
            for inst in dataset.instances
            if inst.label == lv
            and inst.movie_id not in exclude
            and popularity.get(inst.movie_id, 0) >= min_popularity
        ]
        eligible.sort(key=lambda inst: (-inst.votes, inst.movie_id))
        chosen = eligible[:per_level]
        if not chosen:
            log.warning(
                "%s: no eligible %s-level comparator (popularity >= %d)",
                dataset.aspect.value,
                lv.label,
                min_popularity,
            )
        elif len(chosen) < per_level:
            log.warning(
                "%s: only %d of %d %s-level comparators available",
                dataset.aspect.value,
                len(chosen),
                per_level,
                lv.label,
            )
        levels[lv] = chosen
    return ComparatorSet(aspect=dataset.aspect, levels=levels)


@dataclass
class ComparatorReport:
    """Prediction for one movie plus its outcomes against every comparator.

    Each outcome is the test movie's severity relative to the comparator
    (HIGHER means the test movie is rated more severe).
    """

    movie_id: str
    title: str
    aspect: Aspect
    predicted: SeverityLevel
    probabilities: tuple[float, float, float, float]
    outcomes: dict[SeverityLevel, list[tuple[str, RankLabel]]]
    gold: SeverityLevel | None = None

    def to_json_dict(self) -> dict:
        return {
            "movie_id": self.movie_id,
            "title": self.title,
            "aspect": self.aspect.value,
            "gold": self.gold.label if self.gold is not None else None,
            "predicted": self.predicted.label,
            "probabilities": {
                lv.label: self.probabilities[lv.value] for lv in SeverityLevel
            },
            "outcomes": {
                lv.label: [
                    {"movie_id": mid, "outcome": outcome.name}
                    for mid, outcome in self.outcomes.get(lv, [])
                ]
                for lv in SeverityLevel
            },
        }

    def to_text(self) -> str:
        gold = self.gold.label if self.gold is not None else "?"
        lines = [
            f"movie:      {self.title} ({self.movie_id})",
            f"aspect:     {self.aspect.value}",
            f"gold:       {gold}",
            f"prediction: {self.predicted.label}",
            "comparisons (test movie vs comparator: < lower, = equal, > higher):",
        ]
        for lv in SeverityLevel:
            entries = self.outcomes.get(lv, [])
            glyphs = " ".join(_GLYPH[outcome] for _, outcome in entries) or "(none)"
            lines.append(f"  {lv.label:<9} {glyphs}")
            for mid, outcome in entries:
                lines.append(f"            {_GLYPH[outcome]} {mid}")
        return "\n".join(lines)


def comparator_report(
    model: SiameseModel,
    movie: ScriptDocument,
    comparators: ComparatorSet,
    gold: SeverityLevel | None = None,
) -> ComparatorReport:
    """Predict the movie's severity and rank it against every comparator."""
    if not model.multitask:
        raise UnsupportedOperationError(
            "comparator reports need a multitask-trained model"
        )
    if comparators.aspect != model.aspect:
        raise DataError(
            f"comparator aspect {comparators.aspect.value} != model aspect {model.aspect.value}"
        )
    predicted, probs = model.predict(movie)
    outcomes: dict[SeverityLevel, list[tuple[str, RankLabel]]] = {}
    for lv in SeverityLevel:
        row: list[tuple[str, RankLabel]] = []
        for comp in comparators.levels.get(lv, []):
            outcome, _ = model.compare(movie, comp.document)
            row.append((comp.movie_id, outcome))
        outcomes[lv] = row
    return ComparatorReport(
        movie_id=movie.movie_id,
        title=movie.title,
        aspect=model.aspect,
        predicted=predicted,
        probabilities=tuple(float(p) for p in probs),
        outcomes=outcomes,
        gold=gold,
    )


def outcome_score(outcome: RankLabel) -> int:
    """Numeric severity direction of an outcome: HIGHER=+1, EQUAL=0, LOWER=-1."""
    return {RankLabel.HIGHER: 1, RankLabel.EQUAL: 0, RankLabel.LOWER: -1}[outcome]


def write_comparator_report(
    report: ComparatorReport, text_path, json_path, meta: dict | None = None
) -> None:
    payload = report.to_json_dict()
    if meta:
        payload.update(meta)
    atomic_write_text(json_path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    text = report.to_text()
    if meta:
        header = "\n".join(f"# {k}: {v}" for k, v in sorted(meta.items()))
        text = header + "\n" + text
    atomic_write_text(text_path, text + "\n")


def read_popularity(path) -> dict[str, int]:
    """Read a ``movie_id<TAB>rating_count`` popularity file."""
    from pathlib import Path

    path = Path(path)
    if not path.is_file():
        raise DataError(f"popularity file not found: {path}")
    popularity: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataError(f"{path}:{line_no}: expected 'movie_id<TAB>rating_count'")
            movie_id, raw = fields
            try:
                count = int(raw)
            except ValueError:
                raise DataError(f"{path}:{line_no}: bad rating count {raw!r}") from None
            if count < 0:
                raise DataError(f"{path}:{line_no}: negative rating count")
            popularity[movie_id] = count
    return popularity

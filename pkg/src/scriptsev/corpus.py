"""Corpus ingestion, vote filtering, stratified/k-fold splitting, and statistics.

The on-disk layout is deliberately plain so every run is auditable:

* manifest: UTF-8 tab-delimited table, header required, one row per movie with
  columns ``movie_id``, ``title``, then ``<aspect>_label`` / ``<aspect>_votes``
  for each of the five aspects (empty label = movie absent from that aspect);
* scripts: one UTF-8 text file per movie (``<movie_id>.txt``), one dialogue
  utterance per line, blank lines ignored;
* split assignment: ``movie_id<TAB>part`` lines, parts in {train, dev, test},
  ``#`` lines are comments.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np

from .errors import DataError
from .utils import atomic_write_text

log = logging.getLogger(__name__)

PARTS = ("train", "dev", "test")

_LEVEL_NAMES = ("None", "Mild", "Moderate", "Severe")


class SeverityLevel(IntEnum):
    """Ordinal severity of one content aspect; total order NONE < ... < SEVERE."""

    NONE = 0
    MILD = 1
    MODERATE = 2
    SEVERE = 3

    @property
    def label(self) -> str:
        return _LEVEL_NAMES[self.value]

    @classmethod
    def from_label(cls, token: str) -> "SeverityLevel":
        try:
            return _LEVEL_BY_NAME[token]
        except KeyError:
            raise DataError(f"unknown severity label {token!r}") from None


_LEVEL_BY_NAME = {name: SeverityLevel(i) for i, name in enumerate(_LEVEL_NAMES)}


class Aspect(str, Enum):
    """The five age-restricted content aspects rated per movie."""

    SEX = "Sex"
    VIOLENCE = "Violence"
    PROFANITY = "Profanity"
    SUBSTANCE = "Substance"
    FRIGHTENING = "Frightening"

    @property
    def column(self) -> str:
        """Manifest column prefix for this aspect."""
        return self.value.lower()

    @classmethod
    def from_name(cls, token: str) -> "Aspect":
        for aspect in cls:
            if token.lower() == aspect.value.lower():
                return aspect
        raise DataError(f"unknown aspect {token!r}")


@dataclass(frozen=True)
class Utterance:
    """One line of dialogue; ``index`` is its position within the script."""

    text: str
    index: int


@dataclass(frozen=True)
class ScriptDocument:
    """A movie's dialogue as an ordered, non-empty utterance sequence."""

    movie_id: str
    title: str
    utterances: tuple[Utterance, ...]

    def __post_init__(self) -> None:
        if not self.movie_id:
            raise DataError("movie_id must be non-empty")
        if not self.utterances:
            raise DataError(f"document {self.movie_id!r} has no utterances")
        for i, utt in enumerate(self.utterances):
            if utt.index != i:
                raise DataError(
                    f"document {self.movie_id!r}: utterance indices not contiguous at {i}"
                )
            if not utt.text.strip():
                raise DataError(f"document {self.movie_id!r}: empty utterance at {i}")

    def words(self) -> list[str]:
        """Whitespace tokens over all utterances, in order."""
        out: list[str] = []
        for utt in self.utterances:
            out.extend(utt.text.split())
        return out

    @property
    def n_words(self) -> int:
        return sum(len(utt.text.split()) for utt in self.utterances)


def document_from_lines(movie_id: str, title: str, lines: list[str]) -> ScriptDocument:
    """Build a document from raw script lines, dropping blank lines."""
    texts = [line.strip() for line in lines]
    texts = [t for t in texts if t]
    if not texts:
        raise DataError(f"script for movie {movie_id!r} contains no dialogue")
    utterances = tuple(Utterance(text=t, index=i) for i, t in enumerate(texts))
    return ScriptDocument(movie_id=movie_id, title=title, utterances=utterances)


@dataclass(frozen=True)
class LabeledInstance:
    """(document, aspect, severity label, vote count): the atomic train/eval unit."""

    document: ScriptDocument
    aspect: Aspect
    label: SeverityLevel
    votes: int

    def __post_init__(self) -> None:
        if self.votes < 0:
            raise DataError(f"movie {self.movie_id!r}: negative vote count")

    @property
    def movie_id(self) -> str:
        return self.document.movie_id


@dataclass
class AspectDataset:
    """All labeled instances of one aspect, optionally with a part assignment."""

    aspect: Aspect
    instances: list[LabeledInstance]
    split: dict[str, str] | None = None

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def movie_ids(self) -> list[str]:
        return [inst.movie_id for inst in self.instances]

    def part(self, name: str) -> list[LabeledInstance]:
        """Instances assigned to one part; requires a split."""
        if name not in PARTS:
            raise DataError(f"unknown part {name!r}; expected one of {PARTS}")
        if self.split is None:
            raise DataError(f"{self.aspect.value} dataset has no split assignment")
        return [inst for inst in self.instances if self.split[inst.movie_id] == name]

    def with_split(self, split: dict[str, str]) -> "AspectDataset":
        """Attach a split that must cover every instance exactly once."""
        ids = self.movie_ids()
        missing = [m for m in ids if m not in split]
        if missing:
            raise DataError(
                f"{self.aspect.value} split misses {len(missing)} instance(s), "
                f"e.g. {missing[0]!r}"
            )
        extra = set(split) - set(ids)
        if extra:
            raise DataError(
                f"{self.aspect.value} split names {len(extra)} unknown movie(s), "
                f"e.g. {sorted(extra)[0]!r}"
            )
        bad = {p for p in split.values() if p not in PARTS}
        if bad:
            raise DataError(f"split contains unknown part name(s): {sorted(bad)}")
        return replace(self, split=dict(split))


@dataclass(frozen=True)
class CorpusStats:
    """Per-class counts, document word-length quantiles, and vocabulary size."""

    n_instances: int
    class_counts: dict[SeverityLevel, int]
    length_quantiles: dict[str, float]
    mean_length: float
    vocabulary_size: int

    def to_json_dict(self) -> dict:
        return {
            "n_instances": self.n_instances,
            "class_counts": {lv.label: self.class_counts.get(lv, 0) for lv in SeverityLevel},
            "length_quantiles": dict(self.length_quantiles),
            "mean_length": self.mean_length,
            "vocabulary_size": self.vocabulary_size,
        }

    def to_text(self) -> str:
        lines = [f"instances: {self.n_instances}"]
        for lv in SeverityLevel:
            lines.append(f"  {lv.label:<9} {self.class_counts.get(lv, 0)}")
        q = self.length_quantiles
        lines.append(
            "document length (words): "
            f"min {q['min']:.0f} / p25 {q['p25']:.0f} / median {q['median']:.0f} / "
            f"p75 {q['p75']:.0f} / max {q['max']:.0f} (mean {self.mean_length:.1f})"
        )
        lines.append(f"vocabulary size: {self.vocabulary_size}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# manifest / script ingestion
# ---------------------------------------------------------------------------

MANIFEST_COLUMNS = ["movie_id", "title"] + [
    f"{aspect.column}_{kind}" for aspect in Aspect for kind in ("label", "votes")
]


def load_corpus(manifest_path: str | Path, scripts_dir: str | Path) -> dict[Aspect, AspectDataset]:
    """Read a manifest plus script files into one dataset per aspect.

    Every manifest row with at least one non-missing aspect label must have a
    readable, non-empty script file; such a row yields one LabeledInstance per
    labeled aspect. Rows with an empty label for an aspect are silently absent
    from that aspect's dataset.
    """
    manifest_path = Path(manifest_path)
    scripts_dir = Path(scripts_dir)
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    if not scripts_dir.is_dir():
        raise DataError(f"scripts directory not found: {scripts_dir}")

    with open(manifest_path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"manifest {manifest_path} is empty")

    header = lines[0].split("\t")
    missing_cols = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing_cols:
        raise DataError(f"manifest header missing column(s): {missing_cols}")
    col = {name: header.index(name) for name in MANIFEST_COLUMNS}

    datasets = {aspect: AspectDataset(aspect=aspect, instances=[]) for aspect in Aspect}
    seen: set[str] = set()
    for row_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(header):
            raise DataError(
                f"manifest row {row_no}: expected {len(header)} fields, got {len(fields)}"
            )
        movie_id = fields[col["movie_id"]].strip()
        title = fields[col["title"]].strip()
        if not movie_id:
            raise DataError(f"manifest row {row_no}: empty movie_id")
        if movie_id in seen:
            raise DataError(f"manifest row {row_no}: duplicate movie_id {movie_id!r}")
        seen.add(movie_id)

        labels: dict[Aspect, tuple[SeverityLevel, int]] = {}
        for aspect in Aspect:
            raw_label = fields[col[f"{aspect.column}_label"]].strip()
            raw_votes = fields[col[f"{aspect.column}_votes"]].strip()
            if not raw_label:
                continue
            try:
                level = SeverityLevel.from_label(raw_label)
            except DataError as exc:
                raise DataError(f"manifest row {row_no}: {exc}") from None
            try:
                votes = int(raw_votes)
            except ValueError:
                raise DataError(
                    f"manifest row {row_no}: bad vote count {raw_votes!r} "
                    f"for {aspect.value}"
                ) from None
            if votes < 0:
                raise DataError(f"manifest row {row_no}: negative votes for {aspect.value}")
            labels[aspect] = (level, votes)

        if not labels:
            log.debug("manifest row %d (%s): no aspect labels, skipped", row_no, movie_id)
            continue

        script_path = scripts_dir / f"{movie_id}.txt"
        if not script_path.is_file():
            raise DataError(f"script file missing for movie {movie_id!r}: {script_path}")
        try:
            raw = script_path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise DataError(f"cannot read script for movie {movie_id!r}: {exc}") from exc
        document = document_from_lines(movie_id, title, raw.splitlines())

        for aspect, (level, votes) in labels.items():
            datasets[aspect].instances.append(
                LabeledInstance(document=document, aspect=aspect, label=level, votes=votes)
            )

    return datasets


def _collect_movies(
    datasets: dict[Aspect, AspectDataset],
) -> tuple[dict[str, ScriptDocument], dict[str, dict[Aspect, tuple[SeverityLevel, int]]]]:
    movies: dict[str, ScriptDocument] = {}
    labels: dict[str, dict[Aspect, tuple[SeverityLevel, int]]] = {}
    for aspect, dataset in datasets.items():
        for inst in dataset.instances:
            doc = inst.document
            known = movies.setdefault(doc.movie_id, doc)
            if known is not doc and known.title != doc.title:
                raise DataError(f"conflicting titles for movie {doc.movie_id!r}")
            labels.setdefault(doc.movie_id, {})[aspect] = (inst.label, inst.votes)
    return movies, labels


def write_manifest(datasets: dict[Aspect, AspectDataset], manifest_path: str | Path) -> None:
    """Write the manifest rows for every movie appearing in ``datasets``."""
    movies, labels = _collect_movies(datasets)
    rows = ["\t".join(MANIFEST_COLUMNS)]
    for movie_id in sorted(movies):
        doc = movies[movie_id]
        fields = [movie_id, doc.title]
        for aspect in Aspect:
            if aspect in labels[movie_id]:
                level, votes = labels[movie_id][aspect]
                fields.extend([level.label, str(votes)])
            else:
                fields.extend(["", ""])
        rows.append("\t".join(fields))
    atomic_write_text(manifest_path, "\n".join(rows) + "\n")


def save_corpus(
    datasets: dict[Aspect, AspectDataset],
    manifest_path: str | Path,
    scripts_dir: str | Path,
) -> None:
    """Inverse of :func:`load_corpus`; writes manifest and one script per movie."""
    scripts_dir = Path(scripts_dir)
    scripts_dir.mkdir(parents=True, exist_ok=True)
    movies, _ = _collect_movies(datasets)
    for movie_id in sorted(movies):
        doc = movies[movie_id]
        script_text = "\n".join(utt.text for utt in doc.utterances) + "\n"
        atomic_write_text(scripts_dir / f"{movie_id}.txt", script_text)
    write_manifest(datasets, manifest_path)


# ---------------------------------------------------------------------------
# filtering and splitting
# ---------------------------------------------------------------------------


def filter_by_votes(dataset: AspectDataset, min_votes: int = 5) -> AspectDataset:
    """Keep instances whose severity rating has at least ``min_votes`` votes."""
    if min_votes < 1:
        raise ValueError(f"min_votes must be >= 1, got {min_votes}")
    kept = [inst for inst in dataset.instances if inst.votes >= min_votes]
    split = None
    if dataset.split is not None:
        split = {inst.movie_id: dataset.split[inst.movie_id] for inst in kept}
    return AspectDataset(aspect=dataset.aspect, instances=kept, split=split)


def _apportion(quotas: list[float], total: int, caps: list[int]) -> list[int]:
    """Integer allocation of ``total`` close to fractional ``quotas``.

    Floors the quotas, then hands leftover units to the largest fractional
    parts (ties to the lower index); a class is bumped a second time only
    after every class got its first bump, so each allocation stays within one
    unit of its quota whenever that is feasible. Never exceeds ``caps``.
    """
    base = [min(math.floor(q), cap) for q, cap in zip(quotas, caps)]
    alloc = list(base)
    leftover = total - sum(alloc)
    if leftover < 0 or total > sum(caps):
        raise ValueError("infeasible apportionment")
    order = sorted(range(len(quotas)), key=lambda k: (-(quotas[k] - base[k]), k))
    extra = 1
    while leftover > 0:
        for k in order:
            if leftover == 0:
                break
            if alloc[k] < caps[k] and alloc[k] < base[k] + extra:
                alloc[k] += 1
                leftover -= 1
        extra += 1
    return alloc


def _ceil_stable(x: float) -> int:
    """Ceiling robust to float noise just above an integer (e.g. 13.000000000000002)."""
    return math.ceil(round(x, 9))


def _part_totals(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Part sizes for (train, dev, test): test and dev round up, train absorbs the rest."""
    r_train, r_dev, r_test = ratios
    n_test = _ceil_stable(r_test * n)
    rest = n - n_test
    n_dev = _ceil_stable(r_dev / (r_train + r_dev) * rest) if rest > 0 else 0
    n_train = n - n_test - n_dev
    if n_train < 0:
        raise DataError(f"ratios {ratios} leave no training data for n={n}")
    return n_train, n_dev, n_test


def stratified_split(
    dataset: AspectDataset,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> AspectDataset:
    """Assign train/dev/test parts, stratified per severity class.

    Test and dev totals round up (test first, then dev out of the remainder);
    per-class counts within each part follow largest-remainder apportionment,
    so each class lands within one instance of its exact proportion. Instances
    are ordered by (class, movie_id) and shuffled by a seeded generator before
    assignment, making the result deterministic under ``seed``.
    """
    if len(ratios) != 3:
        raise ValueError("ratios must be a (train, dev, test) triple")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be nonnegative, got {ratios}")

    by_class: dict[SeverityLevel, list[LabeledInstance]] = {lv: [] for lv in SeverityLevel}
    for inst in dataset.instances:
        by_class[inst.label].append(inst)
    present = [lv for lv in SeverityLevel if by_class[lv]]
    for lv in present:
        if len(by_class[lv]) < 3:
            raise DataError(
                f"{dataset.aspect.value}: class {lv.label} has only "
                f"{len(by_class[lv])} instance(s); need >= 3 to stratify"
            )

    n = len(dataset.instances)
    if n == 0:
        raise DataError(f"{dataset.aspect.value}: cannot split an empty dataset")
    n_train, n_dev, n_test = _part_totals(n, ratios)

    # Hold out dev+test per class against ratio-anchored quotas, so each
    # class's train share stays within one instance of its exact proportion,
    # then divide the holdout between test and dev.
    counts = [len(by_class[lv]) for lv in present]
    held_ratio = ratios[1] + ratios[2]
    held_counts = _apportion(
        [held_ratio * c for c in counts], n_dev + n_test, counts
    )
    held_total = n_dev + n_test
    if held_total:
        test_counts = _apportion(
            [h * n_test / held_total for h in held_counts], n_test, held_counts
        )
    else:
        test_counts = [0] * len(present)
    dev_counts = [h - t for h, t in zip(held_counts, test_counts)]

    rng = np.random.default_rng(seed)
    split: dict[str, str] = {}
    for k, lv in enumerate(present):
        ids = sorted(inst.movie_id for inst in by_class[lv])
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        t, d = test_counts[k], dev_counts[k]
        for movie_id in shuffled[:t]:
            split[movie_id] = "test"
        for movie_id in shuffled[t : t + d]:
            split[movie_id] = "dev"
        for movie_id in shuffled[t + d :]:
            split[movie_id] = "train"
    return dataset.with_split(split)


def kfold_split(
    dataset: AspectDataset, k: int = 10, seed: int = 0
) -> list[tuple[list[LabeledInstance], list[LabeledInstance]]]:
    """Stratified k-fold partition; returns k (train, test) instance lists.

    Instances are dealt to folds cyclically with a cursor that carries across
    classes, so per-class fold counts differ by at most one and so do overall
    fold sizes. Deterministic under ``seed``.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > len(dataset.instances):
        raise DataError(
            f"{dataset.aspect.value}: k={k} exceeds dataset size {len(dataset.instances)}"
        )

    rng = np.random.default_rng(seed)
    fold_of: dict[str, int] = {}
    cursor = 0
    for lv in SeverityLevel:
        members = sorted(
            (inst.movie_id for inst in dataset.instances if inst.label == lv)
        )
        if not members:
            continue
        order = rng.permutation(len(members))
        for i in order:
            fold_of[members[i]] = cursor % k
            cursor += 1

    folds: list[tuple[list[LabeledInstance], list[LabeledInstance]]] = []
    for f in range(k):
        test = [inst for inst in dataset.instances if fold_of[inst.movie_id] == f]
        train = [inst for inst in dataset.instances if fold_of[inst.movie_id] != f]
        folds.append((train, test))
    return folds


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def corpus_stats(dataset: AspectDataset) -> CorpusStats:
    """Per-class counts, word-length quantiles, and lowercased vocabulary size."""
    if not dataset.instances:
        raise DataError(f"{dataset.aspect.value}: cannot compute stats of an empty dataset")
    class_counts = Counter(inst.label for inst in dataset.instances)
    lengths = np.array([inst.document.n_words for inst in dataset.instances], dtype=float)
    qs = np.quantile(lengths, [0.0, 0.25, 0.5, 0.75, 1.0])
    vocab: set[str] = set()
    for inst in dataset.instances:
        vocab.update(w.lower() for w in inst.document.words())
    return CorpusStats(
        n_instances=len(dataset.instances),
        class_counts={lv: class_counts.get(lv, 0) for lv in SeverityLevel},
        length_quantiles={
            "min": float(qs[0]),
            "p25": float(qs[1]),
            "median": float(qs[2]),
            "p75": float(qs[3]),
            "max": float(qs[4]),
        },
        mean_length=float(lengths.mean()),
        vocabulary_size=len(vocab),
    )


# ---------------------------------------------------------------------------
# split file I/O
# ---------------------------------------------------------------------------


def write_split(split: dict[str, str], path: str | Path, comments: list[str] | None = None) -> None:
    """Write ``movie_id<TAB>part`` lines (sorted); optional leading # comments."""
    lines = [f"# {c}" for c in (comments or [])]
    lines.extend(f"{movie_id}\t{part}" for movie_id, part in sorted(split.items()))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_split(path: str | Path) -> dict[str, str]:
    """Read a split assignment file written by :func:`write_split`."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"split file not found: {path}")
    split: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataError(f"{path}:{line_no}: expected 'movie_id<TAB>part'")
            movie_id, part = fields
            if part not in PARTS:
                raise DataError(f"{path}:{line_no}: unknown part {part!r}")
            if movie_id in split:
                raise DataError(f"{path}:{line_no}: duplicate movie_id {movie_id!r}")
            split[movie_id] = part
    return split

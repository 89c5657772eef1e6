"""Metrics, cross-validation, and significance testing.

Macro F1 is the headline metric because the class distribution is imbalanced:
it averages per-class F1 over all four severity levels, counting a class with
a zero precision+recall denominator as F1 = 0. The significance test is paired
approximate randomization on the macro-F1 difference, run exhaustively when
the instance count makes full enumeration cheaper than sampling.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .corpus import AspectDataset, SeverityLevel
from .errors import DataError, TrainingError

log = logging.getLogger(__name__)

N_CLASSES = 4


def _as_int_array(labels, name: str) -> np.ndarray:
    arr = np.asarray([int(x) for x in labels], dtype=np.int64)
    if arr.size == 0:
        raise DataError(f"{name} is empty")
    if arr.min() < 0 or arr.max() >= N_CLASSES:
        raise DataError(f"{name} contains labels outside 0..{N_CLASSES - 1}")
    return arr


def confusion(gold, pred) -> np.ndarray:
    """4x4 count matrix: entry (g, p) counts gold-g instances predicted p."""
    g = _as_int_array(gold, "gold")
    p = _as_int_array(pred, "pred")
    if g.shape != p.shape:
        raise DataError(f"length mismatch: gold has {g.size}, pred has {p.size}")
    flat = np.bincount(g * N_CLASSES + p, minlength=N_CLASSES * N_CLASSES)
    return flat.reshape(N_CLASSES, N_CLASSES)


def per_class_f1(matrix: np.ndarray) -> np.ndarray:
    """Per-class F1 from a confusion matrix; zero-denominator classes get 0."""
    matrix = np.asarray(matrix, dtype=np.float64)
    tp = np.diag(matrix)
    denom = matrix.sum(axis=1) + matrix.sum(axis=0)  # (tp+fn) + (tp+fp)
    with np.errstate(invalid="ignore"):
        f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1e-300), 0.0)
    return f1


def macro_f1(gold, pred) -> float:
    """Unweighted mean of per-class F1 over the four severity levels."""
    return float(per_class_f1(confusion(gold, pred)).mean())


@dataclass(frozen=True)
class EvalReport:
    """Macro F1, per-class F1, and the confusion matrix for one prediction run."""

    macro_f1: float
    per_class_f1: tuple[float, float, float, float]
    confusion: np.ndarray
    n: int

    def to_json_dict(self) -> dict:
        return {
            "macro_f1": self.macro_f1,
            "per_class_f1": {
                lv.label: self.per_class_f1[lv.value] for lv in SeverityLevel
            },
            "confusion": self.confusion.tolist(),
            "n": self.n,
        }

    def to_text(self) -> str:
        lines = [f"instances: {self.n}", f"macro F1:  {self.macro_f1:.4f}"]
        for lv in SeverityLevel:
            lines.append(f"  F1[{lv.label:<8}] {self.per_class_f1[lv.value]:.4f}")
        lines.append("confusion (rows gold, cols predicted):")
        header = "          " + " ".join(f"{lv.label:>9}" for lv in SeverityLevel)
        lines.append(header)
        for lv in SeverityLevel:
            row = " ".join(f"{int(c):>9}" for c in self.confusion[lv.value])
            lines.append(f"{lv.label:>9} {row}")
        return "\n".join(lines)


def evaluate(gold, pred) -> EvalReport:
    """Full report for one gold/predicted label pairing."""
    matrix = confusion(gold, pred)
    f1 = per_class_f1(matrix)
    return EvalReport(
        macro_f1=float(f1.mean()),
        per_class_f1=tuple(float(x) for x in f1),
        confusion=matrix,
        n=int(matrix.sum()),
    )


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CVReport:
    """Per-fold macro F1 plus mean and standard deviation."""

    fold_scores: tuple[float, ...]
    mean: float
    std: float

    def to_tsv(self) -> str:
        lines = ["fold\tmacro_f1"]
        lines.extend(f"{i}\t{score:.6f}" for i, score in enumerate(self.fold_scores))
        lines.append(f"mean\t{self.mean:.6f}")
        lines.append(f"std\t{self.std:.6f}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "fold_scores": list(self.fold_scores),
            "mean": self.mean,
            "std": self.std,
        }


def cross_validate(
    dataset: AspectDataset,
    backbone,
    train_config,
    source,
    k: int = 10,
    multitask: bool = True,
    seed: int = 0,
    dev_fraction: float = 1 / 9,
) -> CVReport:
    """Train k fresh models on stratified folds and score their test macro F1.

    Each fold's training pool gets a stratified dev carve-out for early
    stopping; fold i trains with seed ``seed + i`` so runs are reproducible
    fold by fold.
    """
    from dataclasses import replace as dc_replace

    from .corpus import kfold_split, stratified_split
    from .siamese import train as train_model

    folds = kfold_split(dataset, k=k, seed=seed)
    scores = []
    for i, (pool, test) in enumerate(folds):
        try:
            pool_ds = AspectDataset(aspect=dataset.aspect, instances=pool)
            pool_ds = stratified_split(
                pool_ds, ratios=(1 - dev_fraction, dev_fraction, 0.0), seed=seed + i
            )
            fold_cfg = dc_replace(train_config, seed=seed + i)
            model = train_model(fold_cfg, pool_ds, backbone, multitask, source)
            pred, _ = model.predict_batch([inst.document for inst in test])
            scores.append(macro_f1([inst.label for inst in test], pred))
        except TrainingError as exc:
            raise TrainingError(f"fold {i}: {exc}") from exc
        log.info("fold %d/%d: macro F1 %.4f", i + 1, k, scores[-1])
    arr = np.array(scores, dtype=np.float64)
    return CVReport(
        fold_scores=tuple(float(s) for s in scores),
        mean=float(arr.mean()),
        std=float(arr.std()),
    )


# ---------------------------------------------------------------------------
# significance testing
# ---------------------------------------------------------------------------


def significance_test(
    gold,
    pred_a,
    pred_b,
    iterations: int = 10000,
    seed: int = 0,
    alternative: str = "two-sided",
) -> float:
    """Paired approximate randomization on the macro-F1 difference.

    Per iteration each instance's two predictions swap with probability 1/2;
    the p-value is the add-one-smoothed fraction of iterations whose permuted
    |difference| reaches the observed one. When 2**n does not exceed
    ``iterations`` the 2**n swap assignments are enumerated exhaustively and
    the p-value is the exact fraction.

    ``alternative="greater"`` runs the one-sided variant on the signed
    difference macro_f1(pred_a) - macro_f1(pred_b): a small p-value then means
    system A is significantly better than B.
    """
    g = _as_int_array(gold, "gold")
    a = _as_int_array(pred_a, "pred_a")
    b = _as_int_array(pred_b, "pred_b")
    if not (g.shape == a.shape == b.shape):
        raise DataError("gold, pred_a, pred_b must have equal lengths")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if alternative not in ("two-sided", "greater"):
        raise ValueError(f"unknown alternative {alternative!r}")
    two_sided = alternative == "two-sided"

    observed = macro_f1(g, a) - macro_f1(g, b)
    if two_sided:
        observed = abs(observed)
    n = g.size

    def permuted_diff(swap_mask: np.ndarray) -> float:
        a2 = np.where(swap_mask, b, a)
        b2 = np.where(swap_mask, a, b)
        diff = macro_f1(g, a2) - macro_f1(g, b2)
        return abs(diff) if two_sided else diff

    if n <= 62 and 2**n <= iterations:
        count = 0
        for bits in range(2**n):
            mask = (bits >> np.arange(n)) & 1
            if permuted_diff(mask.astype(bool)) >= observed:
                count += 1
        return count / 2**n

    rng = np.random.default_rng(seed)
    count = 0
    for _ in range(iterations):
        if permuted_diff(rng.random(n) < 0.5) >= observed:
            count += 1
    return (count + 1) / (iterations + 1)


def write_eval_report(report: EvalReport, text_path, json_path, meta: dict | None = None) -> None:
    """Write the report as both a text block and a JSON document."""
    from .utils import atomic_write_text

    payload = report.to_json_dict()
    if meta:
        payload.update(meta)
    atomic_write_text(json_path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    text = report.to_text()
    if meta:
        header = "\n".join(f"# {k}: {v}" for k, v in sorted(meta.items()))
        text = header + "\n" + text
    atomic_write_text(text_path, text + "\n")

"""Tied-weight multitask trainer: joint 4-way classification + 3-way pair ranking.

One shared encoder feeds both branches of every pair (there is exactly one
parameter copy), a linear head classifies each document into the four severity
levels, and a linear ranking head over [u ; v ; |u - v|] predicts whether the
left document's severity is LOWER / EQUAL / HIGHER than the right one's. The
two cross-entropies are summed with no weighting by default and optimized with
Adam. Inference-time comparison averages the ranking distribution with its
argument-swapped pass so the output is exactly swap-symmetric.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .backbones import (
    BackboneConfig,
    ClassifierHead,
    build_encoder,
    build_featurizer,
    collate_features,
    init_parameters,
)
from .corpus import (
    AspectDataset,
    Aspect,
    LabeledInstance,
    ScriptDocument,
    SeverityLevel,
)
from .embedding import (
    EmbeddingProvider,
    HashEmbedder,
    SentenceTransformerEmbedder,
    WordEmbeddingTable,
    load_word_embeddings,
)
from .errors import DataError, TrainingError, UnsupportedOperationError
from .evaluation import macro_f1
from .utils import atomic_write_bytes, atomic_write_text, derive_seed

log = logging.getLogger(__name__)

MODEL_MAGIC = b"SSEVMDL1\n"
MODEL_FORMAT_VERSION = 1


class RankLabel(IntEnum):
    """Relative severity of the left instance versus the right one."""

    LOWER = 0
    EQUAL = 1
    HIGHER = 2

    def swapped(self) -> "RankLabel":
        """Label under argument swap: LOWER <-> HIGHER, EQUAL fixed."""
        if self is RankLabel.LOWER:
            return RankLabel.HIGHER
        if self is RankLabel.HIGHER:
            return RankLabel.LOWER
        return RankLabel.EQUAL


def cpr(a: SeverityLevel, b: SeverityLevel) -> RankLabel:
    """Compare two severity levels into a ranking target."""
    if a < b:
        return RankLabel.LOWER
    if a > b:
        return RankLabel.HIGHER
    return RankLabel.EQUAL


@dataclass(frozen=True)
class PairSample:
    """Two same-aspect instances plus their derived rank label."""

    left: LabeledInstance
    right: LabeledInstance
    rank: RankLabel

    def __post_init__(self) -> None:
        if self.left.aspect != self.right.aspect:
            raise DataError("pair instances must share an aspect")
        if self.rank != cpr(self.left.label, self.right.label):
            raise DataError("pair rank label does not match cpr of the gold labels")

    @classmethod
    def of(cls, left: LabeledInstance, right: LabeledInstance) -> "PairSample":
        return cls(left=left, right=right, rank=cpr(left.label, right.label))


def sample_pair(
    train: AspectDataset | list[LabeledInstance], rng: np.random.Generator
) -> PairSample:
    """Draw two distinct instances uniformly; rank comes from the gold labels."""
    instances = train.instances if isinstance(train, AspectDataset) else train
    if len(instances) < 2:
        raise DataError(f"need >= 2 instances to sample a pair, have {len(instances)}")
    i, j = rng.choice(len(instances), size=2, replace=False)
    return PairSample.of(instances[int(i)], instances[int(j)])


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step losses; ``total`` is exactly ``l_c + l_r``."""

    l_c: float
    l_r: float
    total: float

    @classmethod
    def of(cls, l_c: float, l_r: float) -> "LossBreakdown":
        return cls(l_c=l_c, l_r=l_r, total=l_c + l_r)


@dataclass
class TrainConfig:
    """Optimization knobs; the seed is recorded in every artifact."""

    learning_rate: float = 1e-3
    batch_size: int = 16
    pairs_per_epoch: int | None = None  # default: ceil(train size / 2)
    max_epochs: int = 30
    patience: int = 5
    rank_loss_weight: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("learning_rate, batch_size, max_epochs must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.pairs_per_epoch is not None and self.pairs_per_epoch < 1:
            raise ValueError("pairs_per_epoch must be >= 1 when set")

    def to_json_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "pairs_per_epoch": self.pairs_per_epoch,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "rank_loss_weight": self.rank_loss_weight,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TrainConfig":
        return cls(**payload)


class RankHead(nn.Module):
    """Affine map on [u ; v ; |u - v|] producing (LOWER, EQUAL, HIGHER) logits."""

    def __init__(self, representation_dim: int):
        super().__init__()
        self.linear = nn.Linear(3 * representation_dim, 3)

    def forward(self, u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        if u.shape[-1] != v.shape[-1]:
            raise DataError(f"representation widths differ: {u.shape[-1]} vs {v.shape[-1]}")
        return self.linear(torch.cat([u, v, (u - v).abs()], dim=-1))


def rank_head(u: torch.Tensor, v: torch.Tensor, head: RankHead) -> torch.Tensor:
    """Ranking logits for a pair of representation batches."""
    expected = head.linear.in_features // 3
    if u.shape[-1] != expected:
        raise DataError(f"representation width {u.shape[-1]} != head width {expected}")
    return head(u, v)


class SiameseNetwork(nn.Module):
    """Shared encoder + classification head (+ ranking head when multitask)."""

    def __init__(self, config: BackboneConfig, multitask: bool):
        super().__init__()
        self.encoder = build_encoder(config)
        self.cls_head = ClassifierHead(config.representation_dim)
        self.rank_head = RankHead(config.representation_dim) if multitask else None


class SiameseModel:
    """A (possibly multitask) severity model for one aspect.

    Bundles the torch network with the featurizer that turns a
    :class:`ScriptDocument` into the encoder's input matrix. Both elements of
    a pair run through the same network instance, so the tied-weight property
    holds by construction.
    """

    def __init__(
        self,
        aspect: Aspect,
        backbone: BackboneConfig,
        source: EmbeddingProvider | WordEmbeddingTable,
        multitask: bool,
        train_config: TrainConfig | None = None,
        seed: int = 0,
    ):
        self.aspect = aspect
        self.backbone = backbone
        self.multitask = multitask
        self.train_config = train_config or TrainConfig(seed=seed)
        self.seed = seed
        self.source = source
        self.featurizer = build_featurizer(backbone, source)
        self.net = SiameseNetwork(backbone, multitask)
        self.best_dev_macro_f1: float | None = None
        self.config_hash: str = ""
        self.feature_cache: dict[str, np.ndarray] | None = None
        self.metrics_lines: list[str] = []

    # -- featurization -----------------------------------------------------

    def features(self, doc: ScriptDocument) -> np.ndarray:
        if self.feature_cache is not None:
            feats = self.feature_cache.get(doc.movie_id)
            if feats is None:
                feats = self.featurizer(doc)
                self.feature_cache[doc.movie_id] = feats
            return feats
        return self.featurizer(doc)

    @property
    def _dtype(self) -> torch.dtype:
        return next(self.net.parameters()).dtype

    # -- encoding and inference --------------------------------------------

    def _encode_tensor(self, feature_list: list[np.ndarray]) -> torch.Tensor:
        x, lengths = collate_features(feature_list, dtype=self._dtype)
        return self.net.encoder(x, lengths)

    def encode_batch(self, docs: list[ScriptDocument], chunk: int = 64) -> np.ndarray:
        """Document representations, row per document."""
        self.net.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(docs), chunk):
                feats = [self.features(d) for d in docs[start : start + chunk]]
                out.append(self._encode_tensor(feats).cpu().numpy())
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.backbone.representation_dim))

    def encode(self, doc: ScriptDocument) -> np.ndarray:
        return self.encode_batch([doc])[0]

    def predict_batch(
        self, docs: list[ScriptDocument], chunk: int = 64
    ) -> tuple[list[SeverityLevel], np.ndarray]:
        """Severity predictions plus class probability rows (softmax)."""
        if not docs:
            raise DataError("cannot predict on an empty document list")
        self.net.eval()
        probs_rows = []
        with torch.no_grad():
            for start in range(0, len(docs), chunk):
                feats = [self.features(d) for d in docs[start : start + chunk]]
                reps = self._encode_tensor(feats)
                logits = self.net.cls_head(reps)
                probs_rows.append(F.softmax(logits, dim=-1).cpu().numpy().astype(np.float64))
        probs = np.concatenate(probs_rows, axis=0)
        # np.argmax takes the first maximum, i.e. ties resolve to the lowest level
        levels = [SeverityLevel(int(np.argmax(row))) for row in probs]
        return levels, probs

    def predict(self, doc: ScriptDocument) -> tuple[SeverityLevel, np.ndarray]:
        levels, probs = self.predict_batch([doc])
        return levels[0], probs[0]

    def compare(
        self, a: ScriptDocument, b: ScriptDocument
    ) -> tuple[RankLabel, np.ndarray]:
        """Relative severity of ``a`` versus ``b`` with a canonical distribution.

        The raw head is not inherently antisymmetric, so the output averages
        the (a, b) softmax with the label-swapped (b, a) softmax; the result is
        exactly mirror-symmetric under argument swap. Ties resolve to EQUAL.
        """
        if not self.multitask or self.net.rank_head is None:
            raise UnsupportedOperationError(
                "comparison requires a multitask-trained model; this one is classification-only"
            )
        self.net.eval()
        with torch.no_grad():
            reps = self._encode_tensor([self.features(a), self.features(b)])
            u, v = reps[0:1], reps[1:2]
            p_ab = F.softmax(self.net.rank_head(u, v), dim=-1)[0].cpu().numpy().astype(np.float64)
            p_ba = F.softmax(self.net.rank_head(v, u), dim=-1)[0].cpu().numpy().astype(np.float64)
        probs = canonical_rank_probabilities(p_ab, p_ba)
        return rank_label_from_probabilities(probs), probs


def canonical_rank_probabilities(p_ab: np.ndarray, p_ba: np.ndarray) -> np.ndarray:
    """Average the forward distribution with the label-swapped reverse one."""
    return (np.asarray(p_ab) + np.asarray(p_ba)[[2, 1, 0]]) / 2


def rank_label_from_probabilities(probs: np.ndarray) -> RankLabel:
    """Argmax with any tie resolved to EQUAL."""
    winners = np.flatnonzero(probs == probs.max())
    if len(winners) == 1:
        return RankLabel(int(winners[0]))
    return RankLabel.EQUAL


def predict_severity(model: SiameseModel, doc: ScriptDocument) -> tuple[SeverityLevel, np.ndarray]:
    """Severity level plus 4-class probabilities for one document."""
    return model.predict(doc)


def compare(model: SiameseModel, a: ScriptDocument, b: ScriptDocument) -> tuple[RankLabel, np.ndarray]:
    """Relative severity of ``a`` versus ``b``; multitask models only."""
    return model.compare(a, b)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _check_finite(value: float, context: str) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss ({value}) during {context}")


def joint_step(
    model: SiameseModel,
    batch: list[PairSample],
    optimizer: torch.optim.Optimizer,
    rank_loss_weight: float = 1.0,
) -> LossBreakdown:
    """One multitask gradient step on a batch of pairs.

    l_c averages the 4-class cross-entropy over both elements of every pair;
    l_r averages the 3-class ranking cross-entropy over the batch; one
    optimizer step is taken on their sum through the shared parameters.
    """
    if not batch:
        raise DataError("joint_step needs a non-empty batch")
    for pair in batch:
        if pair.left.aspect != model.aspect:
            raise DataError(
                f"pair aspect {pair.left.aspect.value} != model aspect {model.aspect.value}"
            )
    if model.net.rank_head is None:
        raise UnsupportedOperationError("joint_step needs a multitask model")

    model.net.train()
    feats = [model.features(p.left.document) for p in batch]
    feats += [model.features(p.right.document) for p in batch]
    reps = model._encode_tensor(feats)
    u, v = reps[: len(batch)], reps[len(batch) :]

    cls_logits = model.net.cls_head(torch.cat([u, v], dim=0))
    cls_targets = torch.tensor(
        [int(p.left.label) for p in batch] + [int(p.right.label) for p in batch],
        dtype=torch.long,
    )
    l_c = F.cross_entropy(cls_logits, cls_targets)

    rank_logits = model.net.rank_head(u, v)
    rank_targets = torch.tensor([int(p.rank) for p in batch], dtype=torch.long)
    l_r = rank_loss_weight * F.cross_entropy(rank_logits, rank_targets)

    total = l_c + l_r
    lc_val, lr_val = float(l_c.item()), float(l_r.item())
    _check_finite(lc_val + lr_val, f"joint step on {len(batch)} pairs")

    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return LossBreakdown.of(lc_val, lr_val)


def classification_step(
    model: SiameseModel,
    instances: list[LabeledInstance],
    optimizer: torch.optim.Optimizer,
) -> LossBreakdown:
    """One classification-only gradient step on a batch of single instances."""
    if not instances:
        raise DataError("classification_step needs a non-empty batch")
    model.net.train()
    feats = [model.features(inst.document) for inst in instances]
    reps = model._encode_tensor(feats)
    logits = model.net.cls_head(reps)
    targets = torch.tensor([int(inst.label) for inst in instances], dtype=torch.long)
    l_c = F.cross_entropy(logits, targets)
    lc_val = float(l_c.item())
    _check_finite(lc_val, f"classification step on {len(instances)} instances")

    optimizer.zero_grad()
    l_c.backward()
    optimizer.step()
    return LossBreakdown.of(lc_val, 0.0)


def _chunks(seq, size):
    for start in range(0, len(seq), size):
        yield seq[start : start + size]


def train(
    config: TrainConfig,
    dataset: AspectDataset,
    backbone: BackboneConfig,
    multitask: bool,
    source: EmbeddingProvider | WordEmbeddingTable,
    log_path: str | Path | None = None,
) -> SiameseModel:
    """Train a severity model, early-stopping on dev macro F1.

    Multitask training samples ceil(N/2) pairs per epoch (configurable) and
    runs joint steps; classification-only training sweeps the shuffled train
    instances. The checkpoint with the best dev macro F1 is returned; metrics
    are logged one line per epoch as ``epoch,l_c,l_r,dev_macro_f1``.
    """
    if dataset.split is None:
        raise TrainingError("dataset has no train/dev split; run stratified_split first")
    train_insts = dataset.part("train")
    dev_insts = dataset.part("dev")
    if not train_insts:
        raise TrainingError("train split is empty")
    if not dev_insts:
        raise TrainingError("dev split is empty")

    torch.manual_seed(derive_seed(config.seed, "torch"))
    model = SiameseModel(
        aspect=dataset.aspect,
        backbone=backbone,
        source=source,
        multitask=multitask,
        train_config=config,
        seed=config.seed,
    )
    init_parameters(model.net, derive_seed(config.seed, "init"))
    model.feature_cache = {}
    for inst in train_insts + dev_insts:
        model.features(inst.document)
    if isinstance(source, WordEmbeddingTable) and source.lookups:
        log.info("word-table OOV rate over featurization: %.2f%%", 100 * source.oov_rate)

    optimizer = torch.optim.Adam(model.net.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(derive_seed(config.seed, "sampling"))
    n = len(train_insts)
    pairs_per_epoch = config.pairs_per_epoch or math.ceil(n / 2)
    if multitask and n < 2:
        raise TrainingError("multitask training needs >= 2 train instances")

    dev_docs = [inst.document for inst in dev_insts]
    dev_gold = [inst.label for inst in dev_insts]
    best_f1 = -1.0
    best_epoch = 0
    best_state: dict[str, torch.Tensor] | None = None
    lines = ["epoch,l_c,l_r,dev_macro_f1"]

    for epoch in range(1, config.max_epochs + 1):
        lc_sum = lr_sum = 0.0
        n_batches = 0
        if multitask:
            pairs = [sample_pair(train_insts, rng) for _ in range(pairs_per_epoch)]
            for batch in _chunks(pairs, config.batch_size):
                breakdown = joint_step(model, batch, optimizer, config.rank_loss_weight)
                lc_sum += breakdown.l_c
                lr_sum += breakdown.l_r
                n_batches += 1
        else:
            order = rng.permutation(n)
            shuffled = [train_insts[int(i)] for i in order]
            for batch in _chunks(shuffled, config.batch_size):
                breakdown = classification_step(model, batch, optimizer)
                lc_sum += breakdown.l_c
                n_batches += 1

        dev_pred, _ = model.predict_batch(dev_docs)
        dev_f1 = macro_f1(dev_gold, dev_pred)
        lines.append(
            f"{epoch},{lc_sum / n_batches:.6f},{lr_sum / n_batches:.6f},{dev_f1:.6f}"
        )
        log.debug("epoch %d: l_c=%.4f l_r=%.4f dev_f1=%.4f", epoch, lc_sum / n_batches,
                  lr_sum / n_batches, dev_f1)

        if dev_f1 > best_f1:
            best_f1 = dev_f1
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.net.state_dict().items()}
        if epoch - best_epoch >= config.patience:
            break

    assert best_state is not None
    model.net.load_state_dict(best_state)
    model.best_dev_macro_f1 = best_f1
    model.metrics_lines = lines
    model.feature_cache = None
    if log_path is not None:
        atomic_write_text(log_path, "\n".join(lines) + "\n")
    return model


# ---------------------------------------------------------------------------
# model file I/O
# ---------------------------------------------------------------------------


def save_model(model: SiameseModel, path: str | Path) -> None:
    """Serialize to a single versioned binary file (JSON header + raw arrays)."""
    params = [(name, p.detach().cpu().numpy()) for name, p in model.net.named_parameters()]
    header = {
        "format": "scriptsev-model",
        "version": MODEL_FORMAT_VERSION,
        "aspect": model.aspect.value,
        "multitask": model.multitask,
        "seed": model.seed,
        "best_dev_macro_f1": model.best_dev_macro_f1,
        "config_hash": model.config_hash,
        "backbone": model.backbone.to_json_dict(),
        "embedding": (
            model.source.descriptor()
            if isinstance(model.source, (EmbeddingProvider, WordEmbeddingTable))
            else {}
        ),
        "train_config": model.train_config.to_json_dict(),
        "params": [{"name": n, "shape": list(a.shape)} for n, a in params],
    }
    head_blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in params)
    blob = MODEL_MAGIC + len(head_blob).to_bytes(8, "big") + head_blob + body
    atomic_write_bytes(path, blob)


def load_model(
    path: str | Path,
    word_table: WordEmbeddingTable | None = None,
    provider: EmbeddingProvider | None = None,
) -> SiameseModel:
    """Load a model file, validating architecture and parameter shapes.

    Word-level models need their embedding table; it is reloaded from the
    recorded path unless ``word_table`` is passed. Sentence-level models
    rebuild their provider from the descriptor unless ``provider`` is passed.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    blob = path.read_bytes()
    if not blob.startswith(MODEL_MAGIC):
        raise DataError(f"{path} is not a model file (bad magic)")
    off = len(MODEL_MAGIC)
    head_len = int.from_bytes(blob[off : off + 8], "big")
    off += 8
    try:
        header = json.loads(blob[off : off + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt model header: {exc}") from exc
    off += head_len
    if header.get("version") != MODEL_FORMAT_VERSION:
        raise DataError(f"{path}: unsupported model format version {header.get('version')}")

    backbone = BackboneConfig.from_json_dict(header["backbone"])
    descriptor = header.get("embedding", {})
    source: EmbeddingProvider | WordEmbeddingTable
    if backbone.word_level:
        if word_table is not None:
            source = word_table
        elif descriptor.get("kind") == "word" and descriptor.get("path"):
            source = load_word_embeddings(descriptor["path"], dim=int(descriptor["dim"]))
        else:
            raise DataError(f"{path}: word-level model needs a word embedding table")
    elif provider is not None:
        source = provider
    elif descriptor.get("kind") == "hash":
        source = HashEmbedder(dim=int(descriptor["dim"]))
    elif descriptor.get("kind") == "sentence":
        source = SentenceTransformerEmbedder(model_name=descriptor["model"])
    else:
        raise DataError(f"{path}: cannot rebuild embedding provider from {descriptor}")

    model = SiameseModel(
        aspect=Aspect.from_name(header["aspect"]),
        backbone=backbone,
        source=source,
        multitask=bool(header["multitask"]),
        train_config=TrainConfig.from_json_dict(header["train_config"]),
        seed=int(header["seed"]),
    )
    model.best_dev_macro_f1 = header.get("best_dev_macro_f1")
    model.config_hash = header.get("config_hash", "")

    expected = {name: tuple(p.shape) for name, p in model.net.named_parameters()}
    recorded = {entry["name"]: tuple(entry["shape"]) for entry in header["params"]}
    if expected != recorded:
        raise DataError(
            f"{path}: parameter manifest does not match the declared architecture"
        )
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        raw = blob[off : off + 4 * count]
        if len(raw) != 4 * count:
            raise DataError(f"{path}: truncated parameter data at {entry['name']}")
        array = np.frombuffer(raw, dtype="<f4").reshape(shape)
        off += 4 * count
        with torch.no_grad():
            dict(model.net.named_parameters())[entry["name"]].copy_(
                torch.as_tensor(array.copy())
            )
    if off != len(blob):
        raise DataError(f"{path}: trailing bytes after parameter data")
    return model

"""Shared fixtures: tiny corpora on disk, word tables, and the trained
planted-signal model reused by the acceptance and interpretability tests."""

from __future__ import annotations

import time

import numpy as np
import pytest

from scriptsev.backbones import BackboneConfig
from scriptsev.corpus import (
    Aspect,
    AspectDataset,
    LabeledInstance,
    ScriptDocument,
    SeverityLevel,
    Utterance,
    save_corpus,
    stratified_split,
)
from scriptsev.embedding import HashEmbedder, WordEmbeddingTable
from scriptsev.siamese import TrainConfig, train
from scriptsev.synthetic import make_corpus

# Planted-signal run configuration shared by the acceptance suite.
SYNTH_CORPUS_SEED = 1234
SYNTH_N_DOCS = 600
SYNTH_EMBED_DIM = 64
SYNTH_HIDDEN = 32
SYNTH_TRAIN_SEED = 7
SYNTH_PAIRS_PER_EPOCH = 600


def make_doc(movie_id: str, texts: list[str], title: str | None = None) -> ScriptDocument:
    return ScriptDocument(
        movie_id=movie_id,
        title=title or movie_id.upper(),
        utterances=tuple(Utterance(text=t, index=i) for i, t in enumerate(texts)),
    )


def make_instance(
    movie_id: str,
    label: SeverityLevel,
    votes: int = 10,
    aspect: Aspect = Aspect.PROFANITY,
    texts: list[str] | None = None,
) -> LabeledInstance:
    doc = make_doc(movie_id, texts or [f"line one of {movie_id}", f"line two of {movie_id}"])
    return LabeledInstance(document=doc, aspect=aspect, label=label, votes=votes)


def make_dataset(
    labels: list[SeverityLevel],
    aspect: Aspect = Aspect.PROFANITY,
    votes: int = 10,
) -> AspectDataset:
    instances = [
        make_instance(f"m{i:04d}", label, votes=votes, aspect=aspect)
        for i, label in enumerate(labels)
    ]
    return AspectDataset(aspect=aspect, instances=instances)


@pytest.fixture
def tiny_word_table() -> WordEmbeddingTable:
    vectors = {
        "one": np.array([1.0, 1.0], dtype=np.float32),
        "three": np.array([3.0, 3.0], dtype=np.float32),
        "line": np.array([0.5, -0.5], dtype=np.float32),
        "of": np.array([0.25, 0.75], dtype=np.float32),
    }
    return WordEmbeddingTable(dim=2, vectors=vectors)


@pytest.fixture(scope="session")
def synth_dataset() -> AspectDataset:
    dataset = make_corpus(n_docs=SYNTH_N_DOCS, seed=SYNTH_CORPUS_SEED)
    return stratified_split(dataset, seed=SYNTH_CORPUS_SEED)


@pytest.fixture(scope="session")
def synth_provider() -> HashEmbedder:
    return HashEmbedder(dim=SYNTH_EMBED_DIM)


@pytest.fixture(scope="session")
def synth_backbone() -> BackboneConfig:
    return BackboneConfig(
        architecture="rnn_trans", input_dim=SYNTH_EMBED_DIM, hidden_dim=SYNTH_HIDDEN
    )


@pytest.fixture(scope="session")
def synth_model(synth_dataset, synth_provider, synth_backbone):
    """The planted-signal multitask model; returns (model, wall_seconds)."""
    config = TrainConfig(seed=SYNTH_TRAIN_SEED, pairs_per_epoch=SYNTH_PAIRS_PER_EPOCH)
    start = time.monotonic()
    model = train(config, synth_dataset, synth_backbone, True, synth_provider)
    elapsed = time.monotonic() - start
    return model, elapsed


@pytest.fixture(scope="session")
def disk_corpus(tmp_path_factory):
    """A small two-aspect corpus written to disk for ingestion/CLI tests."""
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(7)
    datasets = {
        Aspect.PROFANITY: AspectDataset(aspect=Aspect.PROFANITY, instances=[]),
        Aspect.VIOLENCE: AspectDataset(aspect=Aspect.VIOLENCE, instances=[]),
    }
    words = ["quiet", "morning", "harbor", "letter", "signal", "window"]
    for i in range(40):
        texts = [
            " ".join(rng.choice(words, size=int(rng.integers(3, 7))))
            for _ in range(int(rng.integers(3, 8)))
        ]
        doc = make_doc(f"mov{i:03d}", texts, title=f"Movie {i:03d}")
        level = SeverityLevel(i % 4)
        datasets[Aspect.PROFANITY].instances.append(
            LabeledInstance(document=doc, aspect=Aspect.PROFANITY, label=level,
                            votes=int(rng.integers(1, 40)))
        )
        if i % 2 == 0:
            datasets[Aspect.VIOLENCE].instances.append(
                LabeledInstance(document=doc, aspect=Aspect.VIOLENCE,
                                label=SeverityLevel((i // 2) % 4),
                                votes=int(rng.integers(1, 40)))
            )
    manifest = root / "manifest.tsv"
    scripts = root / "scripts"
    save_corpus(datasets, manifest, scripts)
    return {"root": root, "manifest": manifest, "scripts": scripts, "datasets": datasets}

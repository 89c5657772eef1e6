"""Document encoders mapping a script to a fixed-length representation.

Four interchangeable architectures share the batch interface
``forward(x: (B, T, D), lengths: (B,)) -> (B, R)``:

* ``rnn_trans``   - utterance embeddings -> BiLSTM -> max-pool over time (R = 2*hidden)
* ``textrcnn``    - word embeddings -> BiLSTM contexts -> tanh projection -> max-pool (R = projection)
* ``textcnn``     - word embeddings -> conv banks (widths 3/4/5) -> max-over-time (R = channels * banks)
* ``avg_embed``   - mean of word embeddings (R = D)

Padding positions are masked to -inf before any max-pool, so batch padding
never leaks into representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .corpus import ScriptDocument
from .embedding import (
    MAX_TOKENS_PER_UTTERANCE,
    MAX_UTTERANCES_PER_DOCUMENT,
    EmbeddingProvider,
    WordEmbeddingTable,
    tokenize,
    truncate_utterance,
)
from .errors import DataError

ARCHITECTURES = ("rnn_trans", "textrcnn", "textcnn", "avg_embed")
N_CLASSES = 4


@dataclass
class BackboneConfig:
    """Architecture choice plus the dimensions it needs."""

    architecture: str
    input_dim: int
    hidden_dim: int = 200
    num_layers: int = 1
    projection_dim: int = 200
    kernel_sizes: tuple[int, ...] = (3, 4, 5)
    channels: int = 10
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}"
            )
        if self.input_dim <= 0 or self.hidden_dim <= 0 or self.projection_dim <= 0:
            raise ValueError("dimensions must be positive")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        if self.architecture == "textcnn" and (not self.kernel_sizes or self.channels < 1):
            raise ValueError("textcnn needs kernel sizes and >= 1 channel")

    @property
    def representation_dim(self) -> int:
        if self.architecture == "rnn_trans":
            return 2 * self.hidden_dim
        if self.architecture == "textrcnn":
            return self.projection_dim
        if self.architecture == "textcnn":
            return self.channels * len(self.kernel_sizes)
        return self.input_dim

    @property
    def word_level(self) -> bool:
        return self.architecture in ("textrcnn", "textcnn", "avg_embed")

    @property
    def min_tokens(self) -> int:
        """Shortest token stream the encoder accepts (shorter ones are zero-padded)."""
        return max(self.kernel_sizes) if self.architecture == "textcnn" else 1

    def to_json_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers,
            "projection_dim": self.projection_dim,
            "kernel_sizes": list(self.kernel_sizes),
            "channels": self.channels,
            "dropout": self.dropout,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "BackboneConfig":
        return cls(
            architecture=payload["architecture"],
            input_dim=int(payload["input_dim"]),
            hidden_dim=int(payload["hidden_dim"]),
            num_layers=int(payload["num_layers"]),
            projection_dim=int(payload["projection_dim"]),
            kernel_sizes=tuple(payload["kernel_sizes"]),
            channels=int(payload["channels"]),
            dropout=float(payload["dropout"]),
        )


# ---------------------------------------------------------------------------
# featurizers: ScriptDocument -> (T, D) float32 matrix
# ---------------------------------------------------------------------------


class UtteranceFeaturizer:
    """Sentence-level features: one provider vector per (truncated) utterance."""

    def __init__(self, provider: EmbeddingProvider):
        if provider.kind != "sentence":
            raise DataError("utterance-level encoding needs a sentence provider")
        self.provider = provider
        self.dim = provider.dim

    def __call__(self, doc: ScriptDocument) -> np.ndarray:
        utts = doc.utterances[:MAX_UTTERANCES_PER_DOCUMENT]
        texts = [truncate_utterance(u.text, MAX_TOKENS_PER_UTTERANCE) for u in utts]
        return self.provider.encode_batch(texts)


class WordFeaturizer:
    """Word-level features: embedding rows for the concatenated token stream.

    Streams shorter than ``min_tokens`` are padded with zero rows so every
    convolution width has at least one valid window.
    """

    def __init__(self, table: WordEmbeddingTable, min_tokens: int = 1):
        self.table = table
        self.dim = table.dim
        self.min_tokens = min_tokens

    def __call__(self, doc: ScriptDocument) -> np.ndarray:
        tokens: list[str] = []
        for utt in doc.utterances[:MAX_UTTERANCES_PER_DOCUMENT]:
            tokens.extend(tokenize(utt.text)[:MAX_TOKENS_PER_UTTERANCE])
        if not tokens:
            raise DataError(f"document {doc.movie_id!r} yields an empty token stream")
        rows = np.stack([self.table.lookup(t) for t in tokens])
        if rows.shape[0] < self.min_tokens:
            pad = np.zeros((self.min_tokens - rows.shape[0], self.dim), dtype=rows.dtype)
            rows = np.concatenate([rows, pad], axis=0)
        return rows.astype(np.float32, copy=False)


def build_featurizer(
    config: BackboneConfig, source: EmbeddingProvider | WordEmbeddingTable
) -> UtteranceFeaturizer | WordFeaturizer:
    if config.word_level:
        if not isinstance(source, WordEmbeddingTable):
            raise DataError(f"{config.architecture} needs a word embedding table")
        if source.dim != config.input_dim:
            raise DataError(
                f"word table dim {source.dim} != configured input_dim {config.input_dim}"
            )
        return WordFeaturizer(source, min_tokens=config.min_tokens)
    if not isinstance(source, EmbeddingProvider):
        raise DataError("rnn_trans needs a sentence embedding provider")
    if source.dim != config.input_dim:
        raise DataError(
            f"provider dim {source.dim} != configured input_dim {config.input_dim}"
        )
    return UtteranceFeaturizer(source)


def collate_features(features: list[np.ndarray], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length (T_i, D) matrices into (B, T_max, D) plus lengths."""
    if not features:
        raise DataError("cannot collate an empty batch")
    lengths = torch.tensor([f.shape[0] for f in features], dtype=torch.long)
    t_max = int(lengths.max())
    dim = features[0].shape[1]
    out = torch.zeros((len(features), t_max, dim), dtype=dtype)
    for i, f in enumerate(features):
        out[i, : f.shape[0]] = torch.as_tensor(f, dtype=dtype)
    return out, lengths


# ---------------------------------------------------------------------------
# encoder modules
# ---------------------------------------------------------------------------


def _masked_max(states: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Elementwise max over time with padding positions masked to -inf."""
    mask = torch.arange(states.shape[1], device=states.device)[None, :] < lengths[:, None]
    masked = states.masked_fill(~mask[:, :, None], float("-inf"))
    return masked.amax(dim=1)


class RnnTransEncoder(nn.Module):
    """BiLSTM over utterance embeddings, max-pooled across all time steps."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.lstm = nn.LSTM(
            config.input_dim,
            config.hidden_dim,
            num_layers=config.num_layers,
            bidirectional=True,
            batch_first=True,
        )
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = nn.utils.rnn.pack_padded_sequence(
            x, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, _ = self.lstm(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True)
        return self.dropout(_masked_max(out, lengths))


class TextRCNNEncoder(nn.Module):
    """Recurrent contexts around each word, tanh projection, max-pool.

    Each position is represented as [left context; word vector; right context]
    taken from a bidirectional recurrence, projected to ``projection_dim``.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.lstm = nn.LSTM(
            config.input_dim,
            config.hidden_dim,
            num_layers=config.num_layers,
            bidirectional=True,
            batch_first=True,
        )
        self.projection = nn.Linear(
            2 * config.hidden_dim + config.input_dim, config.projection_dim
        )
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = nn.utils.rnn.pack_padded_sequence(
            x, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, _ = self.lstm(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True)
        h = self.config.hidden_dim
        x = x[:, : out.shape[1]]
        triple = torch.cat([out[..., :h], x, out[..., h:]], dim=-1)
        projected = torch.tanh(self.projection(triple))
        return self.dropout(_masked_max(projected, lengths))


class TextCNNEncoder(nn.Module):
    """Parallel convolution banks over the word matrix, max-over-time each."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.convs = nn.ModuleList(
            nn.Conv2d(1, config.channels, (k, config.input_dim)) for k in config.kernel_sizes
        )
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        pooled = []
        for k, conv in zip(self.config.kernel_sizes, self.convs):
            resp = torch.relu(conv(x.unsqueeze(1)).squeeze(3))  # (B, C, T-k+1)
            n_windows = torch.clamp(lengths - k + 1, min=1)
            windows = resp.permute(0, 2, 1)  # (B, T-k+1, C)
            pooled.append(_masked_max(windows, n_windows))
        return self.dropout(torch.cat(pooled, dim=1))


class AvgEmbedEncoder(nn.Module):
    """Mean of word vectors over true positions; no learned parameters."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        mask = torch.arange(x.shape[1], device=x.device)[None, :] < lengths[:, None]
        total = (x * mask[:, :, None]).sum(dim=1)
        return self.dropout(total / lengths[:, None].to(x.dtype))


_ENCODERS = {
    "rnn_trans": RnnTransEncoder,
    "textrcnn": TextRCNNEncoder,
    "textcnn": TextCNNEncoder,
    "avg_embed": AvgEmbedEncoder,
}


def build_encoder(config: BackboneConfig) -> nn.Module:
    return _ENCODERS[config.architecture](config)


class ClassifierHead(nn.Module):
    """Single affine map from a document representation to 4 class logits."""

    def __init__(self, representation_dim: int):
        super().__init__()
        self.linear = nn.Linear(representation_dim, N_CLASSES)

    def forward(self, rep: torch.Tensor) -> torch.Tensor:
        return self.linear(rep)


def classify(head: ClassifierHead, rep: torch.Tensor) -> torch.Tensor:
    """Class logits for a representation batch; validates width."""
    expected = head.linear.in_features
    if rep.shape[-1] != expected:
        raise DataError(f"representation width {rep.shape[-1]} != head width {expected}")
    return head(rep)


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def init_parameters(module: nn.Module, seed: int) -> None:
    """Seeded init: uniform fan-in for affine/conv, orthogonal per-gate recurrent
    kernels, zero biases. Iterates parameters in registration order, so the
    same seed always produces the same weights."""
    rng = np.random.default_rng(seed)
    for name, param in module.named_parameters():
        if "weight_hh" in name:
            h = param.shape[1]
            blocks = [_orthogonal(rng, h, h) for _ in range(param.shape[0] // h)]
            value = np.concatenate(blocks, axis=0)
        elif param.dim() >= 2:
            fan_in = int(np.prod(param.shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            value = rng.uniform(-bound, bound, size=tuple(param.shape))
        else:
            value = np.zeros(tuple(param.shape))
        with torch.no_grad():
            param.copy_(torch.as_tensor(value, dtype=param.dtype))

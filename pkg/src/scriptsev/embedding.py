"""Utterance- and word-level vector providers behind one deterministic interface.

Two provider kinds exist:

* ``sentence`` providers map an utterance's full text to one vector
  (:class:`HashEmbedder` for test-scale runs, :class:`SentenceTransformerEmbedder`
  as the pretrained plug-in);
* ``word`` lookup goes through :class:`WordEmbeddingTable` loaded from a plain
  ``token v1 ... v_dim`` text file, with all-zero vectors for OOV tokens.

Every provider is deterministic: the same input always yields the bitwise
identical vector.
"""

from __future__ import annotations

import hashlib
import logging
import re
from pathlib import Path

import numpy as np

from .corpus import Utterance
from .errors import DataError, ProviderError
from .utils import atomic_write_bytes

log = logging.getLogger(__name__)

# Featurization caps keeping memory bounded on very long scripts.
MAX_UTTERANCES_PER_DOCUMENT = 2000
MAX_TOKENS_PER_UTTERANCE = 128

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split; punctuation becomes separate single-char tokens."""
    return _TOKEN_RE.findall(text.lower())


def truncate_utterance(text: str, max_tokens: int = MAX_TOKENS_PER_UTTERANCE) -> str:
    """Keep only the first ``max_tokens`` whitespace tokens of an utterance."""
    parts = text.split()
    if len(parts) <= max_tokens:
        return text
    return " ".join(parts[:max_tokens])


class EmbeddingProvider:
    """Base for sentence-level providers: fixed ``dim``, deterministic encode."""

    kind = "sentence"
    dim: int

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        """Encode texts into a float32 array of shape (len(texts), dim)."""
        raise NotImplementedError

    def signature(self) -> str:
        """Stable identity string used for cache keys and model files."""
        raise NotImplementedError

    def descriptor(self) -> dict:
        """JSON-serializable description sufficient to rebuild the provider."""
        raise NotImplementedError


def embed_utterance(provider: EmbeddingProvider, utterance: Utterance | str) -> np.ndarray:
    """Vector of length ``provider.dim`` for one utterance."""
    text = utterance.text if isinstance(utterance, Utterance) else utterance
    return provider.encode_batch([text])[0]


class HashEmbedder(EmbeddingProvider):
    """Deterministic pseudo-embedding provider requiring no external downloads.

    Each token seeds a fixed pseudorandom generator through a stable 64-bit
    hash and maps to a unit-variance normal vector; an utterance embedding is
    the L2-normalized mean of its token vectors (zero vector if no tokens).
    """

    def __init__(self, dim: int = 64):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self._token_cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            vec = rng.standard_normal(self.dim).astype(np.float32)
            self._token_cache[token] = vec
        return vec

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            tokens = tokenize(text)
            if not tokens:
                continue
            mean = np.mean([self.token_vector(t) for t in tokens], axis=0)
            norm = float(np.linalg.norm(mean))
            out[i] = mean / norm if norm > 0 else mean
        return out

    def signature(self) -> str:
        return f"hash:{self.dim}"

    def descriptor(self) -> dict:
        return {"kind": "hash", "dim": self.dim}


class VectorCache:
    """On-disk per-utterance vector cache, safe under concurrent writers.

    One binary file per content hash (sharded by the first two hex chars),
    written via temp file + rename; a magic string versions the format.
    """

    MAGIC = b"SSEVVEC1"

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)

    @staticmethod
    def key(signature: str, text: str) -> str:
        payload = signature.encode("utf-8") + b"\x00" + text.encode("utf-8")
        return hashlib.blake2b(payload, digest_size=16).hexdigest()

    def _path(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.vec"

    def get(self, key: str) -> np.ndarray | None:
        path = self._path(key)
        try:
            blob = path.read_bytes()
        except OSError:
            return None
        if len(blob) < len(self.MAGIC) + 4 or not blob.startswith(self.MAGIC):
            log.warning("ignoring malformed cache entry %s", path)
            return None
        dim = int.from_bytes(blob[len(self.MAGIC) : len(self.MAGIC) + 4], "little")
        vec = np.frombuffer(blob[len(self.MAGIC) + 4 :], dtype="<f4")
        if vec.shape[0] != dim:
            log.warning("ignoring truncated cache entry %s", path)
            return None
        return vec.copy()

    def put(self, key: str, vec: np.ndarray) -> None:
        blob = (
            self.MAGIC
            + int(vec.shape[0]).to_bytes(4, "little")
            + np.ascontiguousarray(vec, dtype="<f4").tobytes()
        )
        atomic_write_bytes(self._path(key), blob)


class SentenceTransformerEmbedder(EmbeddingProvider):
    """Pretrained sentence-encoder plug-in with optional on-disk caching.

    The backend model is loaded lazily on first use; encoding ~10k-word
    scripts dominates runtime, so per-utterance vectors are cached by content
    hash when ``cache_dir`` is set.
    """

    def __init__(self, model_name: str = "bert-large-nli-mean-tokens",
                 cache_dir: str | Path | None = None, batch_size: int = 64):
        self.model_name = model_name
        self.batch_size = batch_size
        self._model = None
        self._dim: int | None = None
        self._cache = VectorCache(cache_dir) if cache_dir else None

    @property
    def dim(self) -> int:  # type: ignore[override]
        if self._dim is None:
            self._load()
        assert self._dim is not None
        return self._dim

    def _load(self) -> None:
        if self._model is not None:
            return
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise ProviderError(
                "sentence-transformers is not installed; install the 'sentence' extra"
            ) from exc
        try:
            self._model = SentenceTransformer(self.model_name)
        except Exception as exc:
            raise ProviderError(
                f"cannot load sentence encoder {self.model_name!r}: {exc}"
            ) from exc
        self._dim = int(self._model.get_sentence_embedding_dimension())

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        vectors: list[np.ndarray | None] = [None] * len(texts)
        missing: list[int] = []
        if self._cache is not None:
            for i, text in enumerate(texts):
                vectors[i] = self._cache.get(VectorCache.key(self.signature(), text))
                if vectors[i] is None:
                    missing.append(i)
        else:
            missing = list(range(len(texts)))

        if missing:
            self._load()
            fresh = self._model.encode(  # type: ignore[union-attr]
                [texts[i] for i in missing],
                batch_size=self.batch_size,
                convert_to_numpy=True,
                show_progress_bar=False,
            ).astype(np.float32)
            for j, i in enumerate(missing):
                vectors[i] = fresh[j]
                if self._cache is not None:
                    self._cache.put(VectorCache.key(self.signature(), texts[i]), fresh[j])

        dim = self._dim if self._dim is not None else (
            vectors[0].shape[0] if vectors else 0  # type: ignore[union-attr]
        )
        out = np.zeros((len(texts), dim), dtype=np.float32)
        for i, vec in enumerate(vectors):
            out[i] = vec
        return out

    def signature(self) -> str:
        return f"sentence:{self.model_name}"

    def descriptor(self) -> dict:
        return {"kind": "sentence", "model": self.model_name}


class WordEmbeddingTable:
    """Token -> vector lookup with an all-zero OOV policy and hit/miss counters."""

    kind = "word"

    def __init__(self, dim: int, vectors: dict[str, np.ndarray], source: str = ""):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self._vectors = vectors
        self._zero = np.zeros(dim, dtype=np.float32)
        self.source = source
        self.lookups = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def lookup(self, token: str) -> np.ndarray:
        """Vector for ``token``; OOV resolves to the zero vector, never fails."""
        self.lookups += 1
        vec = self._vectors.get(token)
        if vec is None:
            self.misses += 1
            return self._zero
        return vec

    @property
    def oov_rate(self) -> float:
        return self.misses / self.lookups if self.lookups else 0.0

    def descriptor(self) -> dict:
        return {"kind": "word", "dim": self.dim, "path": self.source}


def load_word_embeddings(path: str | Path, dim: int = 300) -> WordEmbeddingTable:
    """Parse a ``token v1 ... v_dim`` space-separated vector file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"word embedding file not found: {path}")
    vectors: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(" ")
            if len(fields) != dim + 1:
                raise DataError(
                    f"{path}:{line_no}: expected {dim + 1} fields, got {len(fields)}"
                )
            token = fields[0]
            try:
                vec = np.array([float(x) for x in fields[1:]], dtype=np.float32)
            except ValueError:
                raise DataError(f"{path}:{line_no}: non-numeric vector component") from None
            if token in vectors:
                log.debug("%s:%d: duplicate token %r, keeping last", path, line_no, token)
            vectors[token] = vec
    return WordEmbeddingTable(dim=dim, vectors=vectors, source=str(path))

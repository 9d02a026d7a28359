"""Text embeddings for record matching.

The built-in embedder hashes character n-grams into a fixed number of
buckets with signed contributions and L2-normalizes the result, so the
whole pipeline runs offline and deterministically. An external embedding
service can be plugged in instead; its vectors are re-normalized on
receipt.

All downstream distances are cosine distances, ``1 - u.v`` on unit
vectors.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from urllib import request as urlrequest

import numpy as np

from .tables import EntityRef

logger = logging.getLogger(__name__)

# A record embedding: one L2-normalized float32 vector, no NaN/Inf.
EmbeddingVector = np.ndarray

# FNV-1a style rolling hash constants; fixed so vectors are stable across
# runs and machines.
_HASH_MULT = np.uint64(1099511628211)
_HASH_SEED = np.uint64(1469598103934665603)


class EmbeddingError(RuntimeError):
    """Raised when an embedding cannot be produced."""


@dataclass
class EmbedderConfig:
    kind: str = "hashed_ngram"  # or "external_service"
    dimension: int = 384
    max_seq_length: int = 64
    batch_size: int = 512
    ngram_n: int = 3
    endpoint: str | None = None

    def __post_init__(self):
        if self.dimension < 8:
            raise ValueError("dimension must be >= 8")
        if self.kind not in ("hashed_ngram", "external_service"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.max_seq_length < 1 or self.batch_size < 1 or self.ngram_n < 1:
            raise ValueError("max_seq_length, batch_size and ngram_n must be positive")
        if self.kind == "external_service" and not self.endpoint:
            raise ValueError("external_service embedder requires an endpoint")


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine distance between unit vectors, clipped into [0, 2]."""
    d = 1.0 - float(np.dot(u, v))
    return min(max(d, 0.0), 2.0)


def _basis_vector(dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=np.float32)
    v[0] = 1.0
    return v


def _ngram_hashes(text: str, n: int) -> np.ndarray:
    """Stable uint64 hash of every byte n-gram of ``text``."""
    data = text.encode("utf-8")
    if len(data) < n:
        data = data + b"\x00" * (n - len(data))
    arr = np.frombuffer(data, dtype=np.uint8)
    windows = np.lib.stride_tricks.sliding_window_view(arr, n).astype(np.uint64)
    h = np.full(windows.shape[0], _HASH_SEED, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(n):
            h = (h ^ windows[:, j]) * _HASH_MULT
    return h


def embed_text(text: str, config: EmbedderConfig) -> np.ndarray:
    """Embed one string into a unit vector of ``config.dimension``.

    Truncates to ``max_seq_length`` whitespace tokens, lowercases, hashes
    character n-grams into buckets (the hash's top bit picks the sign of
    each contribution), and L2-normalizes. Empty text maps to a fixed unit
    basis vector.
    """
    if config.kind == "external_service":
        return embed_texts_external([text], config)[0]
    tokens = text.lower().split()
    if not tokens:
        return _basis_vector(config.dimension)
    joined = " ".join(tokens[: config.max_seq_length])
    h = _ngram_hashes(joined, config.ngram_n)
    buckets = (h % np.uint64(config.dimension)).astype(np.int64)
    signs = np.where((h >> np.uint64(63)) & np.uint64(1), -1.0, 1.0)
    vec = np.bincount(buckets, weights=signs, minlength=config.dimension)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        return _basis_vector(config.dimension)
    return (vec / norm).astype(np.float32)


def embed_texts_external(texts: list[str], config: EmbedderConfig, retries: int = 2) -> list[np.ndarray]:
    """POST ``{"texts": [...]}`` to the configured service; expects ``{"vectors": [[...]]}``."""
    payload = json.dumps({"texts": texts}).encode("utf-8")
    last_err: Exception | None = None
    for attempt in range(retries + 1):
        try:
            req = urlrequest.Request(
                config.endpoint, data=payload, headers={"Content-Type": "application/json"}
            )
            with urlrequest.urlopen(req, timeout=60) as resp:
                body = json.loads(resp.read().decode("utf-8"))
            break
        except Exception as err:  # noqa: BLE001 - report after retrying
            last_err = err
    else:
        raise EmbeddingError(
            f"embedding service failed after {retries + 1} attempts: {last_err}"
        )
    vectors = body.get("vectors")
    if vectors is None or len(vectors) != len(texts):
        raise EmbeddingError("embedding service returned a malformed response")
    out = []
    for row in vectors:
        vec = np.asarray(row, dtype=np.float32)
        if vec.shape != (config.dimension,):
            raise EmbeddingError(
                f"service returned dimension {vec.shape}, expected ({config.dimension},)"
            )
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError("service returned NaN/Inf values")
        norm = float(np.linalg.norm(vec))
        out.append(vec / norm if norm > 0 else _basis_vector(config.dimension))
    return out


def embed_dataset(coordinated, config: EmbedderConfig) -> dict[EntityRef, np.ndarray]:
    """Embed every coordinated record text; one unit vector per record.

    Accepts any object exposing ``items() -> iterable[(EntityRef, str)]``
    (a CoordinatedDataset or a plain dict). Processes in ``batch_size``
    chunks; the result does not depend on the chunking.
    """
    pairs = list(coordinated.items())
    out: dict[EntityRef, np.ndarray] = {}
    for start in range(0, len(pairs), config.batch_size):
        batch = pairs[start : start + config.batch_size]
        if config.kind == "external_service":
            try:
                vecs = embed_texts_external([t for _, t in batch], config)
            except EmbeddingError as err:
                raise EmbeddingError(f"batch starting at {batch[0][0]}: {err}") from err
            out.update(zip((r for r, _ in batch), vecs))
        else:
            for ref, text in batch:
                out[ref] = embed_text(text, config)
    return out

"""Text embedders and the dot-product similarity used for retrieval.

The default embedder hashes character trigrams of the lowercased text into a
fixed number of buckets with 64-bit FNV-1a and L2-normalizes the counts. It is
deterministic across processes and platforms. ``RemoteEmbedder`` posts texts to
an embedding service and returns its vectors unchanged.
"""

from __future__ import annotations

import os
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import httpx
import numpy as np

from .core import ValidationError

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


class TransportError(RuntimeError):
    """A remote call failed in a way that may succeed on retry."""


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def char_trigrams(text: str) -> list[str]:
    text = text.lower()
    if len(text) < 3:
        return [text]
    return [text[i : i + 3] for i in range(len(text) - 2)]


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two vectors of equal dimension."""
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float((a * b).sum())


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "local_trigram"
    dimension: int = 512
    url: str | None = None
    timeout_ms: int = 10_000
    token_env: str | None = None
    max_in_flight: int = 4
    memoize: bool = False

    def __post_init__(self) -> None:
        if self.backend not in ("local_trigram", "remote_service"):
            raise ValidationError(f"unknown embedder backend {self.backend!r}")
        if self.dimension < 8:
            raise ValidationError("embedding dimension must be >= 8")
        if self.backend == "remote_service" and not self.url:
            raise ValidationError("remote_service backend needs a url")


class TrigramEmbedder:
    def __init__(self, dimension: int = 512, memoize: bool = False):
        if dimension < 8:
            raise ValidationError("embedding dimension must be >= 8")
        self.dimension = dimension
        self._memo: dict[str, np.ndarray] | None = {} if memoize else None

    @property
    def fingerprint(self) -> str:
        return f"trigram-fnv1a64/dim={self.dimension}"

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValidationError("cannot embed empty text")
        if self._memo is not None and text in self._memo:
            return self._memo[text]
        vec = np.zeros(self.dimension, dtype=np.float64)
        for gram, count in Counter(char_trigrams(text)).items():
            vec[fnv1a_64(gram.encode("utf-8")) % self.dimension] += count
        vec /= np.linalg.norm(vec)
        vec.setflags(write=False)
        if self._memo is not None:
            self._memo[text] = vec
        return vec

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class RemoteEmbedder:
    """Client for ``POST {"texts": [...]} -> {"vectors": [[...], ...]}``."""

    def __init__(
        self,
        url: str,
        dimension: int,
        timeout_ms: int = 10_000,
        token_env: str | None = None,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
    ):
        self.url = url
        self.dimension = dimension
        self.timeout_ms = timeout_ms
        self.token_env = token_env
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(timeout=timeout_ms / 1000, transport=transport)

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.url}/dim={self.dimension}"

    def _headers(self) -> dict[str, str]:
        if self.token_env and os.environ.get(self.token_env):
            return {"Authorization": f"Bearer {os.environ[self.token_env]}"}
        return {}

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        if any(not t for t in texts):
            raise ValidationError("cannot embed empty text")
        with self._slots:
            try:
                resp = self._client.post(
                    self.url, json={"texts": list(texts)}, headers=self._headers()
                )
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                raise TransportError(f"embedding service failed: {exc}") from exc
        vectors = resp.json().get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise TransportError("embedding service returned a malformed body")
        out = []
        for v in vectors:
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != (self.dimension,):
                raise ValidationError(
                    f"service vector has shape {arr.shape}, expected ({self.dimension},)"
                )
            out.append(arr)
        return out

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


def make_embedder(config: EmbedderConfig, transport: httpx.BaseTransport | None = None):
    if config.backend == "local_trigram":
        return TrigramEmbedder(config.dimension, memoize=config.memoize)
    return RemoteEmbedder(
        config.url,
        config.dimension,
        timeout_ms=config.timeout_ms,
        token_env=config.token_env,
        max_in_flight=config.max_in_flight,
        transport=transport,
    )

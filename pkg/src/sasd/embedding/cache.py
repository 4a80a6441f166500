"""LRU embedding cache keyed by (backend id, content hash).

Refinement rescans pixels the coarse pass already saw, and text queries are
embedded once per scan, so a real backend benefits from memoisation. The
cache wraps any backend and is itself a backend.
"""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass

from sasd.embedding.base import EmbeddingBackend, EmbeddingVector, TextQuery
from sasd.raster import Raster


@dataclass(frozen=True)
class CacheStats:
    hits: int
    misses: int
    size: int
    capacity: int

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


def image_key(patch: Raster) -> str:
    h = hashlib.sha256()
    h.update(f"{patch.width}x{patch.height}x{patch.channels}:".encode())
    h.update(patch.pixels)
    return h.hexdigest()


def text_key(query: TextQuery) -> str:
    return hashlib.sha256(query.text.encode("utf-8")).hexdigest()


class CachedBackend(EmbeddingBackend):
    """Memoising wrapper. Safe to share across threads when the wrapped
    backend is; two threads missing the same key may both compute it, which
    is harmless because backends are deterministic."""

    def __init__(self, inner: EmbeddingBackend, capacity: int = 4096):
        if capacity < 1:
            raise ValueError("cache capacity must be >= 1")
        self.inner = inner
        self.capacity = capacity
        self.backend_id = inner.backend_id
        self.dim = inner.dim
        self.concurrent_safe = inner.concurrent_safe
        self.min_patch = inner.min_patch
        self._entries: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self._hits = 0
        self._misses = 0

    def _get(self, key):
        with self._lock:
            vec = self._entries.get(key)
            if vec is None:
                self._misses += 1
                return None
            self._entries.move_to_end(key)
            self._hits += 1
            return vec

    def _put(self, key, vec: EmbeddingVector):
        with self._lock:
            self._entries[key] = vec
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def _embed_text(self, query: TextQuery) -> EmbeddingVector:
        key = (self.backend_id, "text", text_key(query))
        vec = self._get(key)
        if vec is None:
            vec = self.inner.embed_text(query)
            self._put(key, vec)
        return vec

    def _embed_image(self, patch: Raster) -> EmbeddingVector:
        key = (self.backend_id, "image", image_key(patch))
        vec = self._get(key)
        if vec is None:
            vec = self.inner.embed_image(patch)
            self._put(key, vec)
        return vec

    def stats(self) -> CacheStats:
        with self._lock:
            return CacheStats(self._hits, self._misses, len(self._entries), self.capacity)

    def clear(self):
        with self._lock:
            self._entries.clear()
            self._hits = self._misses = 0

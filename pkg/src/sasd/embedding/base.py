from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from sasd.errors import BackendError, PatchTooSmallError, QueryError
from sasd.raster import Raster

MAX_QUERY_CHARS = 512


@dataclass(frozen=True)
class TextQuery:
    text: str

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise QueryError("empty query")
        if len(self.text) > MAX_QUERY_CHARS:
            raise QueryError(f"query longer than {MAX_QUERY_CHARS} characters")

    @classmethod
    def coerce(cls, query) -> "TextQuery":
        return query if isinstance(query, TextQuery) else cls(query)


class EmbeddingVector:
    """Unit-norm embedding. Raw values are normalised at construction."""

    __slots__ = ("_values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64).ravel()
        if arr.size == 0:
            raise ValueError("embedding must have at least one dimension")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding contains non-finite values")
        norm = math.sqrt(float(np.dot(arr, arr)))
        if norm == 0.0:
            raise ValueError("cannot normalise a zero vector")
        arr = arr / norm
        arr.setflags(write=False)
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return self._values.size

    def __neg__(self):
        return EmbeddingVector(-self._values)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash(self._values.tobytes())

    def __repr__(self):
        return f"EmbeddingVector(dim={self.dim})"


def similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine agreement mapped affinely onto [0, 1]: -1 -> 0, 0 -> 0.5, +1 -> 1."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    # summation order fixed by math.fsum so the result is symmetric bit for bit
    cos = math.fsum((a.values * b.values).tolist())
    return min(1.0, max(0.0, (cos + 1.0) / 2.0))


class EmbeddingBackend(ABC):
    """Turns text queries and image patches into vectors in one joint space.

    Subclasses set ``backend_id`` (used for cache keys), ``dim`` and
    ``concurrent_safe``. A backend that is not concurrent-safe is only ever
    called from one thread at a time by the scanner.
    """

    backend_id: str = "abstract"
    dim: int = 0
    concurrent_safe: bool = False
    min_patch: int = 8

    def embed_text(self, query) -> EmbeddingVector:
        return self._embed_text(TextQuery.coerce(query))

    def embed_image(self, patch: Raster) -> EmbeddingVector:
        if patch.width < self.min_patch or patch.height < self.min_patch:
            raise PatchTooSmallError()
        return self._embed_image(patch)

    @abstractmethod
    def _embed_text(self, query: TextQuery) -> EmbeddingVector:
        ...

    @abstractmethod
    def _embed_image(self, patch: Raster) -> EmbeddingVector:
        ...

    def _checked(self, raw, what: str) -> EmbeddingVector:
        try:
            vec = EmbeddingVector(raw)
        except ValueError as exc:
            raise BackendError(f"{self.backend_id}: invalid {what} embedding", str(exc)) from exc
        if self.dim and vec.dim != self.dim:
            raise BackendError(
                f"{self.backend_id}: {what} embedding has dim {vec.dim}, declared {self.dim}"
            )
        return vec

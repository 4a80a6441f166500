"""Text/image embedding backends and the similarity score."""

from sasd.embedding.base import (
    EmbeddingBackend,
    EmbeddingVector,
    TextQuery,
    similarity,
)
from sasd.embedding.cache import CachedBackend
from sasd.embedding.mock import MockBackend, MockParams
from sasd.errors import BackendError

BACKENDS = ("mock", "model-file", "remote")


def make_backend(name: str, options: dict | None = None, cache_size: int = 0) -> EmbeddingBackend:
    """Build a backend by config name.

    ``options`` holds backend settings: ``model-file`` needs ``sidecar``;
    ``remote`` needs ``url`` and accepts ``timeout``, ``retries``, ``dim``.
    A positive ``cache_size`` wraps the result in an LRU cache.
    """
    options = dict(options or {})
    if name == "mock":
        backend = MockBackend()
    elif name == "model-file":
        from sasd.embedding.model_file import ModelFileBackend

        if "sidecar" not in options:
            raise BackendError("model-file backend needs a 'sidecar' path")
        backend = ModelFileBackend(options["sidecar"])
    elif name == "remote":
        from sasd.embedding.remote import RemoteBackend

        if "url" not in options:
            raise BackendError("remote backend needs a 'url'")
        backend = RemoteBackend(
            options["url"],
            timeout=float(options.get("timeout", 10.0)),
            retries=int(options.get("retries", 2)),
            dim=options.get("dim"),
        )
    else:
        raise BackendError(f"unknown backend {name!r}; expected one of {', '.join(BACKENDS)}")
    if cache_size > 0:
        backend = CachedBackend(backend, cache_size)
    return backend


__all__ = [
    "BACKENDS",
    "CachedBackend",
    "EmbeddingBackend",
    "EmbeddingVector",
    "MockBackend",
    "MockParams",
    "TextQuery",
    "make_backend",
    "similarity",
]

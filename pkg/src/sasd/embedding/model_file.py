"""Embedding backend that runs exported encoder models (ONNX).

A model directory is described by a JSON sidecar::

    {
      "dim": 512,
      "input_size": 224,
      "mean": [0.481, 0.458, 0.408],
      "std": [0.269, 0.261, 0.276],
      "image_model": "image.onnx",
      "text_model": "text.onnx",
      "context_length": 77
    }

The image encoder takes one float32 input of shape (N, 3, S, S): the patch
resized to ``input_size`` (bilinear), scaled to [0, 1], normalised per
channel. The text encoder takes one int64 input of shape (N, L): UTF-8 bytes
of the query shifted by one (0 is padding), truncated or padded to
``context_length``. Each returns (N, dim) embeddings; the first output is
used. Model paths are relative to the sidecar.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from sasd.embedding.base import EmbeddingBackend, EmbeddingVector, TextQuery
from sasd.errors import BackendError
from sasd.raster import Raster


@dataclass(frozen=True)
class ModelSidecar:
    dim: int
    input_size: int
    mean: tuple
    std: tuple
    image_model: Path
    text_model: Path
    context_length: int = 77
    concurrent_safe: bool = False

    @classmethod
    def load(cls, path) -> "ModelSidecar":
        path = Path(path)
        try:
            meta = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise BackendError(f"cannot read model sidecar {path}", str(exc)) from exc
        try:
            side = cls(
                dim=int(meta["dim"]),
                input_size=int(meta["input_size"]),
                mean=tuple(float(v) for v in meta["mean"]),
                std=tuple(float(v) for v in meta["std"]),
                image_model=path.parent / meta["image_model"],
                text_model=path.parent / meta["text_model"],
                context_length=int(meta.get("context_length", 77)),
                concurrent_safe=bool(meta.get("concurrent_safe", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"invalid model sidecar {path}", repr(exc)) from exc
        if len(side.mean) != 3 or len(side.std) != 3 or min(side.std) <= 0:
            raise BackendError(f"invalid model sidecar {path}", "mean/std need 3 positive entries")
        if side.dim < 1 or side.input_size < 1 or side.context_length < 1:
            raise BackendError(f"invalid model sidecar {path}", "sizes must be positive")
        return side


def _onnx_session(path: Path):
    try:
        import onnxruntime as ort
    except ImportError as exc:
        raise BackendError(
            "the model-file backend needs onnxruntime (pip install onnxruntime)", str(exc)
        ) from exc
    return ort.InferenceSession(str(path), providers=["CPUExecutionProvider"])


def preprocess(patch: Raster, size: int, mean, std) -> np.ndarray:
    """(1, 3, size, size) float32 tensor."""
    img = Image.fromarray(patch.rgb()).resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(mean, dtype=np.float32)) / np.asarray(std, dtype=np.float32)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)[None])


def tokenize(text: str, context_length: int) -> np.ndarray:
    ids = [b + 1 for b in text.encode("utf-8")][:context_length]
    ids += [0] * (context_length - len(ids))
    return np.asarray([ids], dtype=np.int64)


class ModelFileBackend(EmbeddingBackend):
    """``session_factory(path)`` must return an object with
    ``get_inputs()`` and ``run(None, feeds)`` like an onnxruntime session."""

    def __init__(self, sidecar_path, session_factory=None):
        self.sidecar = ModelSidecar.load(sidecar_path)
        factory = session_factory or _onnx_session
        for p in (self.sidecar.image_model, self.sidecar.text_model):
            if not p.is_file():
                raise BackendError(f"model file not found: {p}")
        try:
            self._image_session = factory(self.sidecar.image_model)
            self._text_session = factory(self.sidecar.text_model)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError("failed to load model files", repr(exc)) from exc
        self.dim = self.sidecar.dim
        self.concurrent_safe = self.sidecar.concurrent_safe
        digest = hashlib.sha256()
        for p in (Path(sidecar_path), self.sidecar.image_model, self.sidecar.text_model):
            digest.update(p.read_bytes())
        self.backend_id = f"model-file:{digest.hexdigest()[:12]}"

    def _run(self, session, tensor: np.ndarray, what: str) -> EmbeddingVector:
        try:
            name = session.get_inputs()[0].name
            out = session.run(None, {name: tensor})[0]
        except Exception as exc:
            raise BackendError(f"{self.backend_id}: {what} encoder failed", repr(exc)) from exc
        return self._checked(np.asarray(out, dtype=np.float64)[0], what)

    def _embed_text(self, query: TextQuery) -> EmbeddingVector:
        return self._run(self._text_session, tokenize(query.text, self.sidecar.context_length), "text")

    def _embed_image(self, patch: Raster) -> EmbeddingVector:
        s = self.sidecar
        return self._run(self._image_session, preprocess(patch, s.input_size, s.mean, s.std), "image")

"""Embedding backend that calls an HTTP embedding service.

Wire format: ``POST {url}/embed`` with JSON ``{"kind": "text", "payload":
"<query>"}`` or ``{"kind": "image", "payload": "<base64 PNG>"}``; the reply
is ``{"vector": [...], "dim": D}``.
"""

from __future__ import annotations

import base64
import io
import json
import time
import urllib.error
import urllib.request

from PIL import Image

from sasd.embedding.base import EmbeddingBackend, EmbeddingVector, TextQuery
from sasd.errors import BackendError
from sasd.raster import Raster


def encode_png(patch: Raster) -> str:
    buf = io.BytesIO()
    Image.fromarray(patch.data if patch.channels != 1 else patch.data[:, :, 0]).save(buf, "PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class RemoteBackend(EmbeddingBackend):
    """Stateless client; concurrent-safe unless told otherwise.

    ``dim`` may be declared up front; otherwise the first reply fixes it and
    later replies must agree.
    """

    def __init__(
        self,
        url: str,
        *,
        timeout: float = 10.0,
        retries: int = 2,
        backoff: float = 0.1,
        dim: int | None = None,
        concurrent_safe: bool = True,
    ):
        if retries < 0:
            raise ValueError("retries must be >= 0")
        self.url = url.rstrip("/")
        self.endpoint = self.url + "/embed"
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.dim = dim or 0
        self.concurrent_safe = concurrent_safe
        self.backend_id = f"remote:{self.url}"

    def _post(self, body: dict) -> dict:
        data = json.dumps(body).encode("utf-8")
        last = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(
                self.endpoint, data=data, headers={"Content-Type": "application/json"}, method="POST"
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                last = f"HTTP {exc.code}: {exc.read()[:200]!r}"
                # client errors will not improve on retry
                if 400 <= exc.code < 500:
                    break
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last = repr(exc)
            except json.JSONDecodeError as exc:
                last = f"invalid JSON reply: {exc}"
                break
            if attempt < self.retries:
                time.sleep(self.backoff * (2 ** attempt))
        raise BackendError(f"{self.backend_id}: embed request failed", last)

    def _vector(self, reply: dict, what: str) -> EmbeddingVector:
        if not isinstance(reply, dict) or "vector" not in reply:
            raise BackendError(f"{self.backend_id}: malformed reply", repr(reply)[:200])
        values = reply["vector"]
        if "dim" in reply and reply["dim"] != len(values):
            raise BackendError(
                f"{self.backend_id}: reply dim {reply['dim']} != vector length {len(values)}"
            )
        if not self.dim:
            self.dim = len(values)
        return self._checked(values, what)

    def _embed_text(self, query: TextQuery) -> EmbeddingVector:
        return self._vector(self._post({"kind": "text", "payload": query.text}), "text")

    def _embed_image(self, patch: Raster) -> EmbeddingVector:
        return self._vector(self._post({"kind": "image", "payload": encode_png(patch)}), "image")

import base64
import io
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from PIL import Image

from sasd.embedding import make_backend
from sasd.embedding.base import EmbeddingVector, similarity
from sasd.embedding.remote import RemoteBackend, encode_png
from sasd.errors import BackendError
from sasd.raster import Raster


def _patch(seed=1, size=16):
    return Raster(np.random.default_rng(seed).integers(0, 256, (size, size, 3), dtype=np.uint8))


def _remote_vector(kind, payload):
    if kind == "text":
        data = payload.encode()
        return [len(data), sum(data) % 97 + 1, 1.0]
    arr = np.asarray(Image.open(io.BytesIO(base64.b64decode(payload))).convert("RGB"), dtype=np.float64)
    return [float(v) + 1.0 for v in arr.mean(axis=(0, 1))]


class _Server:
    """In-thread /embed service with scriptable failures."""

    def __init__(self):
        self.requests = []
        self.fail_next = 0
        self.fail_code = 503
        self.delay = 0.0
        self.reply = None
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.requests.append((self.path, body))
                if outer.delay:
                    time.sleep(outer.delay)
                if outer.fail_next > 0:
                    outer.fail_next -= 1
                    self.send_response(outer.fail_code)
                    self.end_headers()
                    self.wfile.write(b"busy")
                    return
                if outer.reply is not None:
                    payload = outer.reply
                else:
                    vec = _remote_vector(body["kind"], body["payload"])
                    payload = json.dumps({"vector": vec, "dim": len(vec)}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def server():
    s = _Server()
    yield s
    s.close()


def test_encode_png_roundtrip():
    patch = _patch(3, 10)
    decoded = np.asarray(Image.open(io.BytesIO(base64.b64decode(encode_png(patch)))))
    assert np.array_equal(decoded, patch.data)


def test_remote_text_and_image(server):
    be = RemoteBackend(server.url, backoff=0.0)
    v = be.embed_text("a red ship")
    assert np.allclose(v.values, EmbeddingVector(_remote_vector("text", "a red ship")).values)
    assert server.requests[0] == ("/embed", {"kind": "text", "payload": "a red ship"})
    patch = _patch(5, 12)
    img = be.embed_image(patch)
    mean = patch.data.astype(np.float64).mean(axis=(0, 1)) + 1.0
    assert np.allclose(img.values, EmbeddingVector(mean).values, atol=1e-9)
    assert be.dim == 3
    assert 0.0 <= similarity(v, img) <= 1.0


def test_remote_retries_server_errors(server):
    server.fail_next = 2
    be = RemoteBackend(server.url, retries=2, backoff=0.0)
    assert be.embed_text("ship").dim == 3
    assert len(server.requests) == 3


def test_remote_gives_up_after_retries(server):
    server.fail_next = 5
    be = RemoteBackend(server.url, retries=1, backoff=0.0)
    with pytest.raises(BackendError, match="embed request failed") as info:
        be.embed_text("ship")
    assert "503" in info.value.diagnostics
    assert len(server.requests) == 2


def test_remote_client_error_not_retried(server):
    server.fail_next = 5
    server.fail_code = 400
    be = RemoteBackend(server.url, retries=3, backoff=0.0)
    with pytest.raises(BackendError):
        be.embed_text("ship")
    assert len(server.requests) == 1


def test_remote_timeout(server):
    server.delay = 0.5
    be = RemoteBackend(server.url, timeout=0.05, retries=0)
    with pytest.raises(BackendError):
        be.embed_text("ship")


def test_remote_malformed_reply(server):
    server.reply = b'{"nope": 1}'
    with pytest.raises(BackendError, match="malformed"):
        RemoteBackend(server.url).embed_text("ship")
    server.reply = b'{"vector": [1, 2], "dim": 3}'
    with pytest.raises(BackendError, match="dim"):
        RemoteBackend(server.url).embed_text("ship")
    server.reply = b"not json"
    with pytest.raises(BackendError):
        RemoteBackend(server.url, retries=0).embed_text("ship")


def test_remote_declared_dim_enforced(server):
    with pytest.raises(BackendError, match="declared 8"):
        RemoteBackend(server.url, dim=8).embed_text("ship")


def test_remote_unreachable():
    be = RemoteBackend("http://127.0.0.1:9", timeout=0.2, retries=1, backoff=0.0)
    with pytest.raises(BackendError):
        be.embed_text("ship")


def test_factory_builds_remote(server):
    be = make_backend("remote", {"url": server.url, "retries": 0})
    assert be.embed_text("ship").dim == 3

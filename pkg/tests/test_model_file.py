import json

import numpy as np
import pytest

from sasd.embedding import make_backend
from sasd.embedding.base import EmbeddingVector
from sasd.embedding.model_file import ModelFileBackend, ModelSidecar, preprocess, tokenize
from sasd.errors import BackendError
from sasd.raster import Raster

onnx = pytest.importorskip("onnx")
pytest.importorskip("onnxruntime")
from onnx import TensorProto, helper, numpy_helper  # noqa: E402

DIM = 6
SIZE = 16
CTX = 12
MEAN = [0.5, 0.4, 0.3]
STD = [0.25, 0.2, 0.1]
RNG = np.random.default_rng(0)
W_IMG = RNG.normal(size=(3, DIM)).astype(np.float32)
B_IMG = RNG.normal(size=(DIM,)).astype(np.float32)
W_TXT = RNG.normal(size=(CTX, DIM)).astype(np.float32)
B_TXT = RNG.normal(size=(DIM,)).astype(np.float32)


def _image_model(out_dim=DIM):
    w = W_IMG[:, :out_dim]
    nodes = [
        helper.make_node("ReduceMean", ["pixels"], ["pooled"], axes=[2, 3], keepdims=0),
        helper.make_node("MatMul", ["pooled", "w"], ["proj"]),
        helper.make_node("Add", ["proj", "b"], ["embedding"]),
    ]
    graph = helper.make_graph(
        nodes,
        "image",
        [helper.make_tensor_value_info("pixels", TensorProto.FLOAT, ["n", 3, SIZE, SIZE])],
        [helper.make_tensor_value_info("embedding", TensorProto.FLOAT, ["n", out_dim])],
        [numpy_helper.from_array(w, "w"), numpy_helper.from_array(B_IMG[:out_dim], "b")],
    )
    return helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)], ir_version=8)


def _text_model():
    nodes = [
        helper.make_node("Cast", ["tokens"], ["tf"], to=TensorProto.FLOAT),
        helper.make_node("MatMul", ["tf", "w"], ["proj"]),
        helper.make_node("Add", ["proj", "b"], ["embedding"]),
    ]
    graph = helper.make_graph(
        nodes,
        "text",
        [helper.make_tensor_value_info("tokens", TensorProto.INT64, ["n", CTX])],
        [helper.make_tensor_value_info("embedding", TensorProto.FLOAT, ["n", DIM])],
        [numpy_helper.from_array(W_TXT, "w"), numpy_helper.from_array(B_TXT, "b")],
    )
    return helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)], ir_version=8)


@pytest.fixture
def model_dir(tmp_path):
    onnx.save(_image_model(), tmp_path / "image.onnx")
    onnx.save(_text_model(), tmp_path / "text.onnx")
    meta = {
        "dim": DIM,
        "input_size": SIZE,
        "mean": MEAN,
        "std": STD,
        "image_model": "image.onnx",
        "text_model": "text.onnx",
        "context_length": CTX,
    }
    (tmp_path / "model.json").write_text(json.dumps(meta))
    return tmp_path


def _patch(seed=1, size=SIZE):
    return Raster(np.random.default_rng(seed).integers(0, 256, (size, size, 3), dtype=np.uint8))


def test_tokenize_bytes_shifted_and_padded():
    ids = tokenize("ab", 5)
    assert ids.dtype == np.int64
    assert ids.tolist() == [[98, 99, 0, 0, 0]]
    assert tokenize("abcdef", 3).tolist() == [[98, 99, 100]]


def test_preprocess_layout():
    patch = _patch()
    t = preprocess(patch, SIZE, MEAN, STD)
    assert t.shape == (1, 3, SIZE, SIZE) and t.dtype == np.float32
    # same size: no resampling, so channel 0 is a plain affine map of red
    expected = (patch.data[:, :, 0] / 255.0 - MEAN[0]) / STD[0]
    assert np.allclose(t[0, 0], expected, atol=1e-5)


def test_model_file_image_matches_numpy(model_dir):
    be = ModelFileBackend(model_dir / "model.json")
    patch = _patch()
    x = patch.data.astype(np.float64) / 255.0
    pooled = (x.mean(axis=(0, 1)) - MEAN) / STD
    expected = EmbeddingVector(pooled @ W_IMG + B_IMG)
    got = be.embed_image(patch)
    assert got.dim == DIM
    assert np.allclose(got.values, expected.values, atol=1e-5)


def test_model_file_text_matches_numpy(model_dir):
    be = ModelFileBackend(model_dir / "model.json")
    ids = np.zeros(CTX)
    raw = [c + 1 for c in "red ship".encode()]
    ids[: len(raw)] = raw
    expected = EmbeddingVector(ids @ W_TXT + B_TXT)
    assert np.allclose(be.embed_text("red ship").values, expected.values, atol=1e-5)


def test_model_file_resizes_patch(model_dir):
    be = ModelFileBackend(model_dir / "model.json")
    v = be.embed_image(_patch(size=40))
    assert v.dim == DIM


def test_model_file_deterministic(model_dir):
    a = ModelFileBackend(model_dir / "model.json")
    b = ModelFileBackend(model_dir / "model.json")
    assert a.backend_id == b.backend_id
    assert np.allclose(a.embed_image(_patch()).values, b.embed_image(_patch()).values, atol=1e-5)


def test_model_file_dim_mismatch(model_dir):
    onnx.save(_image_model(out_dim=DIM - 1), model_dir / "image.onnx")
    be = ModelFileBackend(model_dir / "model.json")
    with pytest.raises(BackendError, match="dim"):
        be.embed_image(_patch())


def test_model_file_missing_model(model_dir):
    (model_dir / "text.onnx").unlink()
    with pytest.raises(BackendError, match="not found"):
        ModelFileBackend(model_dir / "model.json")


def test_sidecar_validation(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"dim": 4}))
    with pytest.raises(BackendError, match="invalid model sidecar"):
        ModelSidecar.load(p)
    p.write_text("{not json")
    with pytest.raises(BackendError):
        ModelSidecar.load(p)


class _FakeInput:
    name = "x"


class _FakeSession:
    def __init__(self, fail=False):
        self.fail = fail
        self.feeds = []

    def get_inputs(self):
        return [_FakeInput()]

    def run(self, outputs, feeds):
        if self.fail:
            raise RuntimeError("device lost")
        self.feeds.append(feeds["x"])
        return [np.ones((1, DIM), dtype=np.float32)]


def test_model_file_injected_session(model_dir):
    sessions = []

    def factory(path):
        sessions.append(_FakeSession())
        return sessions[-1]

    be = ModelFileBackend(model_dir / "model.json", session_factory=factory)
    v = be.embed_text("ship")
    assert np.allclose(v.values, np.full(DIM, 1 / np.sqrt(DIM)))
    assert sessions[1].feeds[0].shape == (1, CTX)


def test_model_file_runtime_failure_is_backend_error(model_dir):
    be = ModelFileBackend(model_dir / "model.json", session_factory=lambda p: _FakeSession(fail=True))
    with pytest.raises(BackendError, match="encoder failed") as info:
        be.embed_image(_patch())
    assert "device lost" in info.value.diagnostics


def test_factory_builds_model_file(model_dir):
    be = make_backend("model-file", {"sidecar": str(model_dir / "model.json")})
    assert be.dim == DIM

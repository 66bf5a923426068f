import numpy as np
import pytest

from tvtlab import checkpoint as ck


def test_roundtrip(tmp_path, rng):
    arrays = {
        "layer.w": rng.standard_normal((4, 7)).astype(np.float32),
        "layer.b": rng.standard_normal(4).astype(np.float32),
        "scalar": np.float32(3.25).reshape(()),
    }
    meta = {"variant": "rma", "gamma": 0.96, "obs_shape": [39, 7, 9]}
    path = tmp_path / "model.ckpt"
    ck.save(path, arrays, meta)
    loaded, got_meta = ck.load(path)
    assert got_meta == meta
    assert list(loaded) == list(arrays)
    for name in arrays:
        np.testing.assert_array_equal(loaded[name], arrays[name])


def test_float64_payload_stored_as_float32(tmp_path):
    arrays = {"x": np.array([1.0, 2.0], dtype=np.float64)}
    path = tmp_path / "m.ckpt"
    ck.save(path, arrays)
    loaded, _ = ck.load(path)
    assert loaded["x"].dtype == np.float32


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.load(path)


def test_unsupported_version_rejected(tmp_path, rng):
    path = tmp_path / "m.ckpt"
    ck.save(path, {"x": np.zeros(2, dtype=np.float32)})
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(ck.CheckpointError, match="version"):
        ck.load(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    ck.save(path, {"x": np.arange(10, dtype=np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ck.CheckpointError, match="truncated"):
        ck.load(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    ck.save(path, {"x": np.arange(4, dtype=np.float32)})
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(ck.CheckpointError, match="trailing"):
        ck.load(path)

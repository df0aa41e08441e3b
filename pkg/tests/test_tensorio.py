import struct

import numpy as np
import pytest

from semkg import tensorio


def test_round_trip(tmp_path):
    tensors = {
        "alpha": np.arange(12, dtype=np.float64).reshape(3, 4),
        "beta.bias": np.array([1.5, -2.25]),
        "scalarish": np.array([7.0]),
    }
    path = tmp_path / "t.bin"
    tensorio.save_tensors(str(path), tensors)
    loaded = tensorio.load_tensors(str(path))
    assert set(loaded) == set(tensors)
    for name in tensors:
        assert loaded[name].dtype == np.float64
        np.testing.assert_allclose(loaded[name], tensors[name], rtol=1e-6)
        assert loaded[name].shape == tensors[name].shape


def test_binary_layout_is_little_endian_f32(tmp_path):
    path = tmp_path / "t.bin"
    tensorio.save_tensors(str(path), {"w": np.array([[1.0, 2.0]])})
    raw = path.read_bytes()
    assert raw[:8] == tensorio.MAGIC
    (count,) = struct.unpack_from("<I", raw, 8)
    assert count == 1
    (name_len,) = struct.unpack_from("<H", raw, 12)
    assert raw[14:14 + name_len] == b"w"
    offset = 14 + name_len
    (ndim,) = struct.unpack_from("<B", raw, offset)
    dims = struct.unpack_from(f"<{ndim}I", raw, offset + 1)
    assert dims == (1, 2)
    values = struct.unpack_from("<2f", raw, offset + 1 + 4 * ndim)
    assert values == (1.0, 2.0)


def test_quantization_to_f32(tmp_path):
    path = tmp_path / "t.bin"
    precise = np.array([1.0 + 1e-12])
    tensorio.save_tensors(str(path), {"x": precise})
    assert tensorio.load_tensors(str(path))["x"][0] == np.float32(precise[0])


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValueError):
        tensorio.load_tensors(str(path))


def test_manifest_round_trip(tmp_path):
    path = tmp_path / "m.json"
    manifest = {"step": 3, "epoch": 1, "nested": {"k": 8}}
    tensorio.save_manifest(str(path), manifest)
    assert tensorio.load_manifest(str(path)) == manifest

import numpy as np
import pytest

from tilecontext.errors import ContractViolation
from tilecontext.pnm import read_pnm, write_pgm, write_ppm
from tilecontext.tensorfile import (load_checkpoint, load_tensor,
                                    save_checkpoint, save_tensor)


def test_tensor_file_roundtrip_f64(tmp_path, rng):
    arr = rng.normal(size=(3, 5, 7))
    save_tensor(tmp_path / "a.xtt", arr)
    back = load_tensor(tmp_path / "a.xtt")
    assert back.dtype == np.float64
    assert back.tobytes() == arr.tobytes()


def test_tensor_file_roundtrip_f32(tmp_path, rng):
    arr = rng.normal(size=(4,)).astype(np.float32)
    save_tensor(tmp_path / "a.xtt", arr)
    back = load_tensor(tmp_path / "a.xtt")
    assert back.dtype == np.float32
    assert back.tobytes() == arr.tobytes()


def test_tensor_file_scalar_rank0(tmp_path):
    save_tensor(tmp_path / "s.xtt", np.array(3.25))
    assert load_tensor(tmp_path / "s.xtt") == 3.25


def test_tensor_file_header_layout(tmp_path):
    save_tensor(tmp_path / "a.xtt", np.zeros((2, 3)))
    blob = (tmp_path / "a.xtt").read_bytes()
    assert blob[:4] == b"XTT1"
    assert blob[4] == 0  # f64
    assert blob[5] == 2  # rank
    assert int.from_bytes(blob[6:14], "little") == 2
    assert int.from_bytes(blob[14:22], "little") == 3
    assert len(blob) == 22 + 6 * 8


def test_tensor_file_rejects_bad_magic(tmp_path):
    (tmp_path / "bad.xtt").write_bytes(b"NOPE" + bytes(10))
    with pytest.raises(ContractViolation):
        load_tensor(tmp_path / "bad.xtt")


def test_tensor_file_rejects_truncated(tmp_path):
    save_tensor(tmp_path / "a.xtt", np.zeros(4))
    blob = (tmp_path / "a.xtt").read_bytes()
    (tmp_path / "a.xtt").write_bytes(blob[:-3])
    with pytest.raises(ContractViolation):
        load_tensor(tmp_path / "a.xtt")


def test_checkpoint_roundtrip(tmp_path, rng):
    tensors = {"layer.w": rng.normal(size=(3, 2)), "layer.b": rng.normal(size=2)}
    save_checkpoint(tmp_path / "ckpt", tensors)
    manifest = (tmp_path / "ckpt" / "manifest.txt").read_text()
    assert "layer.w\t3x2\tlayer.w.xtt" in manifest
    back = load_checkpoint(tmp_path / "ckpt")
    assert set(back) == set(tensors)
    for name in tensors:
        assert np.array_equal(back[name], tensors[name])


def test_pgm_roundtrip(tmp_path):
    grid = np.linspace(0, 1, 12).reshape(3, 4)
    write_pgm(tmp_path / "m.pgm", grid)
    img = read_pnm(tmp_path / "m.pgm")
    assert img.shape == (1, 3, 4)
    assert np.abs(img[0] - grid).max() <= 0.5 / 255 + 1e-12


def test_ppm_roundtrip(tmp_path, rng):
    img = rng.random((3, 4, 5))
    write_ppm(tmp_path / "m.ppm", img)
    back = read_pnm(tmp_path / "m.ppm")
    assert back.shape == (3, 4, 5)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_pnm_comment_and_whitespace(tmp_path):
    payload = bytes(range(6))
    (tmp_path / "c.pgm").write_bytes(b"P5 # comment\n# another\n3 2\n255\n" + payload)
    img = read_pnm(tmp_path / "c.pgm")
    assert img.shape == (1, 2, 3)
    assert np.array_equal((img[0] * 255).round().astype(np.uint8).ravel(),
                          np.frombuffer(payload, dtype=np.uint8))

import struct
import zlib

import numpy as np
import pytest

from percollfft.checkpoint import (
    MAGIC, checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint,
)
from percollfft.errors import CheckpointError
from percollfft.models import ModelConfig, build_model


@pytest.fixture(scope="module")
def model():
    m = build_model(ModelConfig(fusion="late"), seed=5)
    # move away from the seeded init so a silent re-init would be caught
    for p in m.parameters():
        p.data += np.float32(0.125)
    return m


def _reseal(body):
    return body + struct.pack("<I", zlib.crc32(body))


class TestRoundTrip:
    def test_bit_exact(self, model, tmp_path):
        path = tmp_path / "m.pcfm"
        save_checkpoint(model, path, seed=5, epoch=12, meta={"held_out": ["a", "b"]})
        back, header = load_checkpoint(path)
        for (n1, p1), (n2, p2) in zip(model.named_parameters(), back.named_parameters()):
            assert n1 == n2
            assert p1.data.tobytes() == p2.data.tobytes()
        assert back.config == model.config
        assert header["epoch"] == 12 and header["meta"] == {"held_out": ["a", "b"]}
        assert checkpoint_bytes(back, 5, 12, {"held_out": ["a", "b"]}) == path.read_bytes()

    def test_layout(self, model):
        data = checkpoint_bytes(model)
        assert data[:8] == MAGIC
        (hlen,) = struct.unpack_from("<I", data, 8)
        n_params = sum(p.data.size for p in model.parameters())
        assert len(data) == 8 + 4 + hlen + 4 * n_params + 4
        first = model.named_parameters()[0][1].data.ravel()[:4]
        blob = np.frombuffer(data, "<f4", count=4, offset=12 + hlen)
        np.testing.assert_array_equal(blob, first)

    def test_deterministic(self, model):
        assert checkpoint_bytes(model, 1, 2) == checkpoint_bytes(model, 1, 2)


class TestCorruption:
    def test_bad_magic(self, model):
        with pytest.raises(CheckpointError, match="magic"):
            parse_checkpoint(b"XXXX" + checkpoint_bytes(model)[4:])

    def test_version(self, model):
        with pytest.raises(CheckpointError, match="version"):
            parse_checkpoint(b"PCFM0002" + checkpoint_bytes(model)[8:])

    def test_flipped_bit(self, model):
        data = bytearray(checkpoint_bytes(model))
        data[len(data) // 2] ^= 0x10
        with pytest.raises(CheckpointError, match="checksum"):
            parse_checkpoint(bytes(data))

    def test_truncated(self, model):
        data = checkpoint_bytes(model)
        with pytest.raises(CheckpointError):
            parse_checkpoint(data[:-100])
        with pytest.raises(CheckpointError, match="truncated"):
            parse_checkpoint(data[:10])

    def test_truncated_but_resealed(self, model):
        data = checkpoint_bytes(model)[:-4]
        with pytest.raises(CheckpointError, match="truncated inside"):
            parse_checkpoint(_reseal(data[:-64]))

    def test_trailing_bytes(self, model):
        with pytest.raises(CheckpointError, match="trailing"):
            parse_checkpoint(_reseal(checkpoint_bytes(model)[:-4] + b"\0" * 8))

    def test_class_order(self, model):
        body = checkpoint_bytes(model)[:-4]
        old = b'"classes": ["healthy", "sickle", "spherocytosis", "thalassemia"]'
        new = b'"classes": ["sickle", "healthy", "spherocytosis", "thalassemia"]'
        assert old in body
        with pytest.raises(CheckpointError, match="class order"):
            parse_checkpoint(_reseal(body.replace(old, new)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(tmp_path / "nope.pcfm")


def test_eval_logits_survive_round_trip(model, tmp_path, rng):
    x = rng.random((2, 3) + model.config.input_size).astype(np.float32)
    h = rng.random((2, model.config.fft_dim)).astype(np.float32)
    save_checkpoint(model, tmp_path / "m.pcfm")
    back, _ = load_checkpoint(tmp_path / "m.pcfm")
    assert model.forward(x, h).data.tobytes() == back.forward(x, h).data.tobytes()

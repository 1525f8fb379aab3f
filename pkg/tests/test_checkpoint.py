"""Checkpoint file format and the background writer"""

from collections import OrderedDict

import numpy as np
import pytest

from checkpoint import MAGIC, CheckpointWriter, load_checkpoint, save_checkpoint
from errors import CheckpointError


def sample_tensors():
    rng = np.random.default_rng(0)
    return OrderedDict(
        [
            ("embedding", rng.normal(size=(4, 3)).astype(np.float32)),
            ("scalar", np.array(2.5, dtype=np.float32)),
            ("wide", rng.normal(size=(2, 2))),
        ]
    )


class TestFormat:
    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "model.ckpt")
        tensors = sample_tensors()
        save_checkpoint(path, {"name": "x"}, tensors, vocab={"tokens": ["a"]}, trainer_state={"epoch": 3})
        ckpt = load_checkpoint(path)
        assert list(ckpt.tensors) == list(tensors)
        for name, value in tensors.items():
            np.testing.assert_array_equal(ckpt.tensors[name], value)
            assert ckpt.tensors[name].dtype == value.dtype
        assert ckpt.config == {"name": "x"}
        assert ckpt.vocab == {"tokens": ["a"]}
        assert ckpt.trainer_state == {"epoch": 3}

    def test_header_is_one_json_line(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), {}, {"w": np.zeros(2, dtype=np.float32)})
        raw = path.read_bytes()
        assert raw.startswith(MAGIC)
        header_end = raw.index(b"\n", len(MAGIC))
        assert len(raw) - header_end - 1 == 8

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "none.ckpt"))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTPRPN\n{}\n")
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), {}, sample_tensors())
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(str(path), {}, sample_tensors())
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))

    def test_unreadable_header(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(MAGIC + b"{not json\n")
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))


class TestWriter:
    def test_flush_waits_for_writes(self, tmp_path):
        writer = CheckpointWriter()
        try:
            for name in ("a", "b"):
                writer.submit(str(tmp_path / f"{name}.ckpt"), config={}, tensors={"w": np.ones(3, dtype=np.float32)})
            writer.flush()
        finally:
            writer.close()
        assert load_checkpoint(str(tmp_path / "b.ckpt")).tensors["w"].tolist() == [1.0, 1.0, 1.0]

    def test_failed_write_surfaces(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        writer = CheckpointWriter()
        writer.submit(str(blocker / "model.ckpt"), config={}, tensors={})
        with pytest.raises(CheckpointError):
            writer.flush()
        writer.close()

import struct

import numpy as np
import pytest

from colorgan import tensor as T
from colorgan.checkpoint import MAGIC, CheckpointError, load_checkpoint, save_checkpoint
from colorgan.models import SpecMismatchError, generator_forward
from colorgan.tensor import Tensor
from colorgan.train import Trainer

from conftest import tiny_config


@pytest.fixture
def trained(tiny_dataset):
    tr = Trainer(tiny_config(), tiny_dataset)
    for _ in range(2):
        tr.iterate()
    return tr


def forward(trainer, seed=0):
    rng = np.random.default_rng(seed)
    y = Tensor(rng.random((4, 8, 8, 1)).astype(np.float32))
    z = Tensor(rng.normal(size=(4, 8)).astype(np.float32))
    with T.no_grad():
        return generator_forward(trainer.G, y, z, "eval").data


def test_round_trip_bit_identical(trained, tmp_path):
    path = save_checkpoint(trained, tmp_path / "a.ckpt")
    state = load_checkpoint(path)
    assert state.config == trained.config and state.iteration == 2
    np.testing.assert_array_equal(forward(state.trainer), forward(trained))
    for net_a, net_b in ((trained.G, state.generator), (trained.D, state.discriminator)):
        for k, t in {**net_a.parameters(), **net_a.buffers()}.items():
            other = {**net_b.parameters(), **net_b.buffers()}[k]
            assert other.data.tobytes() == t.data.tobytes()


def test_resave_is_byte_identical(trained, tmp_path):
    a = save_checkpoint(trained, tmp_path / "a.ckpt")
    b = save_checkpoint(load_checkpoint(a).trainer, tmp_path / "b.ckpt")
    assert a.read_bytes() == b.read_bytes()


def test_optimizer_state_restored(trained, tmp_path):
    state = load_checkpoint(save_checkpoint(trained, tmp_path / "a.ckpt"))
    assert state.trainer.opt_g.t == trained.opt_g.t == 2
    for name, m in trained.opt_d.m.items():
        np.testing.assert_array_equal(state.trainer.opt_d.m[name], m)
        np.testing.assert_array_equal(state.trainer.opt_d.v[name], trained.opt_d.v[name])


def test_resumed_training_matches(tiny_dataset, tmp_path):
    # the data sampler restarts on resume, so compare one step on a fixed batch
    a = Trainer(tiny_config(), tiny_dataset)
    a.iterate()
    b = load_checkpoint(save_checkpoint(a, tmp_path / "a.ckpt")).trainer
    batch = a.sampler.next()
    assert a.d_step(1, 0, batch) == b.d_step(1, 0, batch)
    assert a.g_step(1, 0, batch) == b.g_step(1, 0, batch)


def test_header_layout(trained, tmp_path):
    raw = save_checkpoint(trained, tmp_path / "a.ckpt").read_bytes()
    assert raw[:8] == MAGIC == b"CGANCKPT"
    assert struct.unpack("<I", raw[8:12])[0] == 1


def test_without_optimizer(trained, tmp_path):
    state = load_checkpoint(save_checkpoint(trained, tmp_path / "a.ckpt", with_optimizer=False))
    assert state.trainer.opt_g.t == 0
    np.testing.assert_array_equal(forward(state.trainer), forward(trained))


class TestCorruption:
    @pytest.fixture
    def raw(self, trained, tmp_path):
        return save_checkpoint(trained, tmp_path / "a.ckpt").read_bytes()

    def load(self, tmp_path, data):
        (tmp_path / "x.ckpt").write_bytes(data)
        return load_checkpoint(tmp_path / "x.ckpt")

    def test_bad_magic(self, raw, tmp_path):
        with pytest.raises(CheckpointError, match="magic"):
            self.load(tmp_path, b"NOTACKPT" + raw[8:])

    def test_bad_version(self, raw, tmp_path):
        with pytest.raises(CheckpointError, match="version 7"):
            self.load(tmp_path, raw[:8] + struct.pack("<I", 7) + raw[12:])

    @pytest.mark.parametrize("cut", [4, 10, 40, -3])
    def test_truncated(self, raw, tmp_path, cut):
        with pytest.raises(CheckpointError):
            self.load(tmp_path, raw[:cut])

    def test_trailing_bytes(self, raw, tmp_path):
        with pytest.raises(CheckpointError, match="trailing"):
            self.load(tmp_path, raw + b"\0")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.ckpt")

    def test_size_mismatch(self, raw, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(raw)
        with pytest.raises(SpecMismatchError):
            load_checkpoint(tmp_path / "x.ckpt", size=16)

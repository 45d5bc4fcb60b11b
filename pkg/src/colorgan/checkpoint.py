"""Binary checkpoint format.

Layout (little-endian)::

    8 bytes   magic b"CGANCKPT"
    u32       version
    u32 + n   config text (UTF-8 JSON: train config, iteration, optimizer steps)
    u32       tensor count
    per tensor:
      u32 + n   name (UTF-8)
      u32       rank
      u32 * r   extents
      u8        dtype tag (1 = float32)
      4 * size  raw float32 values
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import SpecMismatchError
from .train import Adam, TrainConfig, Trainer

MAGIC = b"CGANCKPT"
VERSION = 1
DTYPE_F32 = 1


class CheckpointError(ValueError):
    pass


def _named_tensors(trainer: Trainer, with_optimizer: bool = True) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for net in (trainer.G, trainer.D):
        out.update({k: t.data for k, t in net.parameters().items()})
        out.update({k: t.data for k, t in net.buffers().items()})
    if with_optimizer:
        out.update(trainer.opt_g.state_tensors("adam_g"))
        out.update(trainer.opt_d.state_tensors("adam_d"))
    return out


def save_checkpoint(trainer: Trainer, path, with_optimizer: bool = True) -> Path:
    path = Path(path)
    meta = {
        "config": trainer.config.to_dict(),
        "iteration": trainer.iteration,
        "adam_steps": {"g": trainer.opt_g.t, "d": trainer.opt_d.t},
        "has_optimizer": with_optimizer,
    }
    tensors = _named_tensors(trainer, with_optimizer)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    text = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks += [struct.pack("<I", len(text)), text, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        if arr.dtype != np.float32:
            raise CheckpointError(f"{name}: only float32 tensors are stored, got {arr.dtype}")
        raw = name.encode("utf-8")
        chunks += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim),
                   struct.pack(f"<{arr.ndim}I", *arr.shape), struct.pack("<B", DTYPE_F32),
                   arr.astype("<f4", copy=False).tobytes()]
    try:
        path.write_bytes(b"".join(chunks))
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot write checkpoint ({exc})") from exc
    return path


class _Reader:
    def __init__(self, buf: bytes, path: Path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


@dataclass
class CheckpointState:
    config: TrainConfig
    trainer: Trainer
    iteration: int

    @property
    def generator(self):
        return self.trainer.G

    @property
    def discriminator(self):
        return self.trainer.D


def load_checkpoint(path, size: int | None = None) -> CheckpointState:
    """Rebuild networks and optimizer state from ``path``.

    ``size`` optionally asserts the spatial size the caller intends to run at.
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    r = _Reader(buf, path)
    if r.take(8) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
        config = TrainConfig.from_dict(meta["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable config block ({exc})") from exc
    if size is not None and size != config.size:
        raise SpecMismatchError(f"{path}: checkpoint spec is {config.size}x{config.size}, requested {size}x{size}")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        tag = struct.unpack("<B", r.take(1))[0]
        if tag != DTYPE_F32:
            raise CheckpointError(f"{path}: tensor {name} has unknown dtype tag {tag}")
        count = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - r.pos} trailing bytes")

    trainer = Trainer(config)
    expected = _named_tensors(trainer, meta.get("has_optimizer", True))
    missing = set(expected) - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)[:5]}")
    for name, ref in expected.items():
        if tensors[name].shape != ref.shape:
            raise CheckpointError(f"{path}: tensor {name} has shape {tensors[name].shape}, network needs {ref.shape}")
    for net in (trainer.G, trainer.D):
        for k, t in {**net.parameters(), **net.buffers()}.items():
            t.data = tensors[k].copy()
    if meta.get("has_optimizer", True):
        _restore_adam(trainer.opt_g, tensors, "adam_g", meta["adam_steps"]["g"])
        _restore_adam(trainer.opt_d, tensors, "adam_d", meta["adam_steps"]["d"])
    trainer.iteration = int(meta["iteration"])
    return CheckpointState(config, trainer, trainer.iteration)


def _restore_adam(opt: Adam, tensors: dict, prefix: str, steps: int) -> None:
    for name in opt.params:
        opt.m[name] = tensors[f"{prefix}.m/{name}"].copy()
        opt.v[name] = tensors[f"{prefix}.v/{name}"].copy()
    opt.t = int(steps)

"""Alternating adversarial training with Adam, metrics logging and checkpoints."""

from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .data import DatasetHandle, ImageBatch, MinibatchSampler, sample_noise
from .models import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    combined_generator_objective,
    discriminator_logits,
    fake_to_model_rgb,
    generator_forward,
    loss_discriminator,
    loss_generator,
    loss_l1_gray,
)
from .tensor import Tensor

log = logging.getLogger(__name__)

METRIC_FIELDS = ("iter", "loss_d", "loss_g", "d_real_mean", "d_fake_mean", "l1_term")

DEFAULT_G_WIDTHS = {64: [64, 128, 256, 128, 64], 32: [32, 64, 64, 32, 16]}
DEFAULT_D_WIDTHS = [64, 128, 256, 512]
# narrower networks that train at s=32, m=64 in well under half an hour on one core
DESK_G_WIDTHS = [16, 32, 32, 16, 8]
DESK_D_WIDTHS = [32, 64, 128, 256]


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    k_d: int = 1
    k_g: int = 1
    m: int = 64
    z_dim: int = 100
    size: int = 64
    iterations: int = 500
    lam: float = 0.0
    mode: str = "YUV"
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_variant: str = "nonsaturating"
    noise_distribution: str = "normal"
    data_seed: int = 0
    noise_seed: int = 1
    init_seed: int = 2
    checkpoint_every: int = 100

    def validate(self) -> None:
        if self.k_d < 1 or self.k_g < 1:
            raise ValueError("k_d and k_g must be >= 1")
        if self.m < 2:
            raise ValueError("batch size m must be >= 2 for batch normalization")
        if self.mode not in ("YUV", "RGB"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        want = 2 if self.mode == "YUV" else 3
        if self.generator.out_channels != want:
            raise ValueError(f"{self.mode} mode needs {want} generator output channels")
        if self.generator.size != self.size or self.discriminator.size != self.size:
            raise ValueError("generator/discriminator spec size differs from config size")
        if self.generator.z_dim != self.z_dim:
            raise ValueError("generator spec z_dim differs from config z_dim")
        self.generator.validate()
        self.discriminator.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["generator"] = GeneratorSpec(**d["generator"])
        d["discriminator"] = DiscriminatorSpec(**d["discriminator"])
        return cls(**d)


def make_config(size: int = 32, mode: str = "YUV", *, noise_layers=(1, 2, 3), cond_layers=(1, 2, 3, 4, 5, 6),
                g_widths=None, d_widths=None, z_dim: int = 100, lam: float | None = None,
                noise_mode: str = "project", conditional_d: bool = False, **kw) -> TrainConfig:
    """Build a consistent config; ``g_widths`` lists the hidden widths only.

    ``lam`` defaults to 10 in RGB mode and 0 in YUV mode.
    """
    out = 2 if mode == "YUV" else 3
    hidden = list(g_widths) if g_widths is not None else DEFAULT_G_WIDTHS.get(size, DEFAULT_G_WIDTHS[32])
    gspec = GeneratorSpec(size=size, widths=hidden + [out], noise_layers=sorted(noise_layers),
                          cond_layers=sorted(cond_layers), z_dim=z_dim, noise_mode=noise_mode)
    dspec = DiscriminatorSpec(size=size, widths=list(d_widths or DEFAULT_D_WIDTHS), conditional=conditional_d)
    if lam is None:
        lam = 10.0 if mode == "RGB" else 0.0
    cfg = TrainConfig(size=size, mode=mode, generator=gspec, discriminator=dspec, z_dim=z_dim, lam=lam, **kw)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected adaptive-moment optimizer over a dict of named tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.shape:
                raise T.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            g = g.astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.dtype, copy=False)

    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"{prefix}.m/{name}"] = self.m[name]
            out[f"{prefix}.v/{name}"] = self.v[name]
        return out


def adam_step(params: dict[str, Tensor], state: Adam) -> None:
    """Apply one update to ``params`` using the gradients stored on them."""
    if params is not state.params and set(params) != set(state.params):
        raise T.ShapeError("parameter set does not match optimizer state")
    state.step()


@contextlib.contextmanager
def frozen(params: dict[str, Tensor]):
    """Temporarily stop recording gradients for ``params``."""
    saved = {k: p.requires_grad for k, p in params.items()}
    for p in params.values():
        p.requires_grad = False
    try:
        yield
    finally:
        for k, p in params.items():
            p.requires_grad = saved[k]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

class MetricsLog:
    """Comma-separated per-iteration records with a fixed header, flushed per write."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.path = Path(path) if path is not None else None
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w")
            self._fh.write(",".join(METRIC_FIELDS) + "\n")
            self._fh.flush()

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(",".join(repr(record[k]) for k in METRIC_FIELDS) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def log_metrics(log_: MetricsLog, it: int, loss_d: float, loss_g: float, d_real_mean: float,
                d_fake_mean: float, l1_term: float) -> dict:
    rec = dict(iter=it, loss_d=float(loss_d), loss_g=float(loss_g), d_real_mean=float(d_real_mean),
               d_fake_mean=float(d_fake_mean), l1_term=float(l1_term))
    log_.append(rec)
    return rec


def read_metrics(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if tuple(header) != METRIC_FIELDS:
        raise ValueError(f"{path}: unexpected metrics header {header}")
    out = []
    for line in lines[1:]:
        vals = line.split(",")
        rec = {k: float(v) for k, v in zip(header, vals)}
        rec["iter"] = int(rec["iter"])
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _check_finite(value: Tensor, what: str, it: int) -> None:
    if not T.all_finite(value):
        raise TrainingDivergedError(f"non-finite {what} at iteration {it}")


class Trainer:
    """Owns both networks, their optimizers and the batch stream."""

    def __init__(self, config: TrainConfig, dataset: DatasetHandle | None = None):
        config.validate()
        self.config = config
        self.G: Generator = build_generator(config.generator, seed=config.init_seed)
        self.D: Discriminator = build_discriminator(config.discriminator, seed=config.init_seed + 1)
        self.opt_g = Adam(self.G.parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
        self.opt_d = Adam(self.D.parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
        self.iteration = 0
        self.sampler = None
        if dataset is not None:
            self.attach(dataset)
        self.step_log: list[tuple[int, str, int]] = []

    def attach(self, dataset: DatasetHandle) -> None:
        if len(dataset) < self.config.m:
            raise ValueError(f"dataset has {len(dataset)} images, fewer than batch size {self.config.m}")
        if dataset.s != self.config.size:
            raise ValueError(f"dataset images are {dataset.s}px, config expects {self.config.size}px")
        self.sampler = MinibatchSampler(dataset, self.config.m, self.config.data_seed, self.config.mode)

    def noise(self, it: int, phase: int, k: int) -> np.ndarray:
        # phase 0 = discriminator loop, 1 = generator loop; never shared
        cfg = self.config
        return sample_noise(cfg.m, cfg.z_dim, (cfg.noise_seed, it, phase, k), cfg.noise_distribution)

    def _fake(self, y: Tensor, z: np.ndarray, bn_mode: str) -> tuple[Tensor, Tensor]:
        g_out = generator_forward(self.G, y, Tensor(z), bn_mode)
        return g_out, fake_to_model_rgb(y, g_out, self.config.mode)

    def d_step(self, it: int, k: int, batch: ImageBatch | None = None) -> dict:
        cfg = self.config
        z = self.noise(it, 0, k)
        batch = batch or self.sampler.next()
        y = Tensor(batch.gray)
        with T.no_grad():
            _, fake = self._fake(y, z, "batch")
        cond = y if cfg.discriminator.conditional else None
        self.opt_d.zero_grad()
        real_logits = discriminator_logits(self.D, Tensor(batch.color), cond, "train")
        fake_logits = discriminator_logits(self.D, fake, cond, "train")
        loss = loss_discriminator(real_logits, fake_logits)
        _check_finite(loss, "discriminator loss", it)
        loss.backward()
        self.opt_d.step()
        self.step_log.append((it, "D", k))
        return dict(loss_d=loss.item(), d_real_mean=float(T.sigmoid_array(real_logits.data).mean()),
                    d_fake_mean=float(T.sigmoid_array(fake_logits.data).mean()))

    def g_step(self, it: int, k: int, batch: ImageBatch | None = None) -> dict:
        cfg = self.config
        z = self.noise(it, 1, k)
        batch = batch or self.sampler.next()
        y = Tensor(batch.gray)
        self.opt_g.zero_grad()
        with frozen(self.D.parameters()):
            g_out, fake = self._fake(y, z, "train")
            cond = y if cfg.discriminator.conditional else None
            logits = discriminator_logits(self.D, fake, cond, "batch")
            loss_g = loss_generator(logits, cfg.loss_variant)
            l1 = None
            if cfg.mode == "RGB":
                display = T.scale(T.add(g_out, Tensor(np.array(1.0, dtype=g_out.dtype))), 0.5)
                l1 = loss_l1_gray(y, display, "RGB")
            total = combined_generator_objective(loss_g, l1, cfg.lam)
            _check_finite(total, "generator loss", it)
            # backward must run while D is still frozen or its leaves collect grads
            total.backward()
        self.opt_g.step()
        self.step_log.append((it, "G", k))
        return dict(loss_g=loss_g.item(), l1_term=0.0 if l1 is None else l1.item())

    def iterate(self) -> dict:
        """One outer iteration: k_D discriminator updates, then k_G generator updates."""
        it = self.iteration
        d_info = g_info = {}
        for k in range(self.config.k_d):
            d_info = self.d_step(it, k)
        for k in range(self.config.k_g):
            g_info = self.g_step(it, k)
        self.iteration += 1
        return {"iter": it, **d_info, **g_info}


@dataclass
class TrainResult:
    trainer: Trainer
    metrics: list[dict]
    checkpoints: list[Path]


def train(config: TrainConfig, dataset: DatasetHandle, *, iterations: int | None = None, out_dir=None,
          metrics_path=None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Run the alternating updates, logging every iteration.

    When ``out_dir`` is given, ``metrics.csv`` and checkpoints every
    ``config.checkpoint_every`` iterations (plus a final ``final.ckpt``) are
    written there.
    """
    from .checkpoint import save_checkpoint

    trainer = Trainer(config, dataset)
    iterations = config.iterations if iterations is None else iterations
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if metrics_path is None:
            metrics_path = out / "metrics.csv"
    mlog = MetricsLog(metrics_path)
    ckpts: list[Path] = []
    try:
        for _ in range(iterations):
            info = trainer.iterate()
            rec = log_metrics(mlog, info["iter"], info["loss_d"], info["loss_g"], info["d_real_mean"],
                              info["d_fake_mean"], info["l1_term"])
            if progress is not None:
                progress(rec)
            if out is not None and config.checkpoint_every and trainer.iteration % config.checkpoint_every == 0:
                p = out / f"iter_{trainer.iteration:06d}.ckpt"
                save_checkpoint(trainer, p)
                ckpts.append(p)
        if out is not None:
            p = out / "final.ckpt"
            save_checkpoint(trainer, p)
            ckpts.append(p)
    finally:
        mlog.close()
    return TrainResult(trainer, mlog.records, ckpts)


def window_mean(values, frac: float = 0.1) -> tuple[float, float]:
    """Mean of the first and last ``frac`` of a series."""
    values = list(values)
    n = max(1, int(math.ceil(len(values) * frac)))
    return float(np.mean(values[:n])), float(np.mean(values[-n:]))

"""Multi-round inference, diversity/realism evaluation and image grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .colorspace import gray_of, normalize
from .data import DatasetHandle, make_batch, sample_noise, save_png
from .models import (
    Discriminator,
    Generator,
    assemble_color,
    discriminator_forward,
    fake_to_model_rgb,
    generator_forward,
)
from .tensor import Tensor

GRID_SEPARATOR = 2


@dataclass
class ColorizationSet:
    """Results of ``k`` noise rounds over one batch, indexed [image, round]."""

    gray: np.ndarray  # [m, s, s, 1]
    raw: np.ndarray  # [m, k, s, s, C] generator output (model space)
    colors: np.ndarray  # [m, k, s, s, 3] display RGB
    mode: str
    round_seeds: list[tuple[int, int]]
    truth: np.ndarray | None = None  # [m, s, s, 3] display RGB
    source_ids: list[str] = field(default_factory=list)
    bn_mode: str = "batch"

    @property
    def m(self) -> int:
        return self.gray.shape[0]

    @property
    def k(self) -> int:
        return self.colors.shape[1]


def _round_noise(m: int, z_dim: int, round_seed, distribution: str = "normal") -> np.ndarray:
    return sample_noise(m, z_dim, round_seed, distribution)


def _is_homogeneous(gray: np.ndarray) -> bool:
    return bool(np.all(gray == gray[:1]))


def multi_round_colorize(generator: Generator, gray: np.ndarray, k_test: int = 4, seed: int = 0,
                         mode: str = "YUV", bn_mode: str = "batch", truth: np.ndarray | None = None,
                         strict: bool = False, source_ids=None,
                         noise_distribution: str = "normal") -> ColorizationSet:
    """Run ``k_test`` rounds over the same grayscale batch with fresh noise each round.

    Round ``j`` uses noise seeded by ``(seed, j)``.  Results are rearranged so
    that ``colors[i, j]`` is image ``i`` under round ``j``.
    """
    gray = np.asarray(gray, dtype=generator.dtype)
    m = gray.shape[0]
    if bn_mode != "eval" and m < 2:
        raise ValueError("batch-statistics inference needs at least 2 images per batch; "
                         "a single image cannot be normalized against itself")
    if strict and bn_mode != "eval" and _is_homogeneous(gray):
        raise ValueError("batch contains identical images; mix distinct images per batch")
    if k_test < 0:
        raise ValueError("k_test must be non-negative")
    z_dim = generator.spec.z_dim
    raws, seeds = [], []
    for j in range(k_test):
        rs = (seed, j)
        z = _round_noise(m, z_dim, rs, noise_distribution)
        with T.no_grad():
            out = generator_forward(generator, Tensor(gray), Tensor(z), bn_mode)
        raws.append(out.data)
        seeds.append(rs)
    s = gray.shape[1]
    c = generator.spec.out_channels
    raw = np.stack(raws, axis=1) if raws else np.zeros((m, 0, s, s, c), dtype=gray.dtype)
    colors = assemble_color(np.broadcast_to(gray[:, None], raw.shape[:-1] + (1,)), raw, mode) if k_test \
        else np.zeros((m, 0, s, s, 3))
    return ColorizationSet(gray, raw, colors, mode, seeds, truth, list(source_ids or []), bn_mode)


def regenerate(generator: Generator, cset: ColorizationSet, i: int, j: int,
               noise_distribution: str = "normal") -> np.ndarray:
    """Recompute ``cset.colors[i, j]`` from the recorded round-``j`` noise."""
    z = _round_noise(cset.m, generator.spec.z_dim, cset.round_seeds[j], noise_distribution)
    with T.no_grad():
        out = generator_forward(generator, Tensor(cset.gray), Tensor(z), cset.bn_mode)
    return assemble_color(cset.gray[i], out.data[i], cset.mode)


def diversity_score(cset: ColorizationSet) -> np.ndarray:
    """Per-image mean over pixels and channels of the cross-round standard deviation.

    Uses the generator's raw channels: (U, V) in YUV mode, model-space RGB in
    RGB mode.
    """
    if cset.k < 2:
        raise ValueError("diversity needs at least 2 rounds")
    return cset.raw.astype(np.float64).std(axis=1).mean(axis=(1, 2, 3))


def grayscale_consistency(cset: ColorizationSet) -> float:
    """Largest per-pixel |luma(generated) - input gray| in display range."""
    if cset.k == 0:
        return 0.0
    return float(np.abs(gray_of(cset.colors) - cset.gray[:, None].astype(np.float64)).max())


@dataclass
class Realism:
    fake_mean: float | None
    real_mean: float | None


def _as_scorer(discriminator, bn_mode: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if isinstance(discriminator, Discriminator):
        def score(x, y):
            cond = Tensor(y) if discriminator.spec.conditional else None
            with T.no_grad():
                return discriminator_forward(discriminator, Tensor(x.astype(discriminator.dtype)), cond, bn_mode).data
        return score
    return lambda x, y: np.asarray(discriminator(x))


def realism_score(discriminator, cset: ColorizationSet, bn_mode: str = "batch") -> Realism:
    """Mean discriminator probability on generated images, and on ground truth if present.

    ``discriminator`` is a :class:`Discriminator` or any callable mapping a
    model-range RGB batch [n,s,s,3] to probabilities.  Generated images are
    scored one round at a time so each batch holds distinct images.
    """
    score = _as_scorer(discriminator, bn_mode)
    fake = None
    if cset.k:
        vals = [score(normalize(cset.colors[:, j], "to_model", "RGB"), cset.gray) for j in range(cset.k)]
        fake = float(np.mean(vals))
    real = None
    if cset.truth is not None:
        real = float(np.mean(score(normalize(cset.truth, "to_model", "RGB"), cset.gray)))
    return Realism(fake, real)


def discriminator_accuracy(generator: Generator, discriminator: Discriminator, dataset: DatasetHandle,
                           mode: str, m: int, seed: int, batches: int = 4) -> float:
    """Balanced accuracy of D on held-out real batches vs. generated batches (threshold 0.5)."""
    rng = np.random.default_rng(seed)
    correct = total = 0
    for b in range(batches):
        idx = rng.choice(len(dataset), size=m, replace=False)
        batch = make_batch(dataset, idx, mode, generator.dtype)
        z = sample_noise(m, generator.spec.z_dim, (seed, 1000 + b))
        y = Tensor(batch.gray)
        cond = y if discriminator.spec.conditional else None
        with T.no_grad():
            fake = fake_to_model_rgb(y, generator_forward(generator, y, Tensor(z), "batch"), mode)
            p_real = discriminator_forward(discriminator, Tensor(batch.color), cond, "batch").data
            p_fake = discriminator_forward(discriminator, fake, cond, "batch").data
        correct += int((p_real > 0.5).sum() + (p_fake < 0.5).sum())
        total += 2 * m
    return correct / total


def emit_grid(cset: ColorizationSet, path=None, include_truth: bool = True) -> np.ndarray:
    """Composite one row per image (truth first when present) with 2-pixel white separators.

    Returns the 8-bit grid; writes a PNG when ``path`` is given.
    """
    tiles_per_row = []
    for i in range(cset.m):
        row = []
        if include_truth and cset.truth is not None:
            row.append(cset.truth[i])
        row.extend(cset.colors[i, j] for j in range(cset.k))
        tiles_per_row.append(row)
    cols = max(len(r) for r in tiles_per_row)
    if cols == 0:
        raise ValueError("nothing to draw")
    s = cset.gray.shape[1]
    sep = GRID_SEPARATOR
    height = cset.m * s + (cset.m - 1) * sep
    width = cols * s + (cols - 1) * sep
    grid = np.full((height, width, 3), 255, dtype=np.uint8)
    for r, row in enumerate(tiles_per_row):
        for c, tile in enumerate(row):
            y0, x0 = r * (s + sep), c * (s + sep)
            grid[y0:y0 + s, x0:x0 + s] = quantize(tile)
    if path is not None:
        try:
            save_png(path, grid / 255.0)
        except OSError as exc:
            raise OSError(f"{path}: cannot write grid ({exc})") from exc
    return grid


def quantize(rgb: np.ndarray) -> np.ndarray:
    """Display-range floats to 8-bit, as stored in PNG output."""
    return np.round(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)


@dataclass
class EvalReport:
    diversity: np.ndarray
    consistency_max: float
    realism_fake: float | None
    realism_real: float | None
    config: dict
    ids: list[str] = field(default_factory=list)

    @property
    def diversity_mean(self) -> float:
        return float(np.mean(self.diversity))

    def lines(self) -> list[str]:
        out = [
            f"images: {len(self.diversity)}",
            f"diversity_mean: {self.diversity_mean!r}",
            f"diversity_min: {float(np.min(self.diversity))!r}",
            f"grayscale_consistency_max: {self.consistency_max!r}",
            f"realism_fake_mean: {self.realism_fake!r}",
            f"realism_real_mean: {self.realism_real!r}",
        ]
        for i, d in enumerate(self.diversity):
            name = self.ids[i] if i < len(self.ids) else str(i)
            out.append(f"diversity[{name}]: {float(d)!r}")
        for k, v in sorted(_flatten(self.config).items()):
            out.append(f"config.{k}: {v}")
        return out

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text("\n".join(self.lines()) + "\n")
        return path


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def evaluate(generator: Generator, discriminator, cset: ColorizationSet, config: dict) -> EvalReport:
    real = realism_score(discriminator, cset)
    return EvalReport(diversity_score(cset), grayscale_consistency(cset), real.fake_mean, real.real_mean,
                      config, list(cset.source_ids))

"""Image ingestion, preprocessing, synthetic iso-gray data and batch sampling."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

from .colorspace import GRAY_WEIGHTS, gray_of, normalize, rgb_array, yuv_array

SUPPORTED_SUFFIXES = (".png", ".ppm")
DEFAULT_GRAY_LEVELS = (0.3, 0.45, 0.6, 0.75)


class ImageDecodeError(OSError):
    pass


# ---------------------------------------------------------------------------
# file I/O and preprocessing
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Decode a PNG or binary PPM file to float64 RGB in [0, 1], shape [H, W, 3]."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise ImageDecodeError(f"{path}: unsupported format {path.suffix!r} (PNG and PPM only)")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("RGB", "L", "RGBA", "P", "LA"):
                raise ImageDecodeError(f"{path}: unsupported pixel mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except ImageDecodeError:
        raise
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise ImageDecodeError(f"{path}: cannot decode image ({exc})") from exc
    return arr.astype(np.float64) / 255.0


def save_png(path, rgb: np.ndarray) -> None:
    """Write a [0, 1] RGB (or single channel) array as 8-bit PNG."""
    arr = np.asarray(rgb)
    q = np.round(np.clip(arr, 0.0, 1.0) * 255).astype(np.uint8)
    if q.ndim == 3 and q.shape[-1] == 1:
        q = q[..., 0]
    Image.fromarray(q).save(path, format="PNG")


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping."""
    h, w = img.shape[:2]

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = coords(out_h, h)
    x0, x1, fx = coords(out_w, w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def center_crop_box(h: int, w: int) -> tuple[int, int, int, int]:
    """(row0, row1, col0, col1) of the largest centered square."""
    side = min(h, w)
    r0 = (h - side) // 2
    c0 = (w - side) // 2
    return r0, r0 + side, c0, c0 + side


def center_crop_resize(img: np.ndarray, s: int) -> np.ndarray:
    h, w = img.shape[:2]
    r0, r1, c0, c1 = center_crop_box(h, w)
    crop = img[r0:r1, c0:c1]
    if crop.shape[0] == s:
        return crop.copy()
    return bilinear_resize(crop, s, s)


# ---------------------------------------------------------------------------
# iso-gray synthetic data
# ---------------------------------------------------------------------------

def iso_gray_palette(g0: float, n: int, seed: int, min_separation: float = 0.1,
                     max_tries: int = 20000) -> np.ndarray:
    """``n`` RGB triples in [0, 1]^3 whose luma equals ``g0``.

    The neutral gray (g0, g0, g0) is always the first entry; the rest are
    sampled on the iso-luma plane with pairwise distance >= ``min_separation``.
    """
    if not 0.0 < g0 < 1.0:
        raise ValueError(f"gray level must lie in (0, 1), got {g0}")
    rng = np.random.default_rng(seed)
    chosen = [np.array([g0, g0, g0])]
    tries = 0
    while len(chosen) < n:
        if tries >= max_tries:
            raise ValueError(f"gray level {g0} admits no {n} in-gamut colors {min_separation} apart")
        tries += 1
        r, b = rng.random(2)
        g = (g0 - GRAY_WEIGHTS[0] * r - GRAY_WEIGHTS[2] * b) / GRAY_WEIGHTS[1]
        if not 0.0 <= g <= 1.0:
            continue
        cand = np.array([r, g, b])
        if min(np.linalg.norm(cand - c) for c in chosen) >= min_separation:
            chosen.append(cand)
    return np.stack(chosen[:n])


@dataclass
class RegionRecord:
    box: tuple[int, int, int, int]  # row0, row1, col0, col1 (exclusive ends)
    level: int
    color: int


@dataclass
class SyntheticImage:
    index: int
    seed: int
    regions: list[RegionRecord]


def _image_seed(base: int, index: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([base, stream, index]).generate_state(1)[0])


# training sets stay far below this many images
HELDOUT_FIRST_INDEX = 1_000_000


@dataclass
class SyntheticSpec:
    gray_levels: tuple[float, ...] = DEFAULT_GRAY_LEVELS
    palette_size: int = 4
    min_rects: int = 2
    max_rects: int = 5


class DatasetHandle:
    """Indexed collection of RGB images at a fixed size ``s`` (display range)."""

    def __init__(self, images: np.ndarray, ids: list[str], s: int, seed: int = 0,
                 palettes: np.ndarray | None = None, records: list[SyntheticImage] | None = None,
                 spec: SyntheticSpec | None = None, root: str | None = None):
        self.images = images
        self.ids = ids
        self.s = s
        self.seed = seed
        self.palettes = palettes
        self.records = records
        self.spec = spec
        self.root = root

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, indices) -> "DatasetHandle":
        indices = list(indices)
        recs = None if self.records is None else [self.records[i] for i in indices]
        return DatasetHandle(self.images[indices], [self.ids[i] for i in indices], self.s, self.seed,
                             self.palettes, recs, self.spec, self.root)

    def manifest_lines(self) -> list[str]:
        if self.records is None:
            raise ValueError("manifest exists only for synthetic datasets")
        lines = []
        for name, rec in zip(self.ids, self.records):
            parts = []
            for reg in rec.regions:
                rgb = self.palettes[reg.level, reg.color]
                parts.append(
                    f"{reg.box[0]}:{reg.box[1]}:{reg.box[2]}:{reg.box[3]}"
                    f"@{self.spec.gray_levels[reg.level]!r}"
                    f"#{reg.color}=({rgb[0]!r},{rgb[1]!r},{rgb[2]!r})"
                )
            lines.append(f"{name}\t{rec.seed}\t" + " ".join(parts))
        return lines


def synth_isogray_dataset(count: int, s: int, seed: int, spec: SyntheticSpec | None = None,
                          first_index: int = 0) -> DatasetHandle:
    """Background plus 2-5 rectangles, each colored from its gray level's palette.

    Region 0 is the full-frame background.  Later rectangles paint over
    earlier ones.  Every region's luma is one of ``spec.gray_levels``, while
    its color is drawn uniformly from that level's iso-gray palette.

    Palettes depend only on ``seed``; image ``i`` of the set is image
    ``first_index + i`` of the seed's stream, so disjoint index ranges give
    disjoint images from one distribution.
    """
    if first_index < 0:
        raise ValueError("first_index must be >= 0")
    if count < 1:
        raise ValueError("count must be >= 1")
    spec = spec or SyntheticSpec()
    palettes = np.stack([
        iso_gray_palette(g, spec.palette_size, seed=_image_seed(seed, i, stream=1))
        for i, g in enumerate(spec.gray_levels)
    ])
    images = np.empty((count, s, s, 3))
    records = []
    min_side = max(2, s // 6)
    for idx in range(first_index, first_index + count):
        img_seed = _image_seed(seed, idx)
        rng = np.random.default_rng(img_seed)
        regions = [RegionRecord((0, s, 0, s), int(rng.integers(len(spec.gray_levels))),
                                int(rng.integers(spec.palette_size)))]
        for _ in range(int(rng.integers(spec.min_rects, spec.max_rects + 1))):
            h = int(rng.integers(min_side, s // 2 + 1))
            w = int(rng.integers(min_side, s // 2 + 1))
            r0 = int(rng.integers(0, s - h + 1))
            c0 = int(rng.integers(0, s - w + 1))
            regions.append(RegionRecord((r0, r0 + h, c0, c0 + w), int(rng.integers(len(spec.gray_levels))),
                                        int(rng.integers(spec.palette_size))))
        img = images[idx - first_index]
        for reg in regions:
            r0, r1, c0, c1 = reg.box
            img[r0:r1, c0:c1] = palettes[reg.level, reg.color]
        records.append(SyntheticImage(idx, img_seed, regions))
    ids = [f"synth_{i:06d}" for i in range(first_index, first_index + count)]
    return DatasetHandle(images, ids, s, seed, palettes, records, spec)


def synth_heldout(count: int, s: int, seed: int, spec: SyntheticSpec | None = None) -> DatasetHandle:
    """Images from the same palettes as ``synth_isogray_dataset(..., seed)`` that no training set reaches."""
    return synth_isogray_dataset(count, s, seed, spec, first_index=HELDOUT_FIRST_INDEX)


def write_synthetic(handle: DatasetHandle, out_dir) -> list[Path]:
    """Write each image as PNG plus a ``manifest.txt`` describing its regions."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for img, name in zip(handle.images, handle.ids):
        p = out / f"{name}.png"
        save_png(p, img)
        paths.append(p)
    header = (f"# synthetic iso-gray dataset seed={handle.seed} size={handle.s} count={len(handle)} "
              f"levels={list(handle.spec.gray_levels)} palette_size={handle.spec.palette_size}\n"
              "# id\tseed\tregions as row0:row1:col0:col1@gray#palette_index=(r,g,b)\n")
    (out / "manifest.txt").write_text(header + "\n".join(handle.manifest_lines()) + "\n")
    return paths


def load_directory(root, s: int, seed: int = 0) -> DatasetHandle:
    """Index a flat folder of .png/.ppm files lexicographically, preprocessing to s x s."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: not a directory")
    names = sorted(n for n in os.listdir(root) if Path(n).suffix.lower() in SUPPORTED_SUFFIXES)
    if not names:
        raise ValueError(f"{root}: no .png/.ppm images found")
    images = np.stack([center_crop_resize(load_image(root / n), s) for n in names])
    return DatasetHandle(images, [Path(n).stem for n in names], s, seed, root=str(root))


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass
class ImageBatch:
    """Model-normalized color images and their [0, 1] grayscale versions."""

    color: np.ndarray  # [m, s, s, 3], RGB in [-1, 1]
    gray: np.ndarray  # [m, s, s, 1], luma in [0, 1]
    display: np.ndarray  # [m, s, s, 3], RGB in [0, 1]
    space: str
    source_ids: list[str] = field(default_factory=list)
    indices: np.ndarray | None = None


def make_batch(handle: DatasetHandle, indices, space: str = "YUV", dtype=np.float32) -> ImageBatch:
    """Assemble a batch; YUV mode routes color through the YUV round trip first."""
    indices = np.asarray(indices)
    display = handle.images[indices]
    gray = gray_of(display)
    if space == "YUV":
        display_model = rgb_array(yuv_array(display), gamut="none")
    elif space == "RGB":
        display_model = display
    else:
        raise ValueError(f"unknown color space {space!r}")
    color = normalize(display_model, "to_model", "RGB")
    return ImageBatch(color.astype(dtype), gray.astype(dtype), display, space,
                      [handle.ids[i] for i in indices], indices)


class MinibatchSampler:
    """Uniform sampling without replacement; each epoch reshuffles with seed + epoch.

    A trailing partial batch is dropped.
    """

    def __init__(self, handle: DatasetHandle, m: int, seed: int, space: str = "YUV", dtype=np.float32):
        if len(handle) == 0:
            raise ValueError("dataset is empty")
        if m > len(handle):
            raise ValueError(f"batch size {m} exceeds dataset size {len(handle)}")
        self.handle, self.m, self.seed, self.space, self.dtype = handle, m, seed, space, dtype
        self.epoch = 0
        self._order = self._permutation(0)
        self._pos = 0

    def _permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng(self.seed + epoch).permutation(len(self.handle))

    def next_indices(self) -> np.ndarray:
        if self._pos + self.m > len(self._order):
            self.epoch += 1
            self._order = self._permutation(self.epoch)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.m]
        self._pos += self.m
        return idx

    def next(self) -> ImageBatch:
        return make_batch(self.handle, self.next_indices(), self.space, self.dtype)

    def __iter__(self) -> Iterator[ImageBatch]:
        while True:
            yield self.next()


def sample_minibatch(handle: DatasetHandle, m: int, seed: int, space: str = "YUV") -> ImageBatch:
    """First batch of the epoch-0 ordering for ``seed``."""
    return MinibatchSampler(handle, m, seed, space).next()


def sample_noise(m: int, s_z: int, seed, distribution: str = "normal", dtype=np.float32) -> np.ndarray:
    """``[m, s_z]`` i.i.d. noise; ``seed`` may be an int or a tuple of ints."""
    rng = np.random.default_rng(seed)
    if distribution == "normal":
        z = rng.standard_normal((m, s_z))
    elif distribution == "uniform":
        z = rng.uniform(-1.0, 1.0, (m, s_z))
    else:
        raise ValueError(f"unknown noise distribution {distribution!r}")
    return z.astype(dtype)

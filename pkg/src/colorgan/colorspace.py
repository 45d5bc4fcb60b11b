"""Grayscale and YUV/RGB conversions.

Luma uses the 0.299/0.587/0.114 weights.  Chroma follows analog YUV,
``U = 0.492 (B - Y)`` and ``V = 0.877 (R - Y)``, rescaled by 1/0.436 and
1/0.615 so both chroma channels span [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
U_GAIN, V_GAIN = 0.492, 0.877
U_MAX, V_MAX = 0.436, 0.615

# rows give (Y, U, V) from (R, G, B)
RGB_TO_YUV = np.array([
    GRAY_WEIGHTS,
    U_GAIN / U_MAX * (np.array([0.0, 0.0, 1.0]) - GRAY_WEIGHTS),
    V_GAIN / V_MAX * (np.array([1.0, 0.0, 0.0]) - GRAY_WEIGHTS),
])

# closed-form inverse: R = Y + V'/0.877, B = Y + U'/0.492, G from the luma identity
_R = np.array([1.0, 0.0, V_MAX / V_GAIN])
_B = np.array([1.0, U_MAX / U_GAIN, 0.0])
_G = (np.array([1.0, 0.0, 0.0]) - GRAY_WEIGHTS[0] * _R - GRAY_WEIGHTS[2] * _B) / GRAY_WEIGHTS[1]
YUV_TO_RGB = np.stack([_R, _G, _B])


class ColorSpaceError(ValueError):
    pass


@dataclass
class ColorImage:
    """Pixels ``[..., H, W, 3]`` tagged with their color space (RGB or YUV)."""

    pixels: np.ndarray
    space: str = "RGB"

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.space not in ("RGB", "YUV"):
            raise ColorSpaceError(f"unknown color space {self.space!r}")
        if self.pixels.shape[-1] != 3:
            raise ColorSpaceError(f"color image needs 3 channels, got shape {self.pixels.shape}")


def _expect(img: ColorImage, space: str) -> np.ndarray:
    if not isinstance(img, ColorImage):
        raise ColorSpaceError(f"expected a ColorImage in {space}, got {type(img).__name__}")
    if img.space != space:
        raise ColorSpaceError(f"expected {space} input, got {img.space}")
    return img.pixels


def gray_of(rgb: np.ndarray) -> np.ndarray:
    """Luma of an RGB array, keeping a trailing channel axis of size 1."""
    rgb = np.asarray(rgb)
    # integer weights over 1000 make white map to exactly 1.0
    return ((299 * rgb[..., 0:1] + 587 * rgb[..., 1:2] + 114 * rgb[..., 2:3]) / 1000).astype(rgb.dtype)


def rgb_to_gray(img: ColorImage) -> np.ndarray:
    return gray_of(_expect(img, "RGB"))


def yuv_array(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    yuv = rgb @ RGB_TO_YUV.T
    yuv[..., 0:1] = gray_of(rgb)
    return yuv


def rgb_array(yuv: np.ndarray, gamut: str = "clip") -> np.ndarray:
    """Invert :func:`yuv_array`.

    ``gamut`` handles results outside [0, 1]: ``"clip"`` clamps each channel,
    ``"desaturate"`` shrinks chroma toward the gray axis until the pixel is in
    gamut (luma is preserved exactly), ``"none"`` leaves values untouched.
    """
    yuv = np.asarray(yuv, dtype=np.float64)
    if gamut == "desaturate":
        y = np.clip(yuv[..., 0:1], 0.0, 1.0)
        delta = yuv[..., 1:] @ YUV_TO_RGB[:, 1:].T
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            limit = np.where(delta > 0, (1.0 - y) / delta, np.where(delta < 0, -y / delta, np.inf))
        t = np.minimum(1.0, limit.min(axis=-1, keepdims=True))
        return np.clip(y + t * delta, 0.0, 1.0)
    rgb = yuv @ YUV_TO_RGB.T
    if gamut == "clip":
        return np.clip(rgb, 0.0, 1.0)
    if gamut == "none":
        return rgb
    raise ValueError(f"unknown gamut handling {gamut!r}")


def rgb_to_yuv(img: ColorImage) -> ColorImage:
    return ColorImage(np.clip(yuv_array(_expect(img, "RGB")), [0, -1, -1], [1, 1, 1]), "YUV")


def yuv_to_rgb(img: ColorImage, gamut: str = "clip") -> ColorImage:
    return ColorImage(rgb_array(_expect(img, "YUV"), gamut), "RGB")


def normalize(values: np.ndarray, direction: str, space: str = "RGB") -> np.ndarray:
    """Map between display ranges and model ranges.

    RGB channels go [0, 1] <-> [-1, 1].  For YUV the Y channel stays in
    [0, 1] and U, V are already in [-1, 1], so only clamping applies.
    """
    values = np.asarray(values)
    if space == "RGB":
        if direction == "to_model":
            return values * 2 - 1
        if direction == "to_display":
            return np.clip((values + 1) / 2, 0.0, 1.0)
    elif space == "YUV":
        if direction == "to_model":
            return values.copy()
        if direction == "to_display":
            return np.clip(values, [0, -1, -1], [1, 1, 1])
    else:
        raise ColorSpaceError(f"unknown color space {space!r}")
    raise ValueError(f"unknown direction {direction!r}")


# -- differentiable variants used inside the training graph ------------------

def gray_tensor(rgb: Tensor) -> Tensor:
    """Luma of an ``[N,H,W,3]`` tensor as ``[N,H,W,1]``."""
    n, h, w, _ = rgb.shape
    weights = Tensor(GRAY_WEIGHTS.reshape(3, 1), dtype=rgb.dtype)
    return T.reshape(T.matmul(T.reshape(rgb, (n * h * w, 3)), weights), (n, h, w, 1))


def yuv_to_rgb_tensor(y: Tensor, uv: Tensor) -> Tensor:
    """Unclamped RGB in display range from Y in [0, 1] and U, V in [-1, 1]."""
    yuv = T.concat_channels([y, uv])
    n, h, w, _ = yuv.shape
    m = Tensor(YUV_TO_RGB.T, dtype=yuv.dtype)
    return T.reshape(T.matmul(T.reshape(yuv, (n * h * w, 3)), m), (n, h, w, 3))

"""Random color and locally varying shading corruptions.

The color transform chains brightness, contrast, hue and saturation (applied
in that order).  The shading transform blends two independently
color-transformed copies of an image through a smooth random mixing mask and
clamps the result to ``[0, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_core import ContractError, SeededRng, as_image, hsv_to_rgb, interp_matrix, rgb_to_hsv

__all__ = [
    "ColorParams",
    "ColorRanges",
    "ShadingRecord",
    "brightness_adjust",
    "contrast_adjust",
    "hue_adjust",
    "saturation_adjust",
    "color_transform",
    "sample_color_params",
    "make_mixing_mask",
    "upsample_control",
    "shading_transform",
    "sample_shading",
    "MIX_GRID",
]

MIX_GRID = 10


@dataclass(frozen=True)
class ColorParams:
    k1: float = 1.0
    delta1: float = 0.0
    lam: tuple[float, float, float] = (1.0, 1.0, 1.0)
    delta2: float = 0.0

    @classmethod
    def identity(cls) -> "ColorParams":
        return cls()

    def to_dict(self) -> dict:
        return {"k1": self.k1, "delta1": self.delta1, "lambda": list(self.lam), "delta2": self.delta2}

    @classmethod
    def from_dict(cls, d: dict) -> "ColorParams":
        return cls(float(d["k1"]), float(d["delta1"]), tuple(float(v) for v in d["lambda"]), float(d["delta2"]))


@dataclass(frozen=True)
class ColorRanges:
    """Uniform sampling ranges for :class:`ColorParams`.

    Setting every range to a single point (see :meth:`identity`) turns the
    shading corruption off.
    """

    saturation: tuple[float, float] = (0.5, 1.5)
    hue: tuple[float, float] = (-0.5, 0.5)
    contrast: tuple[float, float] = (0.5, 1.5)
    brightness: tuple[float, float] = (-0.5, 0.5)

    @classmethod
    def identity(cls) -> "ColorRanges":
        return cls((1.0, 1.0), (0.0, 0.0), (1.0, 1.0), (0.0, 0.0))


def brightness_adjust(img, delta2: float) -> np.ndarray:
    return as_image(img, channels=3) + delta2


def contrast_adjust(img, lam) -> np.ndarray:
    """Scale each channel's deviation from its own image-wide mean."""
    arr = as_image(img, channels=3)
    lam = np.asarray(lam, dtype=arr.dtype).reshape(3)
    mean = arr.mean(axis=(0, 1))
    return (arr - mean) * lam + mean


def hue_adjust(img, delta1: float) -> np.ndarray:
    # inputs may leave [0, 1] after brightness/contrast; HSV needs the clamp
    hsv = rgb_to_hsv(np.clip(as_image(img, channels=3), 0.0, 1.0))
    hsv[..., 0] = np.mod(hsv[..., 0] + delta1, 1.0)
    return hsv_to_rgb(hsv)


def saturation_adjust(img, k1: float) -> np.ndarray:
    hsv = rgb_to_hsv(np.clip(as_image(img, channels=3), 0.0, 1.0))
    hsv[..., 1] = np.minimum(hsv[..., 1] * k1, 1.0)
    return hsv_to_rgb(hsv)


def color_transform(img, p: ColorParams) -> np.ndarray:
    """Brightness, then contrast, then hue, then saturation.  Not clamped."""
    out = brightness_adjust(img, p.delta2)
    out = contrast_adjust(out, p.lam)
    out = hue_adjust(out, p.delta1)
    return saturation_adjust(out, p.k1)


def sample_color_params(rng: SeededRng, ranges: ColorRanges = ColorRanges()) -> ColorParams:
    k1 = float(rng.uniform(*ranges.saturation))
    delta1 = float(rng.uniform(*ranges.hue))
    lam = tuple(float(rng.uniform(*ranges.contrast)) for _ in range(3))
    delta2 = float(rng.uniform(*ranges.brightness))
    return ColorParams(k1, delta1, lam, delta2)


def upsample_control(control, h: int, w: int) -> np.ndarray:
    """Bilinearly stretch a control grid so its corner samples land on the image corners."""
    control = np.asarray(control, dtype=np.float64)
    ry = interp_matrix(control.shape[0], h, align_corners=True)
    rx = interp_matrix(control.shape[1], w, align_corners=True)
    return (ry @ control @ rx.T)[..., None]


def make_mixing_mask(rng: SeededRng, h: int, w: int, control=None) -> tuple[np.ndarray, np.ndarray]:
    """Salt-and-pepper 10x10 grid upsampled to ``(h, w, 1)``.

    Returns ``(mask, control)``.  Pass ``control`` to replay a recorded grid.
    """
    if h < MIX_GRID or w < MIX_GRID:
        raise ContractError(f"mixing mask needs at least {MIX_GRID}x{MIX_GRID}, got {h}x{w}")
    if control is None:
        control = rng.bernoulli(0.5, (MIX_GRID, MIX_GRID))
    mask = np.clip(upsample_control(control, h, w), 0.0, 1.0)
    return mask, np.asarray(control, dtype=np.float64)


@dataclass
class ShadingRecord:
    params_a: ColorParams
    params_b: ColorParams
    control: np.ndarray
    mixing_mask: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "params_a": self.params_a.to_dict(),
            "params_b": self.params_b.to_dict(),
            "control": self.control.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, h: int, w: int) -> "ShadingRecord":
        control = np.asarray(d["control"], dtype=np.float64)
        mask, _ = make_mixing_mask(None, h, w, control=control)
        return cls(ColorParams.from_dict(d["params_a"]), ColorParams.from_dict(d["params_b"]), control, mask)


def sample_shading(rng: SeededRng, h: int, w: int, mode: str = "local", ranges: ColorRanges = ColorRanges()) -> ShadingRecord:
    """Draw a shading record.  ``global`` mode uses one color transform everywhere."""
    if mode not in ("local", "global"):
        raise ContractError(f"unknown shading mode {mode!r}")
    params_a = sample_color_params(rng, ranges)
    if mode == "global":
        control = np.ones((MIX_GRID, MIX_GRID))
        mask, control = make_mixing_mask(rng, h, w, control=control)
        return ShadingRecord(params_a, params_a, control, mask)
    params_b = sample_color_params(rng, ranges)
    mask, control = make_mixing_mask(rng, h, w)
    return ShadingRecord(params_a, params_b, control, mask)


def shading_transform(img, rec: ShadingRecord) -> np.ndarray:
    arr = as_image(img, channels=3)
    mix = np.asarray(rec.mixing_mask)
    if mix.shape[:2] != arr.shape[:2]:
        raise ContractError(f"mixing mask {mix.shape[:2]} does not match image {arr.shape[:2]}")
    first = color_transform(arr, rec.params_a)
    second = color_transform(arr, rec.params_b)
    return np.clip(first * mix + second * (1.0 - mix), 0.0, 1.0)

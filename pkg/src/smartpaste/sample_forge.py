"""Self-supervised training pairs from unlabeled images.

A sample is built from one crop ``I``: the crop is corrupted by
``T = shading o geometric`` and pasted back inside a random rotated
rectangle ``M``, giving the network input ``X = (I(1-M) + T(I)M, M)`` with
``I`` itself as ground truth.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .geometric import Homography, geometric_transform, warp_image
from .photometric import ColorRanges, ShadingRecord, sample_shading, shading_transform
from .tensor_core import ContractError, SeededRng, as_image, read_image, resize_image, write_image

log = logging.getLogger(__name__)

__all__ = [
    "CorpusError",
    "Corpus",
    "load_corpus",
    "random_crop",
    "MaskConfig",
    "MaskSpec",
    "sample_mask_spec",
    "render_mask",
    "sample_mask",
    "ForgeConfig",
    "TransformRecord",
    "apply_full_transform",
    "replay_transform",
    "TrainingSample",
    "forge_sample",
    "forge_batch",
    "write_sample",
]

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


class CorpusError(ValueError):
    """No usable images, or an image too small for the requested crop."""


# ---------------------------------------------------------------------------
# corpus


class Corpus:
    """Lexicographically ordered list of image files, decoded on access."""

    def __init__(self, paths, target_size: int | None = None):
        self.paths = list(paths)
        self.target_size = target_size

    def __len__(self):
        return len(self.paths)

    def __getitem__(self, index: int) -> np.ndarray:
        img = read_image(self.paths[index])
        if img.shape[-1] == 1:
            img = np.repeat(img, 3, axis=-1)
        img = img[..., :3]
        if self.target_size is not None:
            h, w = img.shape[:2]
            scale = self.target_size / min(h, w)
            img = resize_image(img, max(1, round(h * scale)), max(1, round(w * scale)))
        return img


def load_corpus(directory, target_size: int | None = None) -> Corpus:
    """Index every decodable image in ``directory``.

    ``target_size`` rescales each image so its shorter side has that many
    pixels (a 1024x2048 image with ``target_size=512`` becomes 512x1024).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError(f"corpus directory {directory} does not exist")
    candidates = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    good = []
    for p in candidates:
        try:
            with Image.open(p) as im:
                im.verify()
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            log.warning("skipping undecodable image %s: %s", p, exc)
            continue
        good.append(p)
    if not good:
        raise CorpusError(f"no decodable images in {directory}")
    return Corpus(good, target_size)


def random_crop(img, size: int, rng: SeededRng) -> np.ndarray:
    arr = as_image(img)
    h, w = arr.shape[:2]
    if h < size or w < size:
        raise CorpusError(f"image {h}x{w} is smaller than crop {size}")
    y = rng.integers(0, h - size)
    x = rng.integers(0, w - size)
    return arr[y:y + size, x:x + size].copy()


# ---------------------------------------------------------------------------
# masks


@dataclass(frozen=True)
class MaskConfig:
    area: tuple[float, float] = (0.02, 0.30)  # fraction of the canvas
    aspect: tuple[float, float] = (0.5, 2.0)  # width / height of the rectangle
    rotation: tuple[float, float] = (0.0, math.pi)

    def validate(self):
        lo, hi = self.area
        if not (0.0 < lo <= hi <= 1.0):
            raise ContractError(f"mask area range {self.area} must lie in (0, 1]")
        if not (0.0 < self.aspect[0] <= self.aspect[1]):
            raise ContractError(f"bad aspect range {self.aspect}")
        if self.rotation[0] > self.rotation[1]:
            raise ContractError(f"bad rotation range {self.rotation}")


@dataclass(frozen=True)
class MaskSpec:
    center: tuple[float, float]
    half_extents: tuple[float, float]
    rotation: float

    def to_dict(self) -> dict:
        return {"center": list(self.center), "half_extents": list(self.half_extents), "rotation": self.rotation}

    @classmethod
    def from_dict(cls, d: dict) -> "MaskSpec":
        return cls(tuple(d["center"]), tuple(d["half_extents"]), float(d["rotation"]))


def sample_mask_spec(rng: SeededRng, h: int, w: int, cfg: MaskConfig = MaskConfig()) -> MaskSpec:
    cfg.validate()
    frac = float(rng.uniform(*cfg.area))
    aspect = float(rng.uniform(*cfg.aspect))
    theta = float(rng.uniform(*cfg.rotation))
    area = frac * h * w
    hw = math.sqrt(area * aspect) / 2.0
    hh = math.sqrt(area / aspect) / 2.0
    c, s = abs(math.cos(theta)), abs(math.sin(theta))
    # bounding box of the rotated rectangle; shrink only if it cannot fit at all
    ex, ey = hw * c + hh * s, hw * s + hh * c
    shrink = min(1.0, (w - 1) / 2.0 / ex if ex > 0 else 1.0, (h - 1) / 2.0 / ey if ey > 0 else 1.0)
    hw, hh, ex, ey = hw * shrink, hh * shrink, ex * shrink, ey * shrink
    cx = float(rng.uniform(ex, w - 1 - ex))
    cy = float(rng.uniform(ey, h - 1 - ey))
    return MaskSpec((cx, cy), (hw, hh), theta)


def render_mask(spec: MaskSpec, h: int, w: int) -> np.ndarray:
    """Rasterize a rotated rectangle by per-pixel containment; ``(h, w, 1)`` in ``{0, 1}``."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - spec.center[0], ys - spec.center[1]
    c, s = math.cos(spec.rotation), math.sin(spec.rotation)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    eps = 1e-9
    inside = (np.abs(u) <= spec.half_extents[0] + eps) & (np.abs(v) <= spec.half_extents[1] + eps)
    if not inside.any():
        cy = min(max(int(round(spec.center[1])), 0), h - 1)
        cx = min(max(int(round(spec.center[0])), 0), w - 1)
        inside[cy, cx] = True
    return inside.astype(np.float64)[..., None]


def sample_mask(rng: SeededRng, h: int, w: int, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    return render_mask(sample_mask_spec(rng, h, w, cfg), h, w)


# ---------------------------------------------------------------------------
# full transform


@dataclass(frozen=True)
class ForgeConfig:
    crop: int = 64
    sigma: float = 15.0
    shading_mode: str = "local"
    color: ColorRanges = field(default_factory=ColorRanges)
    mask: MaskConfig = field(default_factory=MaskConfig)
    fixed_mask: bool = False  # draw every mask from one shared stream

    def identity(self) -> "ForgeConfig":
        """Same config with the corruption disabled (sigma 0, identity shading)."""
        return replace(self, sigma=0.0, color=ColorRanges.identity())


@dataclass
class TransformRecord:
    shading: ShadingRecord
    homography: Homography
    sigma: float
    shading_mode: str

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "shading_mode": self.shading_mode,
            "homography": self.homography.to_list(),
            "shading": self.shading.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, h: int, w: int) -> "TransformRecord":
        return cls(
            ShadingRecord.from_dict(d["shading"], h, w),
            Homography.from_list(d["homography"]),
            float(d["sigma"]),
            d["shading_mode"],
        )


def replay_transform(img, rec: TransformRecord) -> np.ndarray:
    return shading_transform(warp_image(img, rec.homography), rec.shading)


def apply_full_transform(img, cfg: ForgeConfig, rng: SeededRng) -> tuple[np.ndarray, TransformRecord]:
    """Geometric corruption first, then shading."""
    arr = as_image(img, channels=3)
    h, w = arr.shape[:2]
    warped, hom = geometric_transform(arr, cfg.sigma, rng.child("geometric"))
    shading = sample_shading(rng.child("shading"), h, w, cfg.shading_mode, cfg.color)
    rec = TransformRecord(shading, hom, float(cfg.sigma), cfg.shading_mode)
    return shading_transform(warped, shading), rec


# ---------------------------------------------------------------------------
# samples


@dataclass
class TrainingSample:
    ground_truth: np.ndarray  # (H, W, 3)
    input: np.ndarray  # (H, W, 4): composite + mask channel
    mask: np.ndarray  # (H, W, 1)
    transform: TransformRecord
    mask_spec: MaskSpec

    def record(self) -> dict:
        return {"transform": self.transform.to_dict(), "mask": self.mask_spec.to_dict()}


def assemble_input(ground_truth, transformed, mask) -> np.ndarray:
    composite = ground_truth * (1.0 - mask) + transformed * mask
    return np.concatenate([composite, mask], axis=-1)


def forge_sample(corpus: Corpus, index: int, cfg: ForgeConfig, rng: SeededRng) -> TrainingSample:
    """Crop, corrupt, mask and assemble one sample.

    All randomness comes from child streams of ``rng`` so a sample depends
    only on ``(seed, stream)``; with ``cfg.fixed_mask`` the mask stream is
    shared by every sample under the same seed.
    """
    if not 0 <= index < len(corpus):
        raise IndexError(f"corpus index {index} out of range (size {len(corpus)})")
    crop = random_crop(corpus[index], cfg.crop, rng.child("crop"))
    transformed, rec = apply_full_transform(crop, cfg, rng.child("transform"))
    mask_rng = SeededRng(rng.seed, "fixed-mask") if cfg.fixed_mask else rng.child("mask")
    spec = sample_mask_spec(mask_rng, cfg.crop, cfg.crop, cfg.mask)
    mask = render_mask(spec, cfg.crop, cfg.crop)
    return TrainingSample(crop, assemble_input(crop, transformed, mask), mask, rec, spec)


def forge_batch(corpus: Corpus, cfg: ForgeConfig, seed: int, sample_ids) -> list[TrainingSample]:
    """Samples for the given global ids; sample ``k`` uses stream ``k`` and image ``k % len(corpus)``."""
    return [forge_sample(corpus, k % len(corpus), cfg, SeededRng(seed, ("sample", k))) for k in sample_ids]


def write_sample(out_dir, sample_id: str, sample: TrainingSample) -> list[Path]:
    out_dir = Path(out_dir)
    paths = [
        out_dir / f"{sample_id}_gt.png",
        out_dir / f"{sample_id}_input.png",
        out_dir / f"{sample_id}_mask.png",
        out_dir / f"{sample_id}_record.json",
    ]
    write_image(paths[0], sample.ground_truth)
    write_image(paths[1], sample.input[..., :3])
    write_image(paths[2], sample.mask)
    tmp = paths[3].with_name("." + paths[3].name + ".tmp")
    tmp.write_text(json.dumps(sample.record(), indent=1, sort_keys=True) + "\n")
    tmp.replace(paths[3])
    return paths

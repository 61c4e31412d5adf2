"""Dense image arrays, seedable random streams, color conversion and PNG I/O.

Images are plain ``numpy`` arrays of shape ``(height, width, channels)`` with
real values nominally in ``[0, 1]``.  Batched arrays used by the networks add a
leading batch axis (``NHWC``).
"""
from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "ContractError",
    "SeededRng",
    "as_image",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "draw_uniform",
    "draw_gaussian_image",
    "interp_matrix",
    "resize_image",
    "read_image",
    "read_mask",
    "write_image",
]


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""


def as_image(img, channels=None) -> np.ndarray:
    """Validate ``img`` as an ``(H, W, C)`` array and return it as floats."""
    arr = np.asarray(img)
    if arr.ndim != 3:
        raise ContractError(f"expected an (H, W, C) image, got shape {arr.shape}")
    h, w, c = arr.shape
    if h < 1 or w < 1:
        raise ContractError(f"image must be at least 1x1, got {h}x{w}")
    if channels is not None and c != channels:
        raise ContractError(f"expected {channels} channels, got {c}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


# ---------------------------------------------------------------------------
# random streams


def _stream_key(stream) -> tuple[int, ...]:
    if isinstance(stream, (tuple, list)):
        return tuple(k for part in stream for k in _stream_key(part))
    if isinstance(stream, str):
        digest = hashlib.sha256(stream.encode("utf-8")).digest()
        return (int.from_bytes(digest[:8], "little"),)
    return (int(stream) % 2**64,)


class SeededRng:
    """Counter-based random stream keyed by ``(global_seed, stream_id)``.

    ``stream_id`` may be an integer (e.g. a sample index), a string naming a
    stream, or a tuple of those.  Streams with different ids are independent
    Philox keys, so any sample can be regenerated without replaying others.
    """

    def __init__(self, seed: int, stream=0):
        self.seed = int(seed) % 2**64
        self.stream = _stream_key(stream)
        entropy = [self.seed, *self.stream]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def child(self, stream) -> "SeededRng":
        """A new independent stream nested under this one."""
        return SeededRng(self.seed, (self.stream, _stream_key(stream)))

    def uniform(self, a: float, b: float, size=None):
        if a > b:
            raise ContractError(f"empty interval [{a}, {b})")
        u = self._gen.random(size)
        return a + (b - a) * u

    def normal(self, size):
        return self._gen.standard_normal(size)

    def bernoulli(self, p: float, size):
        return (self._gen.random(size) < p).astype(np.float64)

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in ``[low, high]`` inclusive."""
        return int(self._gen.integers(low, high, endpoint=True))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"


def draw_uniform(rng: SeededRng, a: float, b: float) -> float:
    return float(rng.uniform(a, b))


def draw_gaussian_image(rng: SeededRng, h: int, w: int) -> np.ndarray:
    """i.i.d. standard normal single-channel image of shape ``(h, w, 1)``."""
    if h < 1 or w < 1:
        raise ContractError(f"noise image must be at least 1x1, got {h}x{w}")
    return rng.normal((h, w, 1))


# ---------------------------------------------------------------------------
# color


def rgb_to_hsv(img) -> np.ndarray:
    """Hexcone RGB -> HSV with all three channels in ``[0, 1]`` (hue in ``[0, 1)``)."""
    rgb = as_image(img, channels=3)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    safe_c = np.where(c > 0, c, 1.0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)

    h = np.where(
        v == r,
        np.mod((g - b) / safe_c, 6.0),
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(c > 0, h / 6.0, 0.0)
    # mod(-tiny, 6)/6 can round to exactly 1.0
    h = np.where(h >= 1.0, 0.0, h)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(img) -> np.ndarray:
    """Inverse of :func:`rgb_to_hsv`; hue wraps modulo 1, S and V are clamped."""
    hsv = as_image(img, channels=3)
    h = np.mod(hsv[..., 0], 1.0)
    s = np.clip(hsv[..., 1], 0.0, 1.0)
    v = np.clip(hsv[..., 2], 0.0, 1.0)

    h6 = h * 6.0
    sector = np.floor(h6)
    f = h6 - sector
    sector = sector.astype(np.int64) % 6
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))

    r = np.choose(sector, [v, q, p, p, t, v])
    g = np.choose(sector, [t, v, v, q, p, p])
    b = np.choose(sector, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


# ---------------------------------------------------------------------------
# resampling


def interp_matrix(n_in: int, n_out: int, align_corners: bool = False, lo: int = 0, hi: int | None = None) -> np.ndarray:
    """Linear-interpolation weights mapping ``n_in`` samples onto ``n_out``.

    Returns an ``(n_out, n_in)`` matrix whose rows are convex combinations of
    at most two neighbouring inputs.  ``lo:hi`` restricts the source to a
    window (used for crop-and-resize); samples outside it clamp to its edge.
    """
    hi = n_in if hi is None else hi
    span = hi - lo
    if span < 1 or n_out < 1:
        raise ContractError(f"cannot resample {span} samples onto {n_out}")
    i = np.arange(n_out, dtype=np.float64)
    if align_corners:
        src = i * (span - 1) / (n_out - 1) if n_out > 1 else np.zeros(1)
    else:
        src = (i + 0.5) * span / n_out - 0.5
    src = np.clip(src, 0.0, span - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, span - 1)
    frac = src - i0
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo + i0), 1.0 - frac)
    np.add.at(mat, (rows, lo + i1), frac)
    return mat


def resize_image(img, h: int, w: int, align_corners: bool = False) -> np.ndarray:
    """Bilinear resize of an ``(H, W, C)`` image to ``(h, w, C)``."""
    arr = as_image(img)
    ry = interp_matrix(arr.shape[0], h, align_corners)
    rx = interp_matrix(arr.shape[1], w, align_corners)
    out = np.tensordot(ry, arr, axes=(1, 0))
    out = np.tensordot(rx, out, axes=(1, 1)).transpose(1, 0, 2)
    return out.astype(arr.dtype, copy=False)


# ---------------------------------------------------------------------------
# PNG I/O


def read_image(path) -> np.ndarray:
    """Read an 8-bit image as floats in ``[0, 1]``; grayscale comes back 1-channel."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def read_mask(path) -> np.ndarray:
    """Read a grayscale mask and threshold at 128 into ``{0, 1}``."""
    with Image.open(path) as im:
        gray = np.asarray(im.convert("L"))
    return (gray >= 128).astype(np.float64)[..., None]


def _to_uint8(img) -> np.ndarray:
    arr = as_image(img)
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img) -> None:
    """Write a 1/3/4-channel image as 8-bit PNG, atomically."""
    data = _to_uint8(img)
    if data.shape[-1] == 1:
        data = data[..., 0]
    elif data.shape[-1] not in (3, 4):
        raise ContractError(f"cannot write {data.shape[-1]}-channel image")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".png")
    os.close(fd)
    try:
        Image.fromarray(data).save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

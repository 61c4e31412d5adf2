"""Random-homography corruption: jitter the image corners, fit, warp."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import ContractError, SeededRng, as_image

__all__ = [
    "DegenerateGeometryError",
    "Homography",
    "CornerJitter",
    "image_corners",
    "solve_homography",
    "project",
    "warp_image",
    "warp_points",
    "sample_jitter",
    "geometric_transform",
]


class DegenerateGeometryError(ValueError):
    """Point configuration or homography too close to singular."""


@dataclass(frozen=True)
class Homography:
    """3x3 projective map normalized to ``h[2, 2] == 1``."""

    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(h)) or abs(h[2, 2]) < 1e-12:
            raise DegenerateGeometryError(f"cannot normalize homography\n{h}")
        h = h / h[2, 2]
        if np.linalg.cond(h) > 1e12:
            raise DegenerateGeometryError("homography is numerically singular")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def to_list(self) -> list[float]:
        return [float(v) for v in self.h.ravel()]

    @classmethod
    def from_list(cls, values) -> "Homography":
        return cls(np.asarray(values, dtype=np.float64).reshape(3, 3))


@dataclass(frozen=True)
class CornerJitter:
    offsets: np.ndarray  # (4, 2) pixel displacements
    sigma: float


def image_corners(h: int, w: int) -> np.ndarray:
    """Pixel-center coordinates ``(x, y)`` of the four image corners."""
    return np.array([[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]])


def _normalizer(pts: np.ndarray) -> np.ndarray:
    # Hartley conditioning: centroid to origin, mean distance sqrt(2)
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def solve_homography(src, dst) -> Homography:
    """Least-squares fit of ``H`` with ``h33 = 1`` so that ``H(src_i) ~ dst_i``."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape or len(src) < 4:
        raise ContractError(f"need >= 4 matching correspondences, got {src.shape} / {dst.shape}")
    if np.array_equal(src, dst):
        return Homography.identity()

    t_src, t_dst = _normalizer(src), _normalizer(dst)
    s = src @ t_src[:2, :2].T + t_src[:2, 2]
    d = dst @ t_dst[:2, :2].T + t_dst[:2, 2]

    n = len(s)
    a = np.zeros((2 * n, 8))
    b = np.empty(2 * n)
    x, y, u, v = s[:, 0], s[:, 1], d[:, 0], d[:, 1]
    a[0::2, 0], a[0::2, 1], a[0::2, 2] = x, y, 1.0
    a[0::2, 6], a[0::2, 7] = -u * x, -u * y
    a[1::2, 3], a[1::2, 4], a[1::2, 5] = x, y, 1.0
    a[1::2, 6], a[1::2, 7] = -v * x, -v * y
    b[0::2], b[1::2] = u, v

    sol, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < 8 or sv[0] / sv[-1] > 1e10:
        raise DegenerateGeometryError("correspondences are (nearly) collinear")
    hn = np.append(sol, 1.0).reshape(3, 3)
    return Homography(np.linalg.inv(t_dst) @ hn @ t_src)


def project(hom: Homography, p) -> np.ndarray:
    """Apply ``hom`` to points of shape ``(..., 2)`` with perspective division."""
    h = hom.h if isinstance(hom, Homography) else np.asarray(hom)
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    den = h[2, 0] * x + h[2, 1] * y + h[2, 2]
    if np.any(np.abs(den) < 1e-12):
        raise DegenerateGeometryError("point maps to infinity")
    px = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / den
    py = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / den
    return np.stack([px, py], axis=-1)


def _bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup at float coordinates, clamped to the image edge."""
    h, w = img.shape[:2]
    c = int(np.prod(img.shape[2:], dtype=int))
    xs, ys = np.broadcast_arrays(xs, ys)
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    # base index stays one short of the last row/column so +1 is always valid;
    # at the far edge the fraction becomes 1 instead
    x0 = xs.astype(np.intp)
    np.minimum(x0, max(w - 2, 0), out=x0)
    y0 = ys.astype(np.intp)
    np.minimum(y0, max(h - 2, 0), out=y0)
    xs -= x0
    ys -= y0
    fx, fy = xs.reshape(-1, 1), ys.reshape(-1, 1)
    dx, dy = (1 if w > 1 else 0), (w if h > 1 else 0)
    y0 *= w
    y0 += x0
    idx = y0.ravel()
    # whole pixels are gathered as opaque records: one 1-D take per corner
    pix = np.ascontiguousarray(img, dtype=np.float64).reshape(h * w, c).view(np.dtype((np.void, 8 * c))).ravel()

    def corner():
        return pix.take(idx).view(np.float64).reshape(-1, c)

    top = corner()
    idx += dx
    step = corner()
    step -= top
    step *= fx
    top += step
    idx += dy - dx
    bottom = corner()
    idx += dx
    step = corner()
    step -= bottom
    step *= fx
    bottom += step
    bottom -= top
    bottom *= fy
    top += bottom
    return top.reshape(xs.shape + img.shape[2:])


def _inverse_map(hom: Homography, xs, ys):
    m = hom.inverse().h
    # the denominator is affine in (x, y), so if it keeps its sign and stays away
    # from zero on the corners of the bounding box it does so everywhere inside
    bx = np.array([np.min(xs), np.max(xs)])[:, None]
    by = np.array([np.min(ys), np.max(ys)])[None, :]
    corner_den = m[2, 0] * bx + m[2, 1] * by + m[2, 2]
    safe = np.all(corner_den > 1e-12) or np.all(corner_den < -1e-12)
    den = m[2, 0] * xs + (m[2, 1] * ys + m[2, 2])
    if not safe and np.any(np.abs(den) < 1e-12):
        raise DegenerateGeometryError("point maps to infinity")
    u = m[0, 0] * xs + (m[0, 1] * ys + m[0, 2])
    u /= den
    v = m[1, 0] * xs + (m[1, 1] * ys + m[1, 2])
    v /= den
    return u, v


_BLOCK_PIXELS = 1 << 16


def warp_image(img, hom: Homography) -> np.ndarray:
    """Inverse warp: ``out(x, y) = img(H^-1 (x, y))``, bilinear, clamp-to-edge."""
    arr = as_image(img)
    h, w = arr.shape[:2]
    out = np.empty(arr.shape, dtype=arr.dtype)
    xs = np.arange(w, dtype=np.float64)[None, :]
    # row blocks keep the per-pixel temporaries cache-sized on large images
    rows = max(1, _BLOCK_PIXELS // w)
    for r in range(0, h, rows):
        ys = np.arange(r, min(r + rows, h), dtype=np.float64)[:, None]
        out[r:r + rows] = _bilinear_sample(arr, *_inverse_map(hom, xs, ys))
    return out


def warp_points(img, hom: Homography, points) -> np.ndarray:
    """Values of ``warp_image(img, hom)`` at output coordinates ``points`` of shape ``(..., 2)``.

    Integer points reproduce the corresponding pixels of the full warp.
    """
    arr = as_image(img)
    p = np.asarray(points, dtype=np.float64)
    return _bilinear_sample(arr, *_inverse_map(hom, p[..., 0], p[..., 1])).astype(arr.dtype, copy=False)


def sample_jitter(rng: SeededRng, sigma: float) -> CornerJitter:
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    return CornerJitter(np.asarray(rng.uniform(-sigma, sigma, (4, 2)), dtype=np.float64) + 0.0, float(sigma))


def geometric_transform(img, sigma: float, rng: SeededRng) -> tuple[np.ndarray, Homography]:
    arr = as_image(img)
    jitter = sample_jitter(rng, sigma)
    corners = image_corners(*arr.shape[:2])
    hom = solve_homography(corners, corners + jitter.offsets)
    return warp_image(arr, hom), hom

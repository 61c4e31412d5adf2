"""Copy-paste generator, conditional two-branch critic, and output compositing.

Tensors are NHWC.  The generator is fully convolutional: it accepts any
spatial size divisible by 8 and predicts a signed 3-channel residual that is
added to the pasted source before compositing with the untouched context.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .tensor_core import ContractError, SeededRng

__all__ = [
    "GeneratorConfig",
    "CriticConfig",
    "init_generator",
    "init_critic",
    "generator_forward",
    "composite_output",
    "critic_forward",
    "mask_box",
    "receptive_radius",
]

NOISE_MODES = ("layers", "input_channel", "off")


@dataclass(frozen=True)
class GeneratorConfig:
    base_resolution: int = 64
    base_channels: int = 32
    max_channels: int = 512
    downsample_stages: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 16, 16)
    noise_mode: str = "layers"
    alpha: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.downsample_stages != 3:
            raise ContractError("the generator uses exactly 3 downsampling stages")
        if self.base_resolution % 8:
            raise ContractError(f"base_resolution {self.base_resolution} is not divisible by 8")
        if len(self.dilations) != 7 or max(self.dilations) > 16 or min(self.dilations) < 1:
            raise ContractError(f"need 7 dilation rates in [1, 16], got {self.dilations}")
        if self.noise_mode not in NOISE_MODES:
            raise ContractError(f"noise_mode must be one of {NOISE_MODES}")

    @property
    def channels(self) -> tuple[int, int, int]:
        return tuple(min(self.base_channels * 2**i, self.max_channels) for i in range(3))

    @property
    def in_channels(self) -> int:
        return 5 if self.noise_mode == "input_channel" else 4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


@dataclass(frozen=True)
class CriticConfig:
    base_resolution: int = 64
    global_channels: tuple[int, ...] = (16, 32, 64, 64)
    local_channels: tuple[int, ...] = (16, 32, 64)
    local_pad: int = 16
    alpha: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "global_channels", tuple(self.global_channels))
        object.__setattr__(self, "local_channels", tuple(self.local_channels))
        if self.base_resolution % 2 ** len(self.global_channels):
            raise ContractError("base_resolution must survive every global downsampling")
        if (self.base_resolution // 2) % 2 ** len(self.local_channels):
            raise ContractError("local resolution must survive every local downsampling")

    @property
    def local_resolution(self) -> int:
        return self.base_resolution // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["global_channels"] = list(self.global_channels)
        d["local_channels"] = list(self.local_channels)
        return d


# ---------------------------------------------------------------------------
# parameters


def _he(rng: SeededRng, shape, fan_in: int, alpha: float) -> np.ndarray:
    std = np.sqrt(2.0 / ((1.0 + alpha**2) * fan_in))
    return rng.normal(shape) * std


def _conv_params(store: ParamStore, rng: SeededRng, name: str, k: int, cin: int, cout: int, alpha: float):
    store.add(f"{name}/w", _he(rng.child(name), (k, k, cin, cout), k * k * cin, alpha))
    store.add(f"{name}/b", np.zeros(cout))


def _tconv_params(store: ParamStore, rng: SeededRng, name: str, cin: int, cout: int, alpha: float):
    # a stride-2 4x4 transposed conv touches 4 input taps per output pixel
    store.add(f"{name}/w", _he(rng.child(name), (4, 4, cout, cin), 4 * cin, alpha))
    store.add(f"{name}/b", np.zeros(cout))


def init_generator(cfg: GeneratorConfig, rng: SeededRng, store: ParamStore | None = None) -> ParamStore:
    store = ParamStore() if store is None else store
    c1, c2, c3 = cfg.channels
    a = cfg.alpha
    cin = cfg.in_channels
    for i, c in enumerate((c1, c2, c3), start=1):
        _conv_params(store, rng, f"g/enc{i}/down", 3, cin, c, a)
        _conv_params(store, rng, f"g/enc{i}/conv", 3, c, c, a)
        cin = c
    for j in range(len(cfg.dilations)):
        _conv_params(store, rng, f"g/mid{j + 1}", 3, c3, c3, a)
    # decoder stage k consumes concat(previous, encoder skip at the same resolution)
    plan = [(c3 + c3, c2, c2), (c2 + c2, c1, c1), (c1 + c1, c1, 3)]
    for k, (cin, cup, cout) in enumerate(plan, start=1):
        _tconv_params(store, rng, f"g/dec{k}/up", cin, cup, a)
        store.add(f"g/dec{k}/noise_scale", np.zeros(cup))
        _conv_params(store, rng, f"g/dec{k}/conv", 3, cup, cout, a)
    return store


def init_critic(cfg: CriticConfig, rng: SeededRng, store: ParamStore | None = None) -> ParamStore:
    store = ParamStore() if store is None else store
    a = cfg.alpha
    cin = 7
    for i, c in enumerate(cfg.global_channels, start=1):
        _conv_params(store, rng, f"d/global{i}", 3, cin, c, a)
        cin = c
    cin = 7
    for i, c in enumerate(cfg.local_channels, start=1):
        _conv_params(store, rng, f"d/local{i}", 3, cin, c, a)
        cin = c
    g_side = cfg.base_resolution // 2 ** len(cfg.global_channels)
    l_side = cfg.local_resolution // 2 ** len(cfg.local_channels)
    features = g_side**2 * cfg.global_channels[-1] + l_side**2 * cfg.local_channels[-1]
    store.add("d/dense/w", rng.child("d/dense").normal((features, 1)) / np.sqrt(features))
    store.add("d/dense/b", np.zeros(1))
    return store


# ---------------------------------------------------------------------------
# generator


def _conv(p, name, x, stride=1, dilation=1):
    return ad.conv2d(x, p[f"{name}/w"], p[f"{name}/b"], stride=stride, dilation=dilation)


def _act(x: Tensor, alpha: float) -> Tensor:
    return ad.lrn(ad.leaky_relu(x, alpha))


def _noise_rng(noise) -> SeededRng:
    if isinstance(noise, SeededRng):
        return noise
    return SeededRng(0 if noise is None else int(noise), "generator-noise")


def generator_forward(params: ParamStore, x, cfg: GeneratorConfig, noise=None) -> Tensor:
    """Residual prediction for a batch of 4-channel inputs ``(N, H, W, 4)``.

    ``noise`` is a :class:`SeededRng` or integer seed for the noise images;
    it is ignored when ``cfg.noise_mode == "off"``.
    """
    x = ad.as_tensor(np.asarray(x.value if isinstance(x, Tensor) else x, dtype=params.dtype))
    if x.ndim != 4 or x.shape[-1] != 4:
        raise ContractError(f"generator input must be (N, H, W, 4), got {x.shape}")
    n, h, w, _ = x.shape
    if h % 8 or w % 8:
        raise ContractError(f"spatial dims {h}x{w} must be divisible by 8 (pad the input)")
    a = cfg.alpha
    rng = _noise_rng(noise)

    if cfg.noise_mode == "input_channel":
        img = rng.child("input").normal((n, h, w, 1)).astype(params.dtype)
        x = ad.concat([x, ad.Tensor(img)], axis=-1)

    skips = []
    for i in (1, 2, 3):
        x = _act(_conv(params, f"g/enc{i}/down", x, stride=2), a)
        x = _act(_conv(params, f"g/enc{i}/conv", x), a)
        skips.append(x)
    for j, d in enumerate(cfg.dilations, start=1):
        x = _act(_conv(params, f"g/mid{j}", x, dilation=d), a)

    for k in (1, 2, 3):
        x = ad.concat([x, skips[3 - k]], axis=-1)
        x = ad.transposed_conv2d(x, params[f"g/dec{k}/up/w"], params[f"g/dec{k}/up/b"])
        if cfg.noise_mode == "layers":
            _, hh, ww, _ = x.shape
            img = rng.child(("layer", k)).normal((n, hh, ww, 1)).astype(params.dtype)
            x = ad.noise_add(x, img, params[f"g/dec{k}/noise_scale"])
        x = _act(x, a)
        x = _conv(params, f"g/dec{k}/conv", x)
        if k < 3:
            x = _act(x, a)
    return x


def composite_output(residual, source, context, mask):
    """``Y = residual + source`` inside the binary mask, ``context`` outside.

    Context pixels are copied, never computed, so they match bit for bit even
    if the residual is not finite.  Works on arrays or tensors; with a tensor
    residual the result is differentiable w.r.t. the residual.
    """
    shapes = [np.shape(v.value if isinstance(v, Tensor) else v) for v in (residual, source, context)]
    if len(set(shapes)) != 1:
        raise ContractError(f"shape mismatch in composite: {shapes}")
    m = mask.value if isinstance(mask, Tensor) else np.asarray(mask)
    if m.shape[:-1] != shapes[0][:-1] or m.shape[-1] != 1:
        raise ContractError(f"mask {m.shape} does not match images {shapes[0]}")
    if not np.all((m == 0) | (m == 1)):
        raise ContractError("copy-paste mask must be binary")
    inside = m == 1
    if isinstance(residual, Tensor):
        dt = residual.dtype
        content = ad.add(residual, np.asarray(source, dtype=dt))
        return ad.select(inside, content, np.asarray(context, dtype=dt))
    return np.where(inside, np.asarray(residual) + source, context)


# ---------------------------------------------------------------------------
# critic


def mask_box(mask: np.ndarray, pad: int) -> tuple[int, int, int, int]:
    """Padded bounding box ``(y0, y1, x0, x1)`` of a ``(H, W[, 1])`` mask; full frame if empty."""
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[..., 0]
    h, w = m.shape
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        return 0, h, 0, w
    return (
        max(0, int(rows[0]) - pad),
        min(h, int(rows[-1]) + 1 + pad),
        max(0, int(cols[0]) - pad),
        min(w, int(cols[-1]) + 1 + pad),
    )


def critic_forward(params: ParamStore, y, condition, cfg: CriticConfig) -> Tensor:
    """Score ``(N, 1)`` for RGB images ``y`` conditioned on the 4-channel copy-paste input."""
    y = ad.as_tensor(y)
    cond = np.asarray(condition.value if isinstance(condition, Tensor) else condition, dtype=y.dtype)
    if y.ndim != 4 or y.shape[-1] != 3 or cond.shape != y.shape[:-1] + (4,):
        raise ContractError(f"critic needs (N, H, W, 3) images and (N, H, W, 4) condition, got {y.shape}, {cond.shape}")
    n, h, w, _ = y.shape
    if (h, w) != (cfg.base_resolution, cfg.base_resolution):
        raise ContractError(f"critic is built for {cfg.base_resolution}^2 inputs, got {h}x{w}")
    a = cfg.alpha
    z = ad.concat([y, ad.Tensor(cond)], axis=-1)

    g = z
    for i in range(1, len(cfg.global_channels) + 1):
        g = ad.leaky_relu(_conv(params, f"d/global{i}", g, stride=2), a)

    side = cfg.local_resolution
    crops = []
    for b in range(n):
        box = mask_box(cond[b, ..., 3] > 0.5, cfg.local_pad)
        crops.append(ad.crop_resize(z[b:b + 1], box, side, side))
    loc = ad.concat(crops, axis=0)
    for i in range(1, len(cfg.local_channels) + 1):
        loc = ad.leaky_relu(_conv(params, f"d/local{i}", loc, stride=2), a)

    feats = ad.concat([ad.reshape(g, (n, -1)), ad.reshape(loc, (n, -1))], axis=-1)
    return ad.dense(feats, params["d/dense/w"], params["d/dense/b"])


def receptive_radius(cfg: GeneratorConfig) -> int:
    """Upper bound (input pixels) on how far any output pixel's support reaches."""
    radius, jump = 0, 1
    for _ in range(3):
        radius += jump  # 3x3 stride-2
        jump *= 2
        radius += jump  # 3x3 stride-1
    radius += sum(cfg.dilations) * jump
    for _ in range(3):
        radius += 2 * jump  # 4x4 transposed, two low-res taps either side
        jump //= 2
        radius += jump
    return radius

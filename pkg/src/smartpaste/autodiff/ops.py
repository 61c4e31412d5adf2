"""Differentiable operators on NHWC tensors.

Each vjp is built from ops in this module, so every operator supports
differentiation to any order.  Piecewise-linear ops (leaky ReLU, abs, clamp,
min/max) use constant masks, i.e. zero second derivative.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..tensor_core import interp_matrix
from .core import ShapeError, Tensor, as_tensor, log_kink, make_node

__all__ = [
    "add", "sub", "mul", "div", "neg", "power", "sqrt", "abs", "square",
    "sum", "mean", "max", "min", "clamp", "reshape", "transpose", "getitem",
    "concat", "broadcast_to", "sum_to", "matmul", "dense", "leaky_relu", "lrn",
    "noise_add", "conv2d", "transposed_conv2d", "resample", "bilinear_resize",
    "crop_resize", "select",
]


def _const_like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return a, b
    if isinstance(a, Tensor):
        return a, _const_like(b, a)
    return _const_like(a, b), b


# ---------------------------------------------------------------------------
# shape plumbing


def sum_to(x: Tensor, shape) -> Tensor:
    """Sum a broadcast result back down to ``shape``."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1)
    val = x.value.sum(axis=axes, keepdims=True)
    val = val.reshape(shape)
    return make_node(val, (x,), lambda g: (broadcast_to(g, x.shape),), "sum_to")


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    val = np.broadcast_to(x.value, shape)
    return make_node(val, (x,), lambda g: (sum_to(g, x.shape),), "broadcast_to")


def reshape(x: Tensor, shape) -> Tensor:
    val = x.value.reshape(shape)
    return make_node(val, (x,), lambda g: (reshape(g, x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_node(x.value.transpose(axes), (x,), lambda g: (transpose(g, inv),), "transpose")


def _scatter(g: Tensor, index, shape) -> Tensor:
    val = np.zeros(shape, dtype=g.dtype)
    val[index] = g.value
    return make_node(val, (g,), lambda gg: (getitem(gg, index),), "scatter")


def getitem(x: Tensor, index) -> Tensor:
    val = x.value[index]
    return make_node(val, (x,), lambda g: (_scatter(g, index, x.shape),), "getitem")


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    axis = axis % xs[0].ndim
    val = np.concatenate([x.value for x in xs], axis=axis)
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def vjp(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return make_node(val, xs, vjp, "concat")


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    val = a.value + b.value
    return make_node(val, (a, b), lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    val = a.value - b.value
    return make_node(val, (a, b), lambda g: (sum_to(g, a.shape), sum_to(neg(g), b.shape)), "sub")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.value, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    val = a.value * b.value
    return make_node(val, (a, b), lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    val = a.value / b.value

    def vjp(g):
        ga = sum_to(div(g, b), a.shape)
        gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return make_node(val, (a, b), vjp, "div")


def power(a: Tensor, p: float) -> Tensor:
    val = a.value ** p
    return make_node(val, (a,), lambda g: (mul(g, mul(power(a, p - 1), p)),), "power")


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def sqrt(a: Tensor) -> Tensor:
    val = np.sqrt(a.value)
    out_holder = []

    def vjp(g):
        return (div(mul(g, 0.5), out_holder[0]),)

    out = make_node(val, (a,), vjp, "sqrt")
    out_holder.append(out if out.requires_grad else Tensor(val))
    return out


def _mask_mul(g: Tensor, mask: np.ndarray) -> Tensor:
    return mul(g, Tensor(mask.astype(g.dtype, copy=False)))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(a.value)
    log_kink(sign)
    return make_node(np.abs(a.value), (a,), lambda g: (_mask_mul(g, sign),), "abs")


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    val = np.clip(a.value, lo, hi)
    keep = np.ones(a.shape, dtype=bool)
    if lo is not None:
        keep &= a.value >= lo
    if hi is not None:
        keep &= a.value <= hi
    log_kink(keep)
    return make_node(val, (a,), lambda g: (_mask_mul(g, keep),), "clamp")


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    """``x`` where ``x >= 0`` else ``alpha * x``."""
    pos = x.value >= 0
    log_kink(pos)
    slope = np.where(pos, 1.0, alpha).astype(x.dtype)
    return make_node(x.value * slope, (x,), lambda g: (mul(g, Tensor(slope)),), "leaky_relu")


def select(cond, a, b) -> Tensor:
    """Elementwise ``a`` where ``cond`` else ``b`` (broadcasting).

    Unlike ``a * m + b * (1 - m)`` the unselected operand never leaks in, even
    when it holds inf or NaN.
    """
    cond = np.asarray(cond, dtype=bool)
    a, b = _pair(a, b)
    val = np.where(cond, a.value, b.value)
    zero = Tensor(np.zeros((), dtype=val.dtype))

    def vjp(g):
        return sum_to(select(cond, g, zero), a.shape), sum_to(select(cond, zero, g), b.shape)

    return make_node(val, (a, b), vjp, "select")


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_back(g: Tensor, x: Tensor, axes, keepdims) -> Tensor:
    if not keepdims:
        shape = list(x.shape)
        for a in axes:
            shape[a] = 1
        g = reshape(g, tuple(shape))
    return broadcast_to(g, x.shape)


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    val = x.value.sum(axis=axes, keepdims=keepdims)
    return make_node(val, (x,), lambda g: (_expand_back(g, x, axes, keepdims),), "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axes, keepdims), 1.0 / count)


def _extremum(x: Tensor, axis, keepdims, fn, op) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    ext = fn(x.value, axis=axes, keepdims=True)
    hit = x.value == ext
    # ties share the gradient equally
    weight = hit / hit.sum(axis=axes, keepdims=True)
    log_kink(hit)
    val = ext if keepdims else ext.reshape([s for i, s in enumerate(x.shape) if i not in axes])

    def vjp(g):
        return (_mask_mul(_expand_back(g, x, axes, keepdims), weight),)

    return make_node(val, (x,), vjp, op)


def max(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    return _extremum(x, axis, keepdims, np.max, "max")


def min(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    return _extremum(x, axis, keepdims, np.min, "min")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    return make_node(
        a.value @ b.value,
        (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
        "matmul",
    )


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape ``(N, F)``."""
    out = matmul(x, w)
    return out if b is None else add(out, b)


def lrn(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Divide each site's channel vector by its root-mean-square."""
    return div(x, sqrt(add(mean(mul(x, x), axis=-1, keepdims=True), eps)))


def noise_add(x: Tensor, noise, scales: Tensor) -> Tensor:
    """``x_c + scales_c * noise`` with a single-channel noise image broadcast over channels."""
    noise = as_tensor(noise)
    if noise.shape[-1] != 1 or noise.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"noise {noise.shape} does not fit activations {x.shape}")
    if scales.shape != (x.shape[-1],):
        raise ShapeError(f"scales {scales.shape} do not match {x.shape[-1]} channels")
    return add(x, mul(noise, scales))


# ---------------------------------------------------------------------------
# convolution
#
# All three primitives are slices of the trilinear form <gy, conv(x, w)>;
# each one's vjp is expressed through the other two.


def _out_size(n, k, stride, dilation, pad):
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def _im2col(x, kh, kw, stride, dilation, pad):
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else np.ascontiguousarray(x)
    ho = _out_size(h, kh, stride, dilation, pad)
    wo = _out_size(w, kw, stride, dilation, pad)
    sn, sh, sw, sc = xp.strides
    view = as_strided(
        xp,
        (n, ho, wo, kh, kw, c),
        (sn, sh * stride, sw * stride, sh * dilation, sw * dilation, sc),
        writeable=False,
    )
    return view.reshape(n * ho * wo, kh * kw * c), ho, wo


def _conv_forward(x, w, stride, dilation, pad):
    kh, kw, cin, cout = w.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"conv input has {x.shape[-1]} channels, kernel expects {cin}")
    cols, ho, wo = _im2col(x, kh, kw, stride, dilation, pad)
    return (cols @ w.reshape(-1, cout)).reshape(x.shape[0], ho, wo, cout)


def _conv_weight_grad(x, gy, w_shape, stride, dilation, pad):
    kh, kw, cin, cout = w_shape
    cols, _, _ = _im2col(x, kh, kw, stride, dilation, pad)
    return (cols.T @ gy.reshape(-1, cout)).reshape(w_shape)


def _conv_input_grad(gy, w, x_shape, stride, dilation, pad):
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x_shape
    _, ho, wo, _ = gy.shape
    dcols = (gy.reshape(-1, cout) @ w.reshape(-1, cout).T).reshape(n, ho, wo, kh, kw, cin)
    dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, cin), dtype=np.result_type(gy, w))
    for a in range(kh):
        ya = a * dilation
        for b in range(kw):
            xb = b * dilation
            dxp[:, ya:ya + stride * (ho - 1) + 1:stride, xb:xb + stride * (wo - 1) + 1:stride, :] += dcols[:, :, :, a, b, :]
    return dxp[:, pad:pad + h, pad:pad + wd, :]


def _conv_op(x: Tensor, w: Tensor, stride, dilation, pad) -> Tensor:
    val = _conv_forward(x.value, w.value, stride, dilation, pad)

    def vjp(g):
        return (
            _input_grad_op(g, w, x.shape, stride, dilation, pad),
            _weight_grad_op(x, g, w.shape, stride, dilation, pad),
        )

    return make_node(val, (x, w), vjp, "conv2d")


def _input_grad_op(gy: Tensor, w: Tensor, x_shape, stride, dilation, pad) -> Tensor:
    val = _conv_input_grad(gy.value, w.value, x_shape, stride, dilation, pad)

    def vjp(g):
        return (
            _conv_op(g, w, stride, dilation, pad),
            _weight_grad_op(g, gy, w.shape, stride, dilation, pad),
        )

    return make_node(val, (gy, w), vjp, "conv2d_input_grad")


def _weight_grad_op(x: Tensor, gy: Tensor, w_shape, stride, dilation, pad) -> Tensor:
    val = _conv_weight_grad(x.value, gy.value, w_shape, stride, dilation, pad)

    def vjp(g):
        return (
            _input_grad_op(gy, g, x.shape, stride, dilation, pad),
            _conv_op(x, g, stride, dilation, pad),
        )

    return make_node(val, (x, gy), vjp, "conv2d_weight_grad")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, dilation: int = 1) -> Tensor:
    """Cross-correlation of NHWC ``x`` with a ``(kh, kw, cin, cout)`` kernel.

    Zero "same" padding: stride 1 keeps the spatial size, stride 2 halves
    it (inputs must be even).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input and 4-d kernel, got {x.shape}, {w.shape}")
    kh, kw = w.shape[:2]
    if kh != kw or kh % 2 != 1:
        raise ShapeError(f"conv2d kernel must be odd and square, got {kh}x{kw}")
    if stride not in (1, 2) or dilation < 1:
        raise ShapeError(f"unsupported stride {stride} / dilation {dilation}")
    if stride == 2 and (x.shape[1] % 2 or x.shape[2] % 2):
        raise ShapeError(f"stride-2 conv needs even spatial dims, got {x.shape[1:3]}")
    out = _conv_op(x, w, stride, dilation, dilation * (kh // 2))
    return out if b is None else add(out, b)


def transposed_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-2 upsampling with a 4x4 kernel, the exact adjoint of a stride-2 4x4 conv.

    ``w`` has shape ``(4, 4, cout, cin)``: read as a regular conv kernel it
    maps the ``cout``-channel high-resolution grid down to ``cin`` channels.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.shape[:2] != (4, 4) or w.shape[3] != x.shape[-1]:
        raise ShapeError(f"transposed_conv2d expects (4, 4, cout, {x.shape[-1]}) kernel, got {w.shape}")
    n, h, wd, _ = x.shape
    out = _input_grad_op(x, w, (n, 2 * h, 2 * wd, w.shape[2]), 2, 1, 1)
    return out if b is None else add(out, b)


def strided_conv4(x: Tensor, w: Tensor) -> Tensor:
    """Stride-2, 4x4, pad-1 conv; the forward map whose adjoint is :func:`transposed_conv2d`."""
    x, w = as_tensor(x), as_tensor(w)
    return _conv_op(x, w, 2, 1, 1)


# ---------------------------------------------------------------------------
# resampling (fixed geometry, linear in the pixels)


def resample(x: Tensor, ry: np.ndarray, rx: np.ndarray) -> Tensor:
    """``y[n, i, j] = sum_ab ry[i, a] rx[j, b] x[n, a, b]`` per channel."""
    ry = np.asarray(ry, dtype=x.dtype)
    rx = np.asarray(rx, dtype=x.dtype)
    if ry.shape[1] != x.shape[1] or rx.shape[1] != x.shape[2]:
        raise ShapeError(f"resample matrices {ry.shape}, {rx.shape} do not fit {x.shape}")
    val = np.einsum("ia,nabc->nibc", ry, x.value)
    val = np.einsum("jb,nibc->nijc", rx, val)
    return make_node(val, (x,), lambda g: (resample(g, ry.T, rx.T),), "resample")


def bilinear_resize(x: Tensor, h: int, w: int) -> Tensor:
    x = as_tensor(x)
    return resample(x, interp_matrix(x.shape[1], h), interp_matrix(x.shape[2], w))


def crop_resize(x: Tensor, box, h: int, w: int) -> Tensor:
    """Bilinear resize of the window ``box = (y0, y1, x0, x1)`` to ``(h, w)``."""
    y0, y1, x0, x1 = box
    return resample(x, interp_matrix(x.shape[1], h, lo=y0, hi=y1), interp_matrix(x.shape[2], w, lo=x0, hi=x1))

"""Central finite-difference checks for every operator and the full networks.

Each case builds a scalar function of a few named arrays; analytic gradients
from :func:`grad` are compared with ``(f(x + eps) - f(x - eps)) / 2 eps`` on a
sample of coordinates.  Perturbations that flip a piecewise op's branch are
skipped, since the finite difference is meaningless across a kink.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .core import Tensor, grad, kink_probe

__all__ = ["CheckResult", "check_function", "CASES", "run_cases", "FIRST_ORDER_TOL", "SECOND_ORDER_TOL"]

FIRST_ORDER_TOL = 1e-4
SECOND_ORDER_TOL = 1e-3
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tol: float
    checked: int
    skipped: int

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_error <= self.tol

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<24s} max_rel_err={self.max_rel_error:.3e} tol={self.tol:.0e} checked={self.checked} skipped={self.skipped}"


def _signature(log) -> list[np.ndarray]:
    return [np.array(p, copy=True) for p in log]


def _same(sig_a, sig_b) -> bool:
    return len(sig_a) == len(sig_b) and all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(sig_a, sig_b))


def check_function(fn, arrays: dict, eps: float = EPS, max_coords: int = 24, seed: int = 0):
    """Compare analytic and numerical gradients of ``fn(**tensors) -> scalar``.

    Returns ``(max_rel_error, checked, skipped)``.  The relative error of each
    array is ``max |analytic - numeric| / max(|analytic|, |numeric|)`` over the
    sampled coordinates; the worst array is reported.
    """
    rng = np.random.default_rng(seed)
    arrays = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    out = fn(**leaves)
    analytic = dict(zip(leaves, (g.value for g in grad(out, list(leaves.values())))))

    def evaluate(vals):
        # graph recording stays on: second-order cases call grad inside fn
        with kink_probe() as log:
            val = fn(**{k: Tensor(v) for k, v in vals.items()}).item()
        return val, _signature(log)

    _, base_sig = evaluate(arrays)
    worst, checked, skipped = 0.0, 0, 0
    for name, arr in arrays.items():
        n = arr.size
        picks = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
        a_vals, n_vals = [], []
        for flat in picks:
            idx = np.unravel_index(flat, arr.shape)
            plus, minus = dict(arrays), dict(arrays)
            plus[name] = arr.copy()
            plus[name][idx] += eps
            minus[name] = arr.copy()
            minus[name][idx] -= eps
            fp, sp = evaluate(plus)
            fm, sm = evaluate(minus)
            if not (_same(sp, base_sig) and _same(sm, base_sig)):
                skipped += 1
                continue
            a_vals.append(analytic[name][idx])
            n_vals.append((fp - fm) / (2 * eps))
            checked += 1
        if a_vals:
            a, nu = np.array(a_vals), np.array(n_vals)
            scale = max(np.abs(a).max(), np.abs(nu).max(), 1e-10)
            worst = max(worst, float(np.abs(a - nu).max() / scale))
    return worst, checked, skipped


# ---------------------------------------------------------------------------
# cases: name -> (builder(rng) -> (fn, arrays), tolerance)


def _proj(rng, shape):
    return Tensor(rng.normal(size=shape))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _case_conv(stride, dilation):
    def build(rng):
        r = _proj(rng, (2, 8 // stride, 8 // stride, 4))
        return (lambda x, w, b: ops.sum(ops.mul(ops.conv2d(x, w, b, stride=stride, dilation=dilation), r)),
                {"x": rng.normal(size=(2, 8, 8, 3)), "w": rng.normal(size=(3, 3, 3, 4)), "b": rng.normal(size=4)})
    return build


def _case_tconv(rng):
    r = _proj(rng, (2, 8, 8, 3))
    return (lambda x, w, b: ops.sum(ops.mul(ops.transposed_conv2d(x, w, b), r)),
            {"x": rng.normal(size=(2, 4, 4, 5)), "w": rng.normal(size=(4, 4, 3, 5)), "b": rng.normal(size=3)})


def _case_unary(op, make_x):
    def build(rng):
        x = make_x(rng)
        r = _proj(rng, op(Tensor(x)).shape)
        return (lambda x: ops.sum(ops.mul(op(x), r)), {"x": x})
    return build


def _case_noise_add(rng):
    r = _proj(rng, (2, 6, 6, 4))
    noise = Tensor(rng.normal(size=(2, 6, 6, 1)))
    return (lambda x, s: ops.sum(ops.mul(ops.noise_add(x, noise, s), r)),
            {"x": rng.normal(size=(2, 6, 6, 4)), "s": rng.normal(size=4)})


def _case_concat(rng):
    r = _proj(rng, (2, 5, 5, 5))
    return (lambda a, b: ops.sum(ops.mul(ops.concat([a, b], axis=-1), r)),
            {"a": rng.normal(size=(2, 5, 5, 2)), "b": rng.normal(size=(2, 5, 5, 3))})


def _case_select(rng):
    r = _proj(rng, (2, 4, 4, 3))
    cond = rng.uniform(size=(2, 4, 4, 1)) < 0.5
    return (lambda a, b: ops.sum(ops.mul(ops.select(cond, a, b), r)),
            {"a": rng.normal(size=(2, 4, 4, 3)), "b": rng.normal(size=(2, 4, 4, 1))})


def _case_dense(rng):
    r = _proj(rng, (3, 2))
    return (lambda x, w, b: ops.sum(ops.mul(ops.dense(x, w, b), r)),
            {"x": rng.normal(size=(3, 7)), "w": rng.normal(size=(7, 2)), "b": rng.normal(size=2)})


def _case_reduce(op):
    def build(rng):
        r = _proj(rng, (2, 3))
        return (lambda x: ops.sum(ops.mul(op(x, axis=(1, 2)), r)),
                {"x": rng.permutation(np.linspace(-2, 2, 2 * 4 * 4 * 3)).reshape(2, 4, 4, 3)})
    return build


def _case_chain(rng):
    r = _proj(rng, (2, 3))
    def fn(x, w, b, wd, bd):
        h = ops.leaky_relu(ops.conv2d(x, w, b, stride=2), 0.2)
        return ops.sum(ops.mul(ops.dense(ops.reshape(h, (2, -1)), wd, bd), r))
    return fn, {"x": rng.normal(size=(2, 6, 6, 2)), "w": rng.normal(size=(3, 3, 2, 4)),
                "b": rng.normal(size=4) * 0.1, "wd": rng.normal(size=(36, 3)), "bd": rng.normal(size=3)}


def _case_generator(rng):
    from ..models import GeneratorConfig, generator_forward, init_generator
    from ..tensor_core import SeededRng
    from .params import ParamStore

    cfg = GeneratorConfig(base_resolution=16, base_channels=4, dilations=(1, 2, 2, 1, 1, 2, 1), noise_mode="layers")
    store = init_generator(cfg, SeededRng(7, "gradcheck"), ParamStore(np.float64))
    arrays = {k.replace("/", "__"): v + 0.0 for k, v in store.arrays().items()}
    for k in arrays:
        if k.endswith("noise_scale") or k.endswith("__b"):
            arrays[k] = rng.normal(size=arrays[k].shape) * 0.1
    x = rng.uniform(size=(1, 16, 16, 4))
    r = _proj(rng, (1, 16, 16, 3))

    def fn(**params):
        view = {k.replace("__", "/"): t for k, t in params.items()}
        return ops.sum(ops.mul(generator_forward(_Store(view), x, cfg, noise=3), r))
    return fn, arrays


class _Store(dict):
    dtype = np.dtype(np.float64)


def _critic_parts(rng):
    from ..models import CriticConfig, init_critic
    from ..tensor_core import SeededRng
    from .params import ParamStore

    cfg = CriticConfig(base_resolution=16, global_channels=(3, 3, 3, 3), local_channels=(3, 3, 3), local_pad=2)
    store = init_critic(cfg, SeededRng(5, "gradcheck"), ParamStore(np.float64))
    arrays = {k.replace("/", "__"): v + 0.0 for k, v in store.arrays().items()}
    for k in arrays:
        if k.endswith("__b"):
            arrays[k] = rng.normal(size=arrays[k].shape) * 0.1
    cond = rng.uniform(size=(2, 16, 16, 4))
    cond[..., 3] = 0.0
    cond[0, 4:9, 5:11, 3] = 1.0
    cond[1, 9:14, 2:6, 3] = 1.0
    return cfg, arrays, cond


def _case_critic(rng):
    from ..models import critic_forward

    cfg, arrays, cond = _critic_parts(rng)
    arrays["y"] = rng.uniform(size=(2, 16, 16, 3))

    def fn(y, **params):
        view = {k.replace("__", "/"): t for k, t in params.items()}
        return ops.sum(ops.mul(critic_forward(_Store(view), y, cond, cfg), Tensor(np.array([[1.3], [-0.7]]))))
    return fn, arrays


def _case_gradient_penalty(rng):
    """Second order: penalty of a 2-layer critic on 4x4 inputs w.r.t. its weights."""
    from .core import grad as _grad

    x_real = rng.uniform(size=(2, 4, 4, 3))
    x_fake = rng.uniform(size=(2, 4, 4, 3))
    u = rng.uniform(size=(2, 1, 1, 1))

    def fn(w, b, wd, bd):
        mixed = Tensor(u * x_real + (1 - u) * x_fake, requires_grad=True)
        h = ops.leaky_relu(ops.conv2d(mixed, w, b), 0.2)
        d = ops.dense(ops.reshape(h, (2, -1)), wd, bd)
        g = _grad(ops.sum(d), [mixed], create_graph=True)[0]
        norms = ops.sqrt(ops.sum(ops.reshape(ops.mul(g, g), (2, -1)), axis=1))
        return ops.mean(ops.square(ops.sub(norms, 1.0)))
    return fn, {"w": rng.normal(size=(3, 3, 3, 4)) * 0.5, "b": rng.normal(size=4) * 0.1,
                "wd": rng.normal(size=(64, 1)) * 0.3, "bd": rng.normal(size=1)}


CASES = {
    "conv2d": (_case_conv(1, 1), FIRST_ORDER_TOL),
    "conv2d_stride2": (_case_conv(2, 1), FIRST_ORDER_TOL),
    "conv2d_dilated": (_case_conv(1, 2), FIRST_ORDER_TOL),
    "transposed_conv2d": (_case_tconv, FIRST_ORDER_TOL),
    "leaky_relu": (_case_unary(lambda x: ops.leaky_relu(x, 0.2), lambda r: _away_from_zero(r, (2, 4, 4, 3))), FIRST_ORDER_TOL),
    "lrn": (_case_unary(ops.lrn, lambda r: r.normal(size=(2, 4, 4, 5))), FIRST_ORDER_TOL),
    "noise_add": (_case_noise_add, FIRST_ORDER_TOL),
    "concat": (_case_concat, FIRST_ORDER_TOL),
    "dense": (_case_dense, FIRST_ORDER_TOL),
    "select": (_case_select, FIRST_ORDER_TOL),
    "bilinear_resize": (_case_unary(lambda x: ops.bilinear_resize(x, 7, 5), lambda r: r.normal(size=(2, 4, 6, 2))), FIRST_ORDER_TOL),
    "crop_resize": (_case_unary(lambda x: ops.crop_resize(x, (1, 5, 2, 6), 6, 6), lambda r: r.normal(size=(2, 6, 7, 2))), FIRST_ORDER_TOL),
    "mean": (_case_unary(lambda x: ops.mean(x, axis=(1, 2)), lambda r: r.normal(size=(2, 3, 3, 2))), FIRST_ORDER_TOL),
    "sum": (_case_unary(lambda x: ops.sum(x, axis=-1), lambda r: r.normal(size=(2, 3, 3, 2))), FIRST_ORDER_TOL),
    "abs": (_case_unary(ops.abs, lambda r: _away_from_zero(r, (2, 3, 3, 2))), FIRST_ORDER_TOL),
    "square": (_case_unary(ops.square, lambda r: r.normal(size=(2, 3, 3, 2))), FIRST_ORDER_TOL),
    "sqrt": (_case_unary(ops.sqrt, lambda r: r.uniform(0.5, 2.0, size=(2, 3, 3, 2))), FIRST_ORDER_TOL),
    "max": (_case_reduce(ops.max), FIRST_ORDER_TOL),
    "min": (_case_reduce(ops.min), FIRST_ORDER_TOL),
    "clamp": (_case_unary(lambda x: ops.clamp(x, -0.5, 0.5), lambda r: _away_from_zero(r, (2, 3, 3, 2)) * 0.7), FIRST_ORDER_TOL),
    "conv_lrelu_dense": (_case_chain, FIRST_ORDER_TOL),
    "generator": (_case_generator, FIRST_ORDER_TOL),
    "critic": (_case_critic, FIRST_ORDER_TOL),
    "gradient_penalty": (_case_gradient_penalty, SECOND_ORDER_TOL),
}


def run_cases(names=None, tol: float | None = None, seed: int = 0) -> list[CheckResult]:
    """Run the named cases (all by default); ``tol`` overrides every tolerance."""
    names = list(CASES) if names is None else list(names)
    results = []
    for name in names:
        if name not in CASES:
            raise KeyError(f"unknown gradcheck case {name!r}; choose from {sorted(CASES)}")
        build, default_tol = CASES[name]
        fn, arrays = build(np.random.default_rng([seed, len(name)]))
        err, checked, skipped = check_function(fn, arrays, seed=seed)
        results.append(CheckResult(name, err, default_tol if tol is None else tol, checked, skipped))
    return results

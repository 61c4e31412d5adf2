"""WGAN-GP + L1 training of the copy-paste generator.

The critic minimizes ``E[D(Y)] - E[D(I)] + lambda * GP + gamma * E[D(I)^2]``;
the generator minimizes ``L1(Y, I) - alpha * E[D(Y)]`` (the usual
adversarial split of the combined objective).  Every iteration draws its data,
noise and interpolation weights from streams keyed by ``(seed, iteration)``,
so runs are reproducible and resumable from a checkpoint.
"""
from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .sample_forge import Corpus, ForgeConfig, MaskConfig, forge_batch
from .models import (
    CriticConfig,
    GeneratorConfig,
    composite_output,
    critic_forward,
    generator_forward,
    init_critic,
    init_generator,
)
from .photometric import ColorRanges
from .tensor_core import ContractError, SeededRng

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainState",
    "NonFiniteLossError",
    "interpolate_pair",
    "reconstruction_loss",
    "gradient_penalty",
    "critic_loss",
    "generator_loss",
    "adam_step",
    "init_state",
    "train_step",
    "train",
    "METRIC_FIELDS",
    "format_metrics",
]

METRIC_FIELDS = ("iter", "l_rec", "wasserstein", "gp", "d_loss", "g_loss")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainConfig:
    # loss weights
    lambda_gp: float = 10.0
    alpha: float = 1e-4
    gamma: float = 1e-3
    # Adam, shared by generator and critic
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    adam_eps: float = 1e-8
    # schedule
    batch_size: int = 4
    iterations: int = 1000
    d_steps_per_g: int = 1
    seed: int = 0
    checkpoint_every: int = 0
    # data
    resolution: int = 64
    sigma: float = 15.0
    shading_mode: str = "local"
    identity_shading: bool = False
    fixed_mask: bool = False
    mask_area: tuple[float, float] = (0.02, 0.30)
    mask_aspect: tuple[float, float] = (0.5, 2.0)
    # networks
    base_channels: int = 32
    max_channels: int = 512
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 16, 16)
    noise_mode: str = "layers"
    critic_channels: tuple[int, ...] = (16, 32, 64, 64)
    critic_local_channels: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        for name in ("mask_area", "mask_aspect", "dilations", "critic_channels", "critic_local_channels"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("lambda_gp", "alpha", "gamma", "lr", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if not 0.0 < self.beta2 < 1.0 or not 0.0 <= self.beta1 < 1.0:
            raise ContractError("need 0 <= beta1 < 1 and 0 < beta2 < 1")
        if self.batch_size < 1 or self.iterations < 0 or self.d_steps_per_g < 1:
            raise ContractError("batch_size and d_steps_per_g must be >= 1, iterations >= 0")
        if self.sigma < 0:
            raise ContractError("sigma must be >= 0")
        if self.shading_mode not in ("local", "global"):
            raise ContractError(f"unknown shading mode {self.shading_mode!r}")
        # build the sub-configs once so bad combinations fail early
        self.generator_config(), self.critic_config(), self.forge_config().mask.validate()

    def forge_config(self) -> ForgeConfig:
        return ForgeConfig(
            crop=self.resolution,
            sigma=self.sigma,
            shading_mode=self.shading_mode,
            color=ColorRanges.identity() if self.identity_shading else ColorRanges(),
            mask=MaskConfig(area=self.mask_area, aspect=self.mask_aspect),
            fixed_mask=self.fixed_mask,
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            base_resolution=self.resolution,
            base_channels=self.base_channels,
            max_channels=self.max_channels,
            dilations=self.dilations,
            noise_mode=self.noise_mode,
        )

    def critic_config(self) -> CriticConfig:
        return CriticConfig(
            base_resolution=self.resolution,
            global_channels=self.critic_channels,
            local_channels=self.critic_local_channels,
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# losses


def interpolate_pair(real, fake, u) -> np.ndarray:
    """``u * real + (1 - u) * fake`` with one ``u`` per batch element."""
    real, fake = np.asarray(real), np.asarray(fake)
    if real.shape != fake.shape:
        raise ContractError(f"cannot interpolate {real.shape} and {fake.shape}")
    u = np.asarray(u, dtype=real.dtype).reshape((-1,) + (1,) * (real.ndim - 1))
    return u * real + (1 - u) * fake


def reconstruction_loss(y, target) -> Tensor:
    y = ad.as_tensor(y)
    return ad.mean(ad.abs(ad.sub(y, np.asarray(target, dtype=y.dtype))))


def gradient_penalty(critic, real, fake, condition, u) -> tuple[Tensor, Tensor]:
    """Per-sample ``(||grad D(I_u)|| - 1)^2`` averaged, plus the per-sample norms."""
    mixed = ad.Tensor(interpolate_pair(real, fake, u), requires_grad=True)
    g = ad.input_gradient_graph(critic(mixed, condition), mixed)
    n = g.shape[0]
    # tiny floor keeps sqrt differentiable when the gradient vanishes
    norms = ad.sqrt(ad.add(ad.sum(ad.reshape(ad.mul(g, g), (n, -1)), axis=1), 1e-16))
    return ad.mean(ad.square(ad.sub(norms, 1.0))), norms


def critic_loss(critic, real, fake, condition, cfg: TrainConfig, u) -> tuple[Tensor, dict]:
    """Critic objective on a batch; ``fake`` is treated as a constant.

    ``critic(images, condition)`` must return an ``(N, 1)`` tensor.
    """
    fake = fake.value if isinstance(fake, Tensor) else np.asarray(fake)
    real = np.asarray(real, dtype=fake.dtype)
    d_fake = critic(ad.Tensor(fake), condition)
    d_real = critic(ad.Tensor(real), condition)
    gp, _ = gradient_penalty(critic, real, fake, condition, u)
    e_fake, e_real = ad.mean(d_fake), ad.mean(d_real)
    loss = ad.add(
        ad.add(ad.sub(e_fake, e_real), ad.mul(gp, cfg.lambda_gp)),
        ad.mul(ad.mean(ad.square(d_real)), cfg.gamma),
    )
    parts = {
        "wasserstein": e_real.item() - e_fake.item(),
        "gp": gp.item(),
        "d_loss": loss.item(),
    }
    if parts["gp"] < 0:
        raise AssertionError("gradient penalty went negative")
    return loss, parts


def generator_loss(critic, y, real, condition, cfg: TrainConfig) -> tuple[Tensor, dict]:
    y = ad.as_tensor(y)
    l_rec = reconstruction_loss(y, real)
    adv = ad.neg(ad.mean(critic(y, condition)))
    loss = ad.add(l_rec, ad.mul(adv, cfg.alpha))
    return loss, {"l_rec": l_rec.item(), "g_loss": loss.item()}


def adam_step(store: ParamStore, grads: dict, cfg: TrainConfig) -> ParamStore:
    """One bias-corrected Adam update of every parameter named in ``grads``, in place."""
    for name in grads:
        if name not in store:
            raise KeyError(f"gradient for unknown parameter {name!r}")
    store.step += 1
    t = store.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, g in grads.items():
        g = np.asarray(g, dtype=store.dtype)
        m, v = store.m[name], store.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p = store[name]
        p.value = p.value - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return store


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainState:
    cfg: TrainConfig
    generator: ParamStore
    critic: ParamStore
    iteration: int = 0


def init_state(cfg: TrainConfig) -> TrainState:
    rng = SeededRng(cfg.seed, "init")
    gen = init_generator(cfg.generator_config(), rng.child("generator"))
    crit = init_critic(cfg.critic_config(), rng.child("critic"))
    return TrainState(cfg, gen, crit, 0)


@contextlib.contextmanager
def _frozen(store: ParamStore):
    for t in store.values():
        t.requires_grad = False
    try:
        yield
    finally:
        for t in store.values():
            t.requires_grad = True


def _grad_norms(grads: dict) -> dict:
    return {k: float(np.sqrt(np.sum(np.square(g, dtype=np.float64)))) for k, g in grads.items()}


def _check_finite(state: TrainState, parts: dict, grads: dict, where: str):
    bad = [k for k, v in parts.items() if not math.isfinite(v)]
    bad += [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        diag = {"iteration": state.iteration, "stage": where, "losses": dict(parts), "grad_norms": _grad_norms(grads)}
        raise NonFiniteLossError(f"non-finite values at iteration {state.iteration} ({where}): {bad[:5]}", diag)


def _batch(corpus: Corpus, cfg: TrainConfig, iteration: int, dtype):
    ids = range(iteration * cfg.batch_size, (iteration + 1) * cfg.batch_size)
    samples = forge_batch(corpus, cfg.forge_config(), cfg.seed, ids)
    real = np.stack([s.ground_truth for s in samples]).astype(dtype)
    x = np.stack([s.input for s in samples]).astype(dtype)
    mask = np.stack([s.mask for s in samples]).astype(dtype)
    return real, x, mask


def train_step(state: TrainState, corpus: Corpus) -> dict:
    """One iteration: ``d_steps_per_g`` critic updates then one generator update."""
    cfg = state.cfg
    it = state.iteration
    gcfg, dcfg = cfg.generator_config(), cfg.critic_config()
    real, x, mask = _batch(corpus, cfg, it, state.generator.dtype)

    def critic(images, condition):
        return critic_forward(state.critic, images, condition, dcfg)

    noise = SeededRng(cfg.seed, ("noise", it))
    residual = generator_forward(state.generator, x, gcfg, noise)
    y = composite_output(residual, x[..., :3], real, mask)
    context = mask[..., 0] == 0
    if not np.array_equal(y.value[context], real[context]):
        raise AssertionError("composite changed context pixels")

    for k in range(cfg.d_steps_per_g):
        u = SeededRng(cfg.seed, ("gp-u", it, k)).uniform(0.0, 1.0, real.shape[0])
        d_loss, d_parts = critic_loss(critic, real, y.value, x, cfg, u)
        d_grads = ad.backward(d_loss, state.critic)
        _check_finite(state, d_parts, d_grads, "critic")
        adam_step(state.critic, d_grads, cfg)

    with _frozen(state.critic):
        g_loss, g_parts = generator_loss(critic, y, real, x, cfg)
        g_grads = ad.backward(g_loss, state.generator)
    _check_finite(state, g_parts, g_grads, "generator")
    adam_step(state.generator, g_grads, cfg)

    state.iteration += 1
    return {"iter": it, **g_parts, **d_parts}


def format_metrics(m: dict) -> str:
    return ", ".join([str(m["iter"])] + [f"{m[k]:.9g}" for k in METRIC_FIELDS[1:]])


def train(corpus: Corpus, cfg: TrainConfig | None = None, state: TrainState | None = None,
          log_path=None, checkpoint_path=None) -> tuple[TrainState, list[dict]]:
    """Run (or resume) training until ``cfg.iterations``.

    Metrics are appended to ``log_path`` one line per iteration; with
    ``checkpoint_path`` a checkpoint is written every ``checkpoint_every``
    iterations and at the end.
    """
    from .checkpoint import save_checkpoint

    if state is None:
        state = init_state(cfg)
    cfg = state.cfg
    if len(corpus) == 0:
        raise ContractError("empty corpus")
    history = []
    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        fresh = not log_path.exists() or log_path.stat().st_size == 0
        log_file = open(log_path, "a")
        if fresh:
            log_file.write("# " + ", ".join(METRIC_FIELDS) + "\n")
    try:
        while state.iteration < cfg.iterations:
            metrics = train_step(state, corpus)
            history.append(metrics)
            if log_file is not None:
                log_file.write(format_metrics(metrics) + "\n")
                log_file.flush()
            if metrics["iter"] % 50 == 0:
                log.info("iter %d  l_rec %.4f  W %.4f  gp %.4f", metrics["iter"], metrics["l_rec"], metrics["wasserstein"], metrics["gp"])
            if checkpoint_path is not None and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save_checkpoint(state, checkpoint_path)
    finally:
        if log_file is not None:
            log_file.close()
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path)
    return state, history


def read_metrics_log(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        row = {"iter": int(parts[0])}
        row.update({k: float(v) for k, v in zip(METRIC_FIELDS[1:], parts[1:])})
        rows.append(row)
    return rows

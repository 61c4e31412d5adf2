import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smartpaste.autodiff import ParamStore, Tensor
from smartpaste.models import (
    CriticConfig,
    GeneratorConfig,
    composite_output,
    critic_forward,
    generator_forward,
    init_critic,
    init_generator,
    mask_box,
    receptive_radius,
)
from smartpaste.tensor_core import ContractError, SeededRng

SMALL = dict(base_channels=4, dilations=(1, 2, 2, 1, 1, 2, 1))


def small_generator(noise_mode="layers", dtype=np.float64, seed=0, **kw):
    cfg = GeneratorConfig(noise_mode=noise_mode, **{**SMALL, **kw})
    return cfg, init_generator(cfg, SeededRng(seed, "init"), ParamStore(dtype))


def test_generator_parameter_names_and_shapes():
    cfg = GeneratorConfig()
    store = init_generator(cfg, SeededRng(0))
    names = list(store)
    assert names[:4] == ["g/enc1/down/w", "g/enc1/down/b", "g/enc1/conv/w", "g/enc1/conv/b"]
    assert sum(n.startswith("g/mid") for n in names) == 14
    assert store["g/enc1/down/w"].shape == (3, 3, 4, 32)
    assert store["g/mid1/w"].shape == (3, 3, 128, 128)
    assert store["g/dec1/up/w"].shape == (4, 4, 64, 256)
    assert store["g/dec3/conv/w"].shape == (3, 3, 32, 3)
    assert all(np.all(store[n].value == 0) for n in names if n.endswith("/b") or n.endswith("noise_scale"))
    # names are a pure function of the config
    assert names == list(init_generator(cfg, SeededRng(9)))


def test_he_init_scale():
    store = init_generator(GeneratorConfig(), SeededRng(0))
    w = store["g/mid1/w"].value
    want = np.sqrt(2.0 / (1.04 * 9 * 128))
    assert abs(w.std() / want - 1) < 0.02


def test_config_validation():
    with pytest.raises(ContractError):
        GeneratorConfig(base_resolution=60)
    with pytest.raises(ContractError):
        GeneratorConfig(dilations=(1, 2, 4))
    with pytest.raises(ContractError):
        GeneratorConfig(noise_mode="everywhere")
    assert GeneratorConfig(base_channels=256).channels == (256, 512, 512)
    assert GeneratorConfig(noise_mode="input_channel").in_channels == 5


@pytest.mark.parametrize("h, w", [(16, 16), (24, 40)])
def test_generator_output_shape(h, w):
    cfg, store = small_generator()
    x = SeededRng(1).uniform(0, 1, (2, h, w, 4))
    out = generator_forward(store, x, cfg, noise=0)
    assert out.shape == (2, h, w, 3)


def test_generator_rejects_indivisible_dims():
    cfg, store = small_generator()
    with pytest.raises(ContractError, match="divisible by 8"):
        generator_forward(store, np.zeros((1, 20, 16, 4)), cfg)
    with pytest.raises(ContractError):
        generator_forward(store, np.zeros((1, 16, 16, 3)), cfg)


def test_noise_enters_only_through_learned_scales():
    cfg, store = small_generator()
    x = SeededRng(1).uniform(0, 1, (1, 16, 16, 4))
    a = generator_forward(store, x, cfg, noise=1).value
    b = generator_forward(store, x, cfg, noise=2).value
    assert np.array_equal(a, b)  # scales start at zero
    for k in (1, 2, 3):
        store.assign(f"g/dec{k}/noise_scale", np.full(store[f"g/dec{k}/noise_scale"].shape, 0.5))
    a = generator_forward(store, x, cfg, noise=1).value
    assert np.array_equal(a, generator_forward(store, x, cfg, noise=1).value)
    assert not np.array_equal(a, generator_forward(store, x, cfg, noise=2).value)


def test_input_channel_noise_mode():
    cfg, store = small_generator("input_channel")
    x = SeededRng(1).uniform(0, 1, (1, 16, 16, 4))
    a = generator_forward(store, x, cfg, noise=1).value
    assert a.shape == (1, 16, 16, 3)
    assert not np.array_equal(a, generator_forward(store, x, cfg, noise=2).value)
    assert "g/dec1/noise_scale" in store and store["g/enc1/down/w"].shape[2] == 5


def test_noise_off_is_deterministic_without_seed():
    cfg, store = small_generator("off")
    x = SeededRng(1).uniform(0, 1, (1, 16, 16, 4))
    assert np.array_equal(generator_forward(store, x, cfg, noise=1).value, generator_forward(store, x, cfg, noise=7).value)


def test_generator_is_translation_covariant_away_from_borders():
    cfg, store = small_generator("off", dilations=(1, 1, 1, 1, 1, 1, 1))
    r = receptive_radius(cfg)
    width = 2 * r + 64
    big = SeededRng(3).uniform(0, 1, (1, 16, width + 8, 4))
    y1 = generator_forward(store, big[:, :, :width], cfg).value
    y2 = generator_forward(store, big[:, :, 8:width + 8], cfg).value
    cols = np.arange(r, width - r - 8)
    assert np.abs(y1[:, :, cols + 8] - y2[:, :, cols]).max() <= 1e-10


def test_receptive_radius_bounds_influence():
    cfg, store = small_generator("off", dilations=(1, 1, 1, 1, 1, 1, 1))
    r = receptive_radius(cfg)
    w = 2 * r + 40
    x = np.full((1, 8, w, 4), 0.3)
    base = generator_forward(store, x, cfg).value
    x[0, :, w // 2, :] += 1.0
    diff = np.abs(generator_forward(store, x, cfg).value - base).max(axis=(0, 1, 3))
    changed = np.flatnonzero(diff > 0)
    assert changed.size and np.abs(changed - w // 2).max() <= r


def test_receptive_radius_defaults():
    assert receptive_radius(GeneratorConfig()) == 560


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (2, 5, 5, 3), elements=st.floats(-3, 3)),
    arrays(np.float64, (2, 5, 5, 3), elements=st.floats(0, 1)),
    arrays(np.float64, (2, 5, 5, 3), elements=st.floats(0, 1)),
    arrays(np.float64, (2, 5, 5, 1), elements=st.sampled_from([0.0, 1.0])),
)
def test_composite_context_is_bit_exact(residual, source, context, mask):
    y = composite_output(Tensor(residual), source, context, mask).value
    ctx = mask[..., 0] == 0
    assert np.array_equal(y[ctx], context[ctx])
    inside = ~ctx
    assert np.allclose(y[inside], (residual + source)[inside])


def test_composite_context_survives_non_finite_residual():
    residual = np.full((1, 4, 4, 3), np.nan)
    mask = np.zeros((1, 4, 4, 1))
    mask[0, 1:3, 1:3] = 1
    ctx = np.random.default_rng(0).uniform(size=(1, 4, 4, 3))
    y = composite_output(Tensor(residual), ctx, ctx, mask).value
    assert np.array_equal(y[0, 0], ctx[0, 0]) and np.isnan(y[0, 1, 1]).all()


def test_composite_gradient_flows_only_inside_mask():
    from smartpaste.autodiff import grad, sum as ad_sum
    res = Tensor(np.zeros((1, 3, 3, 3)), requires_grad=True)
    mask = np.zeros((1, 3, 3, 1))
    mask[0, 1, 1] = 1
    (g,) = grad(ad_sum(composite_output(res, np.zeros((1, 3, 3, 3)), np.ones((1, 3, 3, 3)), mask)), [res])
    assert np.array_equal(g.value, np.broadcast_to(mask, (1, 3, 3, 3)))


def test_composite_shape_checks():
    with pytest.raises(ContractError, match="binary"):
        composite_output(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 3)), np.full((1, 2, 2, 1), 0.5))
    with pytest.raises(ContractError):
        composite_output(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 5, 3)), np.zeros((1, 4, 4, 1)))


# --- critic ----------------------------------------------------------------------------


def small_critic(seed=0):
    cfg = CriticConfig(base_resolution=32, global_channels=(4, 4, 8, 8), local_channels=(4, 8, 8), local_pad=4)
    return cfg, init_critic(cfg, SeededRng(seed, "critic"), ParamStore(np.float64))


def condition(n, res, seed=0):
    rng = SeededRng(seed, "cond")
    cond = rng.uniform(0, 1, (n, res, res, 4))
    cond[..., 3] = 0
    for b in range(n):
        y0, x0 = rng.integers(0, res - 8), rng.integers(0, res - 8)
        cond[b, y0:y0 + 6, x0:x0 + 7, 3] = 1
    return cond


def test_mask_box_oracle():
    m = np.zeros((20, 30))
    m[5:9, 10:12] = 1
    assert mask_box(m, 0) == (5, 9, 10, 12)
    assert mask_box(m, 7) == (0, 16, 3, 19)
    assert mask_box(np.zeros((6, 7)), 3) == (0, 6, 0, 7)


def test_critic_output_and_resolution_contract():
    cfg, store = small_critic()
    y = SeededRng(1).uniform(0, 1, (3, 32, 32, 3))
    out = critic_forward(store, y, condition(3, 32), cfg)
    assert out.shape == (3, 1)
    with pytest.raises(ContractError):
        critic_forward(store, y[:, :16, :16], condition(3, 16), cfg)


def test_critic_scores_samples_independently():
    cfg, store = small_critic()
    y = SeededRng(1).uniform(0, 1, (3, 32, 32, 3))
    cond = condition(3, 32)
    batch = critic_forward(store, y, cond, cfg).value
    solo = critic_forward(store, y[1:2], cond[1:2], cfg).value
    assert np.allclose(batch[1], solo[0], atol=1e-12)


def test_critic_dense_input_size():
    cfg = CriticConfig()
    store = init_critic(cfg, SeededRng(0))
    assert store["d/dense/w"].shape == (4 * 4 * 64 + 4 * 4 * 64, 1)
    assert store["d/global1/w"].shape == (3, 3, 7, 16) and store["d/local1/w"].shape == (3, 3, 7, 16)

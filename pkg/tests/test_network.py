import numpy as np
import pytest

from svehdr.errors import ConfigError, DimensionError
from svehdr.network import (ModelConfig, build_model, count_params, estimate_flops, extract_betas, model_forward,
                            named_config, param_shapes)
from svehdr.oracles import model_reference

# exact counts of the full-size variants, frozen from the layer arithmetic
PARAMS = {
    "rb": 1_220_995,
    "opt_2_2": 1_221_635,
    "opt_4_2": 1_224_707,
    "opt_4_4": 1_237_763,
    "opt_rggb": 1_229_827,
    "svc_d5": 1_227_011,
    "svc3": 1_225_475,
    "svc5": 1_233_667,
    "svc7": 1_245_955,
    "rb+egb": 1_849_907,
    "complete": 1_875_251,
    "multiplication": 1_885_699,
    "concatenation": 1_886_275,
}


def mini(**kw):
    base = dict(rb_blocks=2, egb_blocks=2, channels=4, egb_c=3, rb_head="svc5", egb_head="svc5")
    base.update(kw)
    return ModelConfig(**base)


@pytest.mark.parametrize("name", sorted(PARAMS))
def test_param_counts(name):
    assert count_params(named_config(name)) == PARAMS[name]


def test_rb_count_by_hand():
    c = 64
    head = 9 * c + c
    block = 2 * (9 * c * c + c)
    tail = 9 * c * c + c
    out = 9 * c * 3 + 3
    assert count_params(named_config("rb")) == head + 16 * block + tail + out


@pytest.mark.parametrize("cfg", [mini(), mini(rb_head="opt_4_2", egb_head="opt_rggb"),
                                 ModelConfig(rb_blocks=1, egb_blocks=0, channels=3, fusion="none")])
def test_count_matches_built_model(cfg):
    w = build_model(cfg)
    assert w.n_params() == count_params(cfg)
    assert list(w) == list(param_shapes(cfg))


def test_init_is_seeded_and_bounded():
    cfg = mini()
    a, b, c = build_model(cfg, seed=1), build_model(cfg, seed=1), build_model(cfg, seed=2)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert not np.array_equal(a["rb_block_1_conv1.weight"].data, c["rb_block_1_conv1.weight"].data)
    bound = np.sqrt(1.0 / (4 * 9))
    assert np.abs(a["rb_block_1_conv1.weight"].data).max() <= bound
    assert extract_betas(a) == [1.0, 1.0]


def test_forward_shape_and_alignment(rng):
    w = build_model(mini())
    out = model_forward(w, rng.random((2, 1, 8, 6)), np.ones((2, 1, 8, 6)))
    assert out.shape == (2, 3, 8, 6)
    with pytest.raises(DimensionError):
        model_forward(w, rng.random((1, 1, 6, 6)), np.ones((1, 1, 6, 6)))
    with pytest.raises(DimensionError):
        model_forward(w, rng.random((1, 1, 8, 6)), np.ones((1, 1, 8, 4)))


@pytest.mark.parametrize("cfg", [
    mini(),
    mini(rb_head="opt_base", egb_head="svc_d3"),
    mini(rb_head="opt_4_4", egb_head="opt_2_2"),
    ModelConfig(rb_blocks=2, egb_blocks=0, channels=4, fusion="none", rb_head="opt_rggb"),
    ModelConfig(rb_blocks=25, egb_blocks=0, channels=2, fusion="concat_input"),
    ModelConfig(rb_blocks=25, egb_blocks=0, channels=2, fusion="multiply_input"),
])
def test_forward_matches_straight_line_reference(rng, cfg):
    w = build_model(cfg, seed=3)
    e = rng.random((2, 1, 8, 8))
    m = (rng.random((2, 1, 8, 8)) > 0.2).astype(float)
    np.testing.assert_allclose(model_forward(w, e, m).data, model_reference(w, e, m), rtol=1e-10, atol=1e-12)


def test_zero_betas_reduce_to_reconstruction_branch(rng):
    full = build_model(mini(), seed=4)
    for i in (1, 2):
        full[f"beta_{i}"].data[...] = 0.0
    rb_cfg = ModelConfig(rb_blocks=2, egb_blocks=0, channels=4, rb_head="svc5", fusion="none")
    rb = build_model(rb_cfg)
    for k in rb:
        rb[k].data[...] = full[k].data
    e, m = rng.random((1, 1, 8, 4)), np.ones((1, 1, 8, 4))
    assert np.array_equal(model_forward(full, e, m).data, model_forward(rb, e, m).data)


def test_mask_only_reaches_egb():
    w = build_model(mini(), seed=5)
    e = np.full((1, 1, 8, 4), 0.5)
    a = model_forward(w, e, np.ones((1, 1, 8, 4))).data
    b = model_forward(w, e, np.zeros((1, 1, 8, 4))).data
    assert not np.array_equal(a, b)
    w0 = build_model(ModelConfig(rb_blocks=2, egb_blocks=0, channels=4, fusion="none"), seed=5)
    assert np.array_equal(model_forward(w0, e, np.ones((1, 1, 8, 4))).data,
                          model_forward(w0, e, np.zeros((1, 1, 8, 4))).data)


@pytest.mark.parametrize("kw", [
    dict(fusion="egb_beta", rb_blocks=3, egb_blocks=2),
    dict(fusion="none", egb_blocks=16),
    dict(fusion="concat_input", egb_blocks=0, rb_blocks=16),
    dict(fusion="gated"),
    dict(rb_head="svc4"),
    dict(channels=0),
])
def test_config_invariants(kw):
    with pytest.raises(ConfigError):
        ModelConfig(**kw)


def test_config_roundtrip():
    cfg = mini(beta_init=0.25, rb_head="svc_d7")
    assert ModelConfig.from_kv(cfg.to_kv()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_kv({"model.depth": "3"})


def test_betas_need_egb():
    with pytest.raises(ConfigError):
        extract_betas(build_model(ModelConfig(rb_blocks=1, egb_blocks=0, channels=2, fusion="none")))


def test_flops_scale_with_pixels():
    for name in ("rb", "complete", "opt_4_4", "opt_rggb"):
        cfg = named_config(name)
        assert estimate_flops(cfg, 480, 480) == 16 * estimate_flops(cfg, 120, 120)
    with pytest.raises(DimensionError):
        estimate_flops(named_config("rb"), 10, 10)


def test_rb_flops_per_pixel_equal_param_count():
    # every layer of the plain model costs its own parameter count per output pixel
    cfg = named_config("rb")
    assert estimate_flops(cfg, 4, 2) == 8 * count_params(cfg)

import math

import numpy as np
import pytest

from svehdr.errors import ConfigError, FormatError, ValidationError
from svehdr.radiometry import (Crf, NetworkDomain, RadianceImage, denormalize, exposure_mask, gray_world,
                               half_lsb, normalize_for_network, read_crf, to_radiance, tonemap_display, write_crf)
from svehdr.sve import BayerFrame, exposure_map, gen_synthetic_scene, simulate_from_scene


def frame_with(values, tau_s=1.0, tau_l=16.0, bits=8):
    values = np.asarray(values, dtype=np.int64)
    return BayerFrame(values, bits, "RGGB", exposure_map(values.shape[0], tau_s, tau_l))


# alpha * 255 = 9.996 and (1 - alpha) * 255 = 245.004
@pytest.mark.parametrize("z,row,want", [(9, 0, 0.0), (10, 0, 1.0), (245, 2, 1.0), (246, 2, 0.0)])
def test_mask_boundaries(z, row, want):
    vals = np.zeros((4, 2), dtype=np.int64)
    vals[row] = z
    assert exposure_mask(frame_with(vals), 0.0392)[row, 0] == want


def test_mask_rows_use_their_own_rule():
    vals = np.array([[0, 255], [0, 255], [0, 255], [0, 255]])
    m = exposure_mask(frame_with(vals))
    # dark pixels are unreliable only on short rows, bright ones only on long rows
    assert np.array_equal(m, [[0, 1], [0, 1], [1, 0], [1, 0]])


def test_soft_masks():
    vals = np.array([[0, 255], [127, 128], [0, 255], [64, 191]])
    tri = exposure_mask(frame_with(vals), weighting="debevec_triangle")
    assert tri[0, 0] == 0 and tri[0, 1] == 0
    assert math.isclose(tri[1, 0], 127 / 127.5)
    gau = exposure_mask(frame_with(vals), weighting="robertson_gaussian")
    assert math.isclose(gau[1, 0], math.exp(-4 * 0.25 / 127.5 ** 2))
    assert gau[0, 0] == pytest.approx(math.exp(-4))
    assert np.all((gau > 0) & (gau <= 1))


@pytest.mark.parametrize("alpha", [0.0, 0.5, -0.1])
def test_mask_alpha_range(alpha):
    with pytest.raises(ValidationError):
        exposure_mask(frame_with(np.zeros((4, 2))), alpha)


def test_mask_unknown_weighting():
    with pytest.raises(ValidationError):
        exposure_mask(frame_with(np.zeros((4, 2))), weighting="hat")


def test_crf_parse_and_inverse():
    x = np.linspace(0, 1, 101)
    for crf in (Crf.parse("linear"), Crf.parse("gamma:2.2")):
        np.testing.assert_allclose(crf.inverse(crf.forward(x)), x, atol=1e-12)
    assert Crf.parse("gamma:2.2").forward(np.array([0.25]))[0] == pytest.approx(0.25 ** (1 / 2.2))
    with pytest.raises(ConfigError):
        Crf.parse("sigmoid")
    with pytest.raises(ConfigError):
        Crf("gamma", gamma=0.0)


def test_crf_file_roundtrip(tmp_path):
    src = Crf("gamma", gamma=2.0)
    write_crf(tmp_path / "crf.txt", src, 8)
    text = (tmp_path / "crf.txt").read_text().split()
    assert text[:3] == ["CRF", "v1", "bits=8"] and len(text) == 3 + 3 * 256
    tab = read_crf(tmp_path / "crf.txt")
    knots = np.linspace(0, 1, 256)
    np.testing.assert_allclose(tab.forward(knots, np.zeros(256, int)), src.forward(knots), atol=1e-15)
    np.testing.assert_allclose(tab.inverse(src.forward(knots), np.ones(256, int)), knots, atol=1e-12)
    assert Crf.parse(f"file:{tmp_path / 'crf.txt'}").kind == "tabulated"


def test_crf_file_errors(tmp_path):
    (tmp_path / "a.txt").write_text("CRF v2 bits=1\n0 1 0 1 0 1\n")
    with pytest.raises(FormatError):
        read_crf(tmp_path / "a.txt")
    (tmp_path / "b.txt").write_text("CRF v1 bits=1\n0 1 0 1\n")
    with pytest.raises(FormatError):
        read_crf(tmp_path / "b.txt")


def test_non_monotone_crf_rejected():
    crf = Crf("tabulated", table=np.array([0.0, 0.6, 0.5, 1.0]))
    assert not crf.is_monotone()
    with pytest.raises(ValidationError):
        crf.inverse(np.array([0.3]))
    with pytest.raises(ValidationError):
        to_radiance(frame_with(np.zeros((4, 2))), crf)


def test_to_radiance_known_values():
    vals = np.array([[255, 0], [51, 0], [255, 0], [51, 0]])
    r = to_radiance(frame_with(vals, tau_s=0.5, tau_l=2.0), Crf("linear"))
    assert r.domain == "log"
    assert math.isclose(r.values[0, 0], math.log(1.0 / 0.5))
    assert math.isclose(r.values[2, 0], math.log(1.0 / 2.0))
    assert math.isclose(r.values[1, 0], math.log(0.2 / 0.5))
    # zero codes sit at half a quantization step
    assert math.isclose(r.values[0, 1], math.log(half_lsb(8) / 0.5))
    assert np.all(np.isfinite(r.values))


@pytest.mark.parametrize("crf,slope", [(Crf("linear"), 1.0), (Crf("gamma", gamma=2.2), 2.2)])
def test_radiance_roundtrip_within_quantization(crf, slope):
    scene = gen_synthetic_scene(11, 64, 64, 8.0)
    frame, _ = simulate_from_scene(scene, crf, 1.0, 16.0, 8)
    est = to_radiance(frame, crf).linear()
    chan = np.tile([[0, 1], [1, 2]], (32, 32))
    e = np.take_along_axis(scene, chan[..., None], axis=2)[..., 0]
    good = (exposure_mask(frame) == 1) & (frame.values > 0) & (frame.values < 255)
    bound = slope / 255 * max(1 / frame.exposure_map.tau_s, 1 / frame.exposure_map.tau_l)
    assert good.mean() > 0.5
    assert np.max(np.abs(est - e)[good]) <= bound


def test_network_domain_roundtrip(rng):
    e = rng.random((8, 6, 3)) * 0.9 + 0.01
    for kind in ("linear", "log_norm"):
        dom = NetworkDomain.for_exposures(1.0, 16.0, 8, kind=kind)
        x = normalize_for_network(RadianceImage(e), dom)
        assert x.shape == (1, 3, 8, 6) and x.min() >= 0 and x.max() <= 1
        np.testing.assert_allclose(denormalize(x, dom)[0].transpose(1, 2, 0), e, rtol=1e-12)
    dom = NetworkDomain.for_exposures(0.5, 8.0, 8)
    assert dom.e_max == 2.0 and math.isclose(dom.e_min, half_lsb(8) / 8.0)


def test_tonemap_shape_and_black():
    assert tonemap_display(np.zeros((4, 6, 3))).dtype == np.uint8
    assert not tonemap_display(np.zeros((4, 6, 3))).any()
    out = tonemap_display(np.linspace(0.01, 10, 4 * 6 * 3).reshape(4, 6, 3))
    assert out.shape == (4, 6, 3) and out.dtype == np.uint8


def test_tonemap_monotone_on_gray():
    ramp = np.repeat(np.geomspace(1e-3, 1e3, 50)[None, :, None], 3, axis=2)
    out = tonemap_display(ramp)[0, :, 0].astype(int)
    assert np.all(np.diff(out) >= 0) and out[-1] > out[0]


def test_gray_world_balances_means(rng):
    img = rng.random((5, 5, 3)) * np.array([1.0, 2.0, 0.5])
    means = gray_world(img).reshape(-1, 3).mean(axis=0)
    np.testing.assert_allclose(means, means.mean(), rtol=1e-12)

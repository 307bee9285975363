import math

import numpy as np
import pytest

from svehdr import autograd as ag
from svehdr.autograd import Tensor
from svehdr.errors import DimensionError, FormatError, ValidationError
from svehdr.losses import color_loss, l1_loss, total_loss
from svehdr.metrics import (PSNR_CAP, MetricReport, PuTable, compute_metrics, default_pu_table, pu_encode,
                            pu_from_csf, read_pu_table, ssim, write_pu_table)
from svehdr.oracles import color_loop, l1_loop, psnr_loop, ssim_loop


def pair(rng, shape=(2, 3, 5, 4)):
    return rng.random(shape), rng.random(shape)


def test_l1_trivial_cases():
    z = np.zeros((1, 3, 2, 2))
    assert l1_loss(z, z).item() == 0.0
    assert l1_loss(np.ones((1, 3, 2, 2)), z).item() == 1.0


def test_l1_matches_loop(rng):
    p, g = pair(rng)
    assert abs(l1_loss(p, g).item() - l1_loop(p, g)) <= 1e-12


def test_color_trivial_cases():
    p = np.zeros((1, 3, 2, 2))
    p[:, 0] = 1.0
    g = np.zeros((1, 3, 2, 2))
    g[:, 1] = 1.0
    assert color_loss(p, g).item() == 1.0
    q = np.random.default_rng(0).random((1, 3, 2, 2)) + 0.1
    assert abs(color_loss(q, 2 * q).item()) < 1e-7


def test_color_matches_loop(rng):
    p, g = pair(rng)
    assert abs(color_loss(p, g).item() - color_loop(p, g)) <= 1e-10


def test_color_scale_invariance(rng):
    p, g = pair(rng, (1, 3, 6, 6))
    s = rng.uniform(0.5, 2.0, size=(1, 1, 6, 6))
    assert abs(color_loss(p, s * g).item() - color_loss(p, g).item()) <= 1e-6
    assert abs(color_loss(s * p, g).item() - color_loss(p, g).item()) <= 1e-6


def test_color_zero_vectors_finite():
    z = np.zeros((1, 3, 2, 2))
    x = Tensor(z, requires_grad=True)
    loss = color_loss(x, z)
    assert loss.item() == 1.0
    ag.backward(loss)
    assert np.all(np.isfinite(x.grad))


def test_total_composition(rng):
    p, g = pair(rng)
    lv = total_loss(p, g)
    assert lv.lam == 0.1
    assert lv.total.item() == lv.l1.item() + 0.1 * lv.color.item()
    assert total_loss(p, g, 0.0).total.item() == lv.l1.item()
    with pytest.raises(ValidationError):
        total_loss(p, g, -1.0)


def test_total_plug_in():
    # pixel 1 is parallel with |diff| sum 0.6, pixel 2 orthogonal with |diff| sum 0.6: l1 = 1.2 / 6, color = 1 / 2
    p = np.zeros((1, 3, 1, 2))
    g = np.zeros((1, 3, 1, 2))
    p[0, :, 0, 0] = [0.6, 0.0, 0.0]
    g[0, :, 0, 0] = [1.2, 0.0, 0.0]
    p[0, :, 0, 1] = [0.3, 0.0, 0.0]
    g[0, :, 0, 1] = [0.0, 0.3, 0.0]
    lv = total_loss(p, g)
    assert math.isclose(lv.l1.item(), 0.2, rel_tol=1e-12)
    assert math.isclose(lv.color.item(), 0.5, rel_tol=1e-7)
    assert math.isclose(lv.total.item(), 0.25, rel_tol=1e-7)


def test_loss_shape_errors():
    with pytest.raises(DimensionError):
        l1_loss(np.zeros((1, 3, 2, 2)), np.zeros((1, 3, 2, 4)))
    with pytest.raises(DimensionError):
        color_loss(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 2, 2)))


def test_pu_identity_and_monotone(rng):
    ident = PuTable.identity()
    x = rng.random((4, 5))
    assert np.array_equal(pu_encode(x, ident), x)
    assert np.all(pu_encode(np.full((3, 3), 0.3), ident) == pu_encode(np.array(0.3), ident))
    table = default_pu_table()
    a = rng.random(1000) * 2
    b = a + rng.random(1000) * 0.5
    assert np.all(pu_encode(b, table) >= pu_encode(a, table))
    assert pu_encode(np.array([0.0]), table)[0] == table.pu[0]
    with pytest.raises(ValidationError):
        pu_encode(np.array([-1.0]), table)


def test_pu_table_validation(tmp_path):
    with pytest.raises(ValidationError):
        PuTable([0.0, 1.0, 0.5], [0.0, 1.0, 2.0])
    with pytest.raises(ValidationError):
        PuTable([0.0, 1.0], [1.0, 1.0])
    (tmp_path / "p.txt").write_text("PU v0\n0 0\n1 1\n")
    with pytest.raises(FormatError):
        read_pu_table(tmp_path / "p.txt")


def test_default_table_is_the_csf_fit(tmp_path):
    shipped = default_pu_table()
    fresh = pu_from_csf()
    assert shipped.linear.size == 4096
    np.testing.assert_allclose(shipped.linear, fresh.linear, rtol=1e-9)
    np.testing.assert_allclose(shipped.pu, fresh.pu, rtol=1e-9, atol=1e-9)
    ratios = shipped.linear[1:] / shipped.linear[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-8)
    write_pu_table(tmp_path / "t.txt", shipped)
    again = read_pu_table(tmp_path / "t.txt")
    assert np.array_equal(again.linear, shipped.linear) and again.tag == shipped.tag


def test_metrics_identity(rng):
    gt = rng.random((16, 16, 3))
    rep = compute_metrics(gt, gt, default_pu_table())
    r = rep.rows[0]
    assert r["mae"] == 0 and r["mse"] == 0
    assert r["psnr_rgb"] == PSNR_CAP and r["psnr_y"] == PSNR_CAP
    assert r["ssim_rgb"] == 1.0 and r["ssim_y"] == 1.0


def test_metrics_constant_shift(rng):
    gt = rng.random((16, 16, 3)) * 0.5
    delta = 0.125
    r = compute_metrics(gt + delta, gt, PuTable.identity(2.0)).rows[0]
    assert math.isclose(r["mae"], delta, rel_tol=1e-12)
    assert math.isclose(r["mse"], delta ** 2, rel_tol=1e-12)


def test_metrics_match_reference_implementations(rng):
    gt = rng.random((20, 18, 3))
    pred = np.clip(gt + 0.05 * rng.standard_normal(gt.shape), 0, 1)
    r = compute_metrics(pred, gt, PuTable.identity()).rows[0]
    assert abs(r["psnr_rgb"] - psnr_loop(pred, gt, 1.0)) <= 1e-6
    ssim_ref = np.mean([ssim_loop(pred[..., c], gt[..., c], 1.0) for c in range(3)])
    assert abs(r["ssim_rgb"] - ssim_ref) <= 1e-6
    yw = np.array([0.299, 0.587, 0.114])
    assert abs(r["psnr_y"] - psnr_loop(pred @ yw, gt @ yw, 1.0)) <= 1e-6
    assert abs(r["ssim_y"] - ssim_loop(pred @ yw, gt @ yw, 1.0)) <= 1e-6


def test_ssim_agrees_with_skimage(rng):
    metrics = pytest.importorskip("skimage.metrics")
    x, y = rng.random((24, 24)), rng.random((24, 24))
    ref = metrics.structural_similarity(x, y, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False)
    # skimage averages over the cropped 'same' map, which for an 11x11 window is the 'valid' region
    assert abs(ssim(x, y, 1.0) - ref) <= 1e-6


def test_ssim_bounds(rng):
    x = rng.random((12, 12))
    assert ssim(x, x, 1.0) == 1.0
    assert -1.0 <= ssim(x, 1 - x, 1.0) <= 1.0
    with pytest.raises(DimensionError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)), 1.0)


def test_metric_domain_errors(rng):
    with pytest.raises(DimensionError):
        compute_metrics(np.zeros((16, 16, 3)), np.zeros((16, 16)), PuTable.identity())
    with pytest.raises(ValidationError):
        compute_metrics(-np.ones((16, 16, 3)), np.zeros((16, 16, 3)), PuTable.identity())


def test_report_tsv_roundtrip(rng):
    rep = MetricReport(meta={"split": "test"})
    for name in ("a", "b"):
        gt = rng.random((12, 12, 3))
        rep.extend(compute_metrics(np.clip(gt + 0.01, 0, 1), gt, PuTable.identity(), name=name))
    text = rep.to_tsv()
    lines = text.splitlines()
    assert lines[0] == "# split=test" and lines[-1].startswith("mean\t")
    back = MetricReport.from_tsv(text)
    assert [r["name"] for r in back.rows] == ["a", "b"]
    assert math.isclose(back.aggregate()["mae"], rep.aggregate()["mae"], rel_tol=1e-9)

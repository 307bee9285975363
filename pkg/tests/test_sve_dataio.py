import numpy as np
import pytest

from svehdr.errors import DimensionError, FormatError, ValidationError
from svehdr.imageio import image_io, read_kv, read_pfm, read_png, write_kv, write_pfm, write_png
from svehdr.oracles import merge_loop
from svehdr.radiometry import Crf
from svehdr.sve import (BayerFrame, ExposurePair, cfa_channel_map, cfa_color, exposure_map, gen_synthetic_scene,
                        merge_ground_truth, mosaic, quantize, simulate_dual_time, simulate_from_scene)


def test_exposure_rows():
    em = exposure_map(8, 0.25, 4.0)
    assert list(em.times) == [0.25, 0.25, 4.0, 4.0] * 2
    assert em.ratio == 16.0
    swapped = exposure_map(8, 0.25, 4.0, short_first=False)
    assert list(swapped.times) == [4.0, 4.0, 0.25, 0.25] * 2


@pytest.mark.parametrize("args", [(6, 1.0, 2.0), (0, 1.0, 2.0), (4, 2.0, 1.0), (4, 0.0, 1.0)])
def test_exposure_map_rejects(args):
    with pytest.raises(ValidationError):
        exposure_map(*args)


def test_cfa_layout():
    assert [cfa_color(1, 1), cfa_color(1, 2), cfa_color(2, 1), cfa_color(2, 2)] == ["R", "G", "G", "B"]
    assert cfa_color(3, 3) == "R" and cfa_color(1, 1, "BGGR") == "B"
    assert np.array_equal(cfa_channel_map(2, 4, "GRBG"), [[1, 0, 1, 0], [2, 1, 2, 1]])
    with pytest.raises(ValidationError):
        cfa_color(1, 1, "RGBW")


def test_mosaic_picks_one_channel(rng):
    rgb = rng.random((4, 4, 3))
    m = mosaic(rgb)
    assert m[0, 0] == rgb[0, 0, 0] and m[0, 1] == rgb[0, 1, 1] and m[1, 1] == rgb[1, 1, 2]


def test_bayer_frame_validation():
    em = exposure_map(4, 1.0, 2.0)
    with pytest.raises(DimensionError):
        BayerFrame(np.zeros((4, 3), dtype=np.int64), 8, "RGGB", em)
    with pytest.raises(ValidationError):
        BayerFrame(np.full((4, 2), 256), 8, "RGGB", em)
    frame = BayerFrame(np.zeros((8, 4), dtype=np.int64), 8, "RGGB", exposure_map(8, 1.0, 2.0))
    assert frame.crop(4, 2, 4, 2).shape == (4, 2)
    with pytest.raises(DimensionError):
        frame.crop(2, 0, 4, 2)


def test_quantize_rounds_half_up():
    assert list(quantize(np.array([0.0, 0.5 / 255, 0.49 / 255, 1.0, 1.5]), 8)) == [0, 1, 0, 255, 255]


def test_dual_time_interleaves_rows():
    short = np.full((4, 2, 3), 10)
    long_ = np.full((4, 2, 3), 200)
    frame = simulate_dual_time(ExposurePair(short, long_, 1.0, 8.0, 8))
    assert np.array_equal(frame.values[:, 0], [10, 10, 200, 200])


def test_simulate_from_scene_codes():
    scene = np.full((4, 2, 3), 0.05)
    frame, gt = simulate_from_scene(scene, Crf("linear"), 1.0, 16.0, 8)
    assert np.array_equal(frame.values[:, 0], [13, 13, 204, 204])  # 12.75 -> 13, 204.0
    assert np.array_equal(gt.linear(), scene)
    with pytest.raises(ValidationError):
        simulate_from_scene(np.zeros((4, 2, 3)), Crf("linear"), 1.0, 2.0, 8)


def test_merge_matches_loop(rng):
    for crf in (Crf("linear"), Crf("gamma", gamma=2.2)):
        zs = rng.integers(0, 256, size=(6, 5, 3))
        zl = rng.integers(0, 256, size=(6, 5, 3))
        zs[0, 0], zl[0, 0] = 0, 0
        zs[1, 1], zl[1, 1] = 255, 255
        zs[2, 2], zl[2, 2] = 0, 255
        got = merge_ground_truth(ExposurePair(zs, zl, 1.0, 4.0, 8), crf).linear()
        np.testing.assert_allclose(got, merge_loop(zs, zl, 1.0, 4.0, 8, crf), rtol=1e-9)


def test_merge_recovers_exact_radiance():
    # codes that quantize exactly: e * dt * 255 integral on both exposures
    e = np.full((4, 2, 3), 8.0 / 255)
    pair = ExposurePair(quantize(e * 1.0, 8), quantize(e * 4.0, 8), 1.0, 4.0, 8)
    np.testing.assert_allclose(merge_ground_truth(pair, Crf("linear")).linear(), e, rtol=1e-12)


def test_merge_fallbacks():
    zs = np.array([[[0, 255, 0]]]).repeat(4, 0)
    zl = np.array([[[0, 255, 255]]]).repeat(4, 0)
    out = merge_ground_truth(ExposurePair(zs, zl, 1.0, 4.0, 8), Crf("linear")).linear()[0, 0]
    half = 0.5 / 255
    np.testing.assert_allclose(out, [half / 4.0, 1.0, half], rtol=1e-12)


def test_synthetic_scene_properties():
    a = gen_synthetic_scene(3, 64, 48, 8.0)
    assert a.shape == (64, 48, 3)
    assert np.array_equal(a, gen_synthetic_scene(3, 64, 48, 8.0))
    assert not np.array_equal(a, gen_synthetic_scene(4, 64, 48, 8.0))
    assert a.max() == 1.0 and a.min() > 0
    assert a.max() / a.min() >= 2 ** 8
    with pytest.raises(ValidationError):
        gen_synthetic_scene(0, 8, 8, 0.5)


def test_pfm_layout_and_roundtrip(tmp_path, rng):
    img = rng.random((3, 4, 3)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"PF\n4 3\n-1.0\n")
    # first stored row is the bottom image row
    first = np.frombuffer(raw[len(b"PF\n4 3\n-1.0\n"):][: 4 * 3 * 4], dtype="<f4").reshape(4, 3)
    assert np.array_equal(first, img[-1])
    assert np.array_equal(read_pfm(tmp_path / "a.pfm"), img)
    gray = rng.random((5, 2)).astype(np.float32)
    write_pfm(tmp_path / "g.pfm", gray, little_endian=False)
    assert (tmp_path / "g.pfm").read_bytes().startswith(b"Pf\n2 5\n1.0\n")
    assert np.array_equal(read_pfm(tmp_path / "g.pfm"), gray)


def test_pfm_errors(tmp_path):
    (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n-1.0\n" + b"\0" * 12)
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "bad.pfm")
    (tmp_path / "short.pfm").write_bytes(b"PF\n2 2\n-1.0\n" + b"\0" * 20)
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "short.pfm")
    (tmp_path / "hdr.pfm").write_bytes(b"PF\n2")
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "hdr.pfm")


def test_png_roundtrip(tmp_path, rng):
    rgb8 = rng.integers(0, 256, size=(4, 6, 3)).astype(np.uint8)
    write_png(tmp_path / "a.png", rgb8)
    assert np.array_equal(read_png(tmp_path / "a.png"), rgb8)
    raw16 = rng.integers(0, 1024, size=(8, 4)).astype(np.uint16)
    image_io(tmp_path / "b.png", "write", raw16, bits=16)
    back = image_io(tmp_path / "b.png")
    assert back.dtype == np.uint16 and np.array_equal(back, raw16)
    with pytest.raises(FormatError):
        write_png(tmp_path / "c.png", np.full((2, 2), 300), bits=8)
    with pytest.raises(FormatError):
        image_io(tmp_path / "c.exr")


def test_kv_roundtrip(tmp_path):
    write_kv(tmp_path / "a.cfg", {"x": 1, "y.z": "abc"})
    (tmp_path / "a.cfg").write_text((tmp_path / "a.cfg").read_text() + "# note\n\n")
    assert read_kv(tmp_path / "a.cfg") == {"x": "1", "y.z": "abc"}
    (tmp_path / "b.cfg").write_text("novalue\n")
    with pytest.raises(FormatError):
        read_kv(tmp_path / "b.cfg")

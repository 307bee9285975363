"""Slow, direct reference implementations and the self-check suites built on them.

Every function here is written from the defining formula with explicit
loops or a deliberately different evaluation order, so agreement with the
fast paths is meaningful. Used by the test suite and by ``svehdr check``.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .radiometry import Crf
from .svc import FULL_MAP, TIED_MAP, HeadSpec, pattern_index

# ------------------------------------------------------------ convolutions


def conv2d_loop(x, w, b=None, stride=1, pad=0) -> np.ndarray:
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((bsz, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, cout, oh, ow))
    for n in range(bsz):
        for o in range(cout):
            for r in range(oh):
                for c in range(ow):
                    acc = 0.0 if b is None else float(b[o])
                    for i in range(cin):
                        for p in range(kh):
                            for q in range(kw):
                                acc += w[o, i, p, q] * xp[n, i, r * stride + p, c * stride + q]
                    out[n, o, r, c] = acc
    return out


def pixel_shuffle_loop(x, f: int) -> np.ndarray:
    """(B, C*f*f, H, W) -> (B, C, H*f, W*f); channel c*f*f + i*f + j goes to offset (i, j)."""
    bsz, cf, h, w = x.shape
    c = cf // (f * f)
    out = np.zeros((bsz, c, h * f, w * f))
    for n in range(bsz):
        for ch in range(c):
            for i in range(f):
                for j in range(f):
                    for r in range(h):
                        for s in range(w):
                            out[n, ch, r * f + i, s * f + j] = x[n, ch * f * f + i * f + j, r, s]
    return out


def svc_loop(x, w, b, bank_map=FULL_MAP) -> np.ndarray:
    """Direct per-pixel evaluation: each output (k, v) uses the bank of its pattern."""
    bsz, cin, h, wd = x.shape
    _, cout, _, k, _ = w.shape
    pad = (k - 1) // 2
    xp = np.zeros((bsz, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad : pad + h, pad : pad + wd] = x
    out = np.zeros((bsz, cout, h, wd))
    for r in range(h):
        for c in range(wd):
            bank = bank_map[pattern_index(r, c) - 1]
            window = xp[:, :, r : r + k, c : c + k]
            for o in range(cout):
                out[:, o, r, c] = (window * w[bank, o]).sum(axis=(1, 2, 3)) + b[bank, o]
    return out


def conv_shift(x, w, b, stride=1, pad=0) -> np.ndarray:
    """Convolution as a sum of shifted, channel-mixed copies of the input (no im2col)."""
    cout, cin, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (xp.shape[2] - kh) // stride + 1
    ow = (xp.shape[3] - kw) // stride + 1
    out = np.zeros((x.shape[0], cout, oh, ow)) + b.reshape(1, -1, 1, 1)
    for p in range(kh):
        for q in range(kw):
            patch = xp[:, :, p : p + stride * (oh - 1) + 1 : stride, q : q + stride * (ow - 1) + 1 : stride]
            out += np.einsum("oi,nihw->nohw", w[:, :, p, q], patch)
    return out


def svc_select(x, w, b, bank_map=FULL_MAP) -> np.ndarray:
    """Run every bank over the whole image, then pick each pixel's bank."""
    k = w.shape[-1]
    full = np.stack([conv_shift(x, w[i], b[i], 1, (k - 1) // 2) for i in range(w.shape[0])])
    out = np.empty(full.shape[1:])
    for a in range(4):
        for c in range(2):
            out[:, :, a::4, c::2] = full[bank_map[2 * a + c], :, :, a::4, c::2]
    return out


def first_layer_reference(spec: HeadSpec, x, w, b) -> np.ndarray:
    if spec.kind == "svc":
        return svc_select(x, w, b, FULL_MAP)
    if spec.kind == "svc_d":
        return svc_select(x, w, b, TIED_MAP)
    k, stride, pad, _, f = spec.geometry()
    if spec.kind == "opt_rggb":
        x = np.stack([x[:, 0, i::2, j::2] for i in (0, 1) for j in (0, 1)], axis=1)
    y = conv_shift(x, w, b, stride, pad)
    return pixel_shuffle_loop(y, f) if f > 1 else y


def model_reference(weights, e_norm, mask) -> np.ndarray:
    """Straight-line numpy forward of the whole network (no tape, no im2col)."""
    cfg = weights.config
    p = {k: t.data.astype(np.float64) for k, t in weights.params.items()}
    x = np.asarray(e_norm, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)

    def c3(t, name):
        return conv_shift(t, p[f"{name}.weight"], p[f"{name}.bias"], 1, 1)

    if cfg.fusion == "multiply_input":
        rb_in = x * m
    elif cfg.fusion == "concat_input":
        rb_in = np.concatenate([x, m], axis=1)
    else:
        rb_in = x
    h0 = first_layer_reference(HeadSpec.parse(cfg.rb_head), rb_in, p["rb_head.weight"], p["rb_head.bias"])
    g = None
    if cfg.has_egb:
        g = first_layer_reference(HeadSpec.parse(cfg.egb_head), x * m, p["egb_head.weight"], p["egb_head.bias"])
    h = h0
    for i in range(1, cfg.rb_blocks + 1):
        h = h + c3(np.maximum(c3(h, f"rb_block_{i}_conv1"), 0), f"rb_block_{i}_conv2")
        if g is not None:
            g = c3(np.maximum(c3(g, f"egb_block_{i}_conv1"), 0), f"egb_block_{i}_conv2")
            h = h + p[f"beta_{i}"] * g
    t = c3(h, "rb_tail") + h0
    return c3(t, "rb_out")


# ------------------------------------------------------------- radiometry


def mask_loop(z, row_is_long, alpha: float, bits: int) -> np.ndarray:
    zmax = 2 ** bits - 1
    out = np.ones(z.shape)
    for r in range(z.shape[0]):
        for c in range(z.shape[1]):
            v = z[r, c]
            if row_is_long[r] and v >= (1 - alpha) * zmax:
                out[r, c] = 0.0
            elif not row_is_long[r] and v <= alpha * zmax:
                out[r, c] = 0.0
    return out


def merge_loop(short, long, tau_s: float, tau_l: float, bits: int, crf: Crf) -> np.ndarray:
    """Per-pixel weighted log merge with the hat weight min(z, zmax - z)."""
    zmax = 2 ** bits - 1
    floor = 0.5 / zmax
    out = np.zeros(short.shape)
    for idx in np.ndindex(short.shape):
        ch = idx[-1]
        num = den = 0.0
        logs = []
        for z, dt in ((short[idx], tau_s), (long[idx], tau_l)):
            y = max(z / zmax, floor)
            e = crf.inverse(np.array([y]), np.array([ch]))[0]
            le = math.log(e) - math.log(dt)
            wgt = min(z, zmax - z)
            num += wgt * le
            den += wgt
            logs.append(le)
        if den > 0:
            out[idx] = math.exp(num / den)
        elif short[idx] == 0 and long[idx] == 0:
            out[idx] = math.exp(logs[1])
        else:
            out[idx] = math.exp(logs[0])
    return out


# ------------------------------------------------------------ loss/metric


def l1_loop(pred, gt) -> float:
    total = 0.0
    for idx in np.ndindex(pred.shape):
        total += abs(pred[idx] - gt[idx])
    return total / pred.size


def color_loop(pred, gt, eps: float = 1e-8) -> float:
    bsz, _, h, w = pred.shape
    total = 0.0
    for n in range(bsz):
        for r in range(h):
            for c in range(w):
                a = [pred[n, ch, r, c] for ch in range(3)]
                b = [gt[n, ch, r, c] for ch in range(3)]
                dot = sum(i * j for i, j in zip(a, b))
                na = math.sqrt(sum(i * i for i in a))
                nb = math.sqrt(sum(j * j for j in b))
                total += 1.0 - dot / (na * nb + eps)
    return total / (bsz * h * w)


def ssim_loop(x, y, data_range: float, size: int = 11, sigma: float = 1.5, k1=0.01, k2=0.03) -> float:
    """Windowed SSIM with an explicit 2-D Gaussian, summed pixel by pixel."""
    r = np.arange(size) - (size - 1) / 2
    g2 = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma * sigma))
    g2 /= g2.sum()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            a = x[i : i + size, j : j + size]
            b = y[i : i + size, j : j + size]
            ma, mb = (g2 * a).sum(), (g2 * b).sum()
            va = (g2 * (a - ma) ** 2).sum()
            vb = (g2 * (b - mb) ** 2).sum()
            cov = (g2 * (a - ma) * (b - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def psnr_loop(x, y, peak: float) -> float:
    se = 0.0
    for idx in np.ndindex(x.shape):
        se += (x[idx] - y[idx]) ** 2
    return 10 * math.log10(peak * peak / (se / x.size))


# ------------------------------------------------------------------ suites


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def suite_equiv(seed: int = 0, cases: int = 50) -> list[tuple[str, bool, str]]:
    from .svc import first_layer_apply, pack_rggb, svc_forward, tie_svc_d

    rng = np.random.default_rng(seed)
    res = []
    worst = 0.0
    for _ in range(cases):
        k = int(rng.choice([1, 3, 5, 7]))
        cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h, w = 4 * int(rng.integers(1, 4)), 2 * int(rng.integers(1, 5))
        x = rng.standard_normal((1, cin, h, w))
        wt = rng.standard_normal((8, cout, cin, k, k))
        b = rng.standard_normal((8, cout))
        worst = max(worst, _rel(svc_forward(Tensor(x), Tensor(wt), Tensor(b)).data, svc_loop(x, wt, b)))
    res.append(("svc forward vs per-pixel evaluation", worst <= 1e-12, f"max rel err {worst:.2e} over {cases} cases"))

    x = rng.standard_normal((2, 1, 8, 8))
    packed = pack_rggb(Tensor(x)).data
    loop = np.stack([x[:, 0, i::2, j::2] for i in (0, 1) for j in (0, 1)], axis=1)
    spec = HeadSpec.parse("opt_rggb")
    wt = rng.standard_normal(spec.param_shapes(1, 3)["weight"])
    b = rng.standard_normal(spec.param_shapes(1, 3)["bias"])
    err = max(_rel(packed, loop), _rel(first_layer_apply(spec, Tensor(x), Tensor(wt), Tensor(b)).data,
                                       first_layer_reference(spec, x, wt, b)))
    res.append(("rggb packing equivalence", err <= 1e-12, f"max rel err {err:.2e}"))

    w4 = rng.standard_normal((4, 3, 1, 5, 5))
    b4 = rng.standard_normal((4, 3))
    w8, b8 = tie_svc_d(np.concatenate([w4, w4 * 0]), np.concatenate([b4, b4 * 0]))
    x = rng.standard_normal((1, 1, 8, 6))
    tied = svc_forward(Tensor(x), Tensor(w4), Tensor(b4), TIED_MAP).data
    full = svc_forward(Tensor(x), Tensor(w8), Tensor(b8), FULL_MAP).data
    res.append(("svc-d equals tied 8-bank svc", bool(np.array_equal(tied, full)), "bitwise"))

    worst = 0.0
    for stride, pad, k in ((1, 0, 3), (1, 1, 3), (2, 0, 2), (2, 1, 4), (4, 0, 4), (1, 2, 5)):
        x = rng.standard_normal((2, 2, 8, 8))
        wt = rng.standard_normal((3, 2, k, k))
        b = rng.standard_normal(3)
        worst = max(worst, _rel(ag.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride, pad).data,
                                conv2d_loop(x, wt, b, stride, pad)))
    res.append(("conv2d vs loop", worst <= 1e-12, f"max rel err {worst:.2e}"))

    worst = 0.0
    for f in (2, 4):
        x = rng.standard_normal((2, 2 * f * f, 3, 5))
        worst = max(worst, _rel(ag.pixel_shuffle(Tensor(x), f).data, pixel_shuffle_loop(x, f)))
    res.append(("pixel_shuffle vs loop", worst <= 1e-12, f"max rel err {worst:.2e}"))
    return res


def _miniature(seed: int = 0, head: str = "svc5"):
    from .network import ModelConfig, build_model

    cfg = ModelConfig(rb_blocks=2, egb_blocks=2, channels=3, egb_c=2, rb_head=head, egb_head=head)
    return build_model(cfg, seed=seed)


def suite_grad(seed: int = 0, tolerance: float = 1e-5) -> list[tuple[str, bool, str]]:
    from .losses import color_loss, l1_loss, total_loss
    from .network import model_forward
    from .svc import first_layer_apply, svc_forward

    rng = np.random.default_rng(seed)

    def leaf(*shape, positive=False):
        a = rng.standard_normal(shape)
        return Tensor(np.abs(a) + 0.5 if positive else a, requires_grad=True)

    def weighted(t):
        wts = rng.standard_normal(t.shape)
        return lambda out: ag.tsum(ag.mul(out, wts))

    cases = OrderedDict()
    a, b = leaf(2, 3), leaf(2, 3)
    proj = weighted(a)
    cases["add"] = (lambda: proj(ag.add(a, b)), [a, b])
    cases["sub"] = (lambda: proj(ag.sub(a, b)), [a, b])
    cases["mul"] = (lambda: proj(ag.mul(a, b)), [a, b])
    c, d = leaf(2, 3), leaf(2, 3, positive=True)
    cases["div"] = (lambda: proj(ag.div(c, d)), [c, d])
    bc, bs = leaf(2, 3), leaf(1, 3)
    cases["broadcast mul"] = (lambda: proj(ag.mul(bc, bs)), [bc, bs])
    r = Tensor(rng.standard_normal((3, 4)) + np.sign(rng.standard_normal((3, 4))) * 0.1, requires_grad=True)
    wr = rng.standard_normal((3, 4))
    cases["relu"] = (lambda: ag.tsum(ag.mul(ag.relu(r), wr)), [r])
    cases["abs"] = (lambda: ag.tsum(ag.mul(ag.tabs(r), wr)), [r])
    s = leaf(2, 3, 4)
    ws = rng.standard_normal((2, 1, 4))
    cases["sum axis"] = (lambda: ag.tsum(ag.mul(ag.tsum(s, axis=1), ws)), [s])
    cases["mean"] = (lambda: ag.tsum(ag.mul(ag.mean(s, axis=1), ws)), [s])
    n = leaf(2, 3, 2, 2)
    wn = rng.standard_normal((2, 1, 2, 2))
    cases["l2norm"] = (lambda: ag.tsum(ag.mul(ag.l2norm(n, axis=1), wn)), [n])
    c1, c2 = leaf(1, 2, 3, 2), leaf(1, 1, 3, 2)
    wc = rng.standard_normal((1, 3, 3, 2))
    cases["concat"] = (lambda: ag.tsum(ag.mul(ag.concat([c1, c2]), wc)), [c1, c2])
    for stride, pad, k in ((1, 1, 3), (2, 0, 2), (2, 1, 4), (4, 0, 4)):
        x, w_, b_ = leaf(2, 2, 8, 8), leaf(3, 2, k, k), leaf(3)
        out_shape = ag.conv2d(Tensor(x.data), Tensor(w_.data), None, stride, pad).shape
        wo = rng.standard_normal(out_shape)
        cases[f"conv2d k{k} s{stride} p{pad}"] = (
            lambda x=x, w_=w_, b_=b_, stride=stride, pad=pad, wo=wo: ag.tsum(ag.mul(ag.conv2d(x, w_, b_, stride, pad), wo)),
            [x, w_, b_])
    ps = leaf(1, 8, 2, 3)
    wp = rng.standard_normal((1, 2, 4, 6))
    cases["pixel_shuffle"] = (lambda: ag.tsum(ag.mul(ag.pixel_shuffle(ps, 2), wp)), [ps])
    pu = leaf(1, 2, 4, 6)
    wu = rng.standard_normal((1, 8, 2, 3))
    cases["pixel_unshuffle"] = (lambda: ag.tsum(ag.mul(ag.pixel_unshuffle(pu, 2), wu)), [pu])
    for head, nb in (("svc", 8), ("svc_d", 4)):
        x, w_, b_ = leaf(1, 2, 8, 4), leaf(nb, 2, 2, 3, 3), leaf(nb, 2)
        wo = rng.standard_normal((1, 2, 8, 4))
        bank_map = FULL_MAP if nb == 8 else TIED_MAP
        cases[f"{head} conv"] = (
            lambda x=x, w_=w_, b_=b_, wo=wo, bm=bank_map: ag.tsum(ag.mul(svc_forward(x, w_, b_, bm), wo)),
            [x, w_, b_])
    for kind in ("opt_2_2", "opt_4_2", "opt_4_4", "opt_rggb"):
        spec = HeadSpec.parse(kind)
        shp = spec.param_shapes(1, 2)
        x, w_, b_ = leaf(1, 1, 8, 8), leaf(*shp["weight"]), leaf(*shp["bias"])
        wo = rng.standard_normal((1, 2, 8, 8))
        cases[f"first layer {kind}"] = (
            lambda x=x, w_=w_, b_=b_, wo=wo, spec=spec: ag.tsum(ag.mul(first_layer_apply(spec, x, w_, b_), wo)),
            [x, w_, b_])
    p, g = leaf(1, 3, 4, 4, positive=True), Tensor(np.abs(rng.standard_normal((1, 3, 4, 4))) + 0.1)
    cases["l1 loss"] = (lambda: l1_loss(p, g), [p])
    cases["color loss"] = (lambda: color_loss(p, g), [p])
    cases["total loss"] = (lambda: total_loss(p, g).total, [p])

    model = _miniature(seed)
    e = np.abs(rng.standard_normal((1, 1, 8, 4)))
    m = (rng.random((1, 1, 8, 4)) > 0.3).astype(np.float64)
    gt = np.abs(rng.standard_normal((1, 3, 8, 4))) + 0.1
    cases["2-block model total loss"] = (lambda: total_loss(model_forward(model, e, m), gt).total, model.params)

    res = []
    for name, (fn, params) in cases.items():
        rep = ag.grad_check(fn, params, tolerance=tolerance)
        res.append((f"grad {name}", rep.passed, f"max rel err {rep.max_error:.2e}"))
    return res


MASK_CASES = ((9, False, 0.0), (10, False, 1.0), (245, True, 1.0), (246, True, 0.0))


def suite_mask() -> list[tuple[str, bool, str]]:
    from .radiometry import exposure_mask
    from .sve import BayerFrame, exposure_map

    res = []
    em = exposure_map(4, 1.0, 16.0)
    long_rows = em.times == em.tau_l
    for z, is_long, want in MASK_CASES:
        vals = np.zeros((4, 2), dtype=np.int64)
        row = int(np.flatnonzero(long_rows == is_long)[0])
        vals[row] = z
        got = exposure_mask(BayerFrame(vals, 8, "RGGB", em), 0.0392)[row, 0]
        label = f"mask {'long' if is_long else 'short'} z={z}"
        res.append((label, bool(got == want), f"got {got:g}, want {want:g}"))
    rng = np.random.default_rng(3)
    z = rng.integers(0, 256, size=(8, 6))
    em8 = exposure_map(8, 1.0, 4.0)
    fast = exposure_mask(BayerFrame(z, 8, "RGGB", em8), 0.0392)
    slow = mask_loop(z, em8.times == em8.tau_l, 0.0392, 8)
    res.append(("mask random frame vs loop", bool(np.array_equal(fast, slow)), "bitwise"))
    return res


def suite_merge(seed: int = 0) -> list[tuple[str, bool, str]]:
    from .sve import ExposurePair, merge_ground_truth

    rng = np.random.default_rng(seed)
    res = []
    for crf in (Crf("linear"), Crf("gamma", gamma=2.2)):
        zs = rng.integers(0, 256, size=(4, 6, 3))
        zl = rng.integers(0, 256, size=(4, 6, 3))
        zs[0, 0] = 0
        zl[0, 0] = 0
        zs[0, 1] = 255
        zl[0, 1] = 255
        pair = ExposurePair(zs, zl, 1.0, 8.0, 8)
        fast = merge_ground_truth(pair, crf).linear()
        slow = merge_loop(zs, zl, 1.0, 8.0, 8, crf)
        err = _rel(fast, slow)
        res.append((f"merge {crf.describe()} vs loop", err <= 1e-9, f"max rel err {err:.2e}"))
    return res


SUITES = {"grad": suite_grad, "equiv": suite_equiv, "mask": suite_mask, "merge": suite_merge}

"""Spatially varying convolution and the Bayer first-layer variants.

The dual-time Bayer mosaic repeats every 4 rows (two short, two long
exposure rows) and every 2 columns, giving eight distinct sampling
patterns. The spatially varying convolution keeps one kernel bank per
pattern; the output at 0-based position (k, v) uses bank
``2 * (k % 4) + (v % 2) + 1``. The degraded variant ties banks 5-8 to 1-4,
leaving only the four colour patterns.

Banks are stored as one array of shape (n_banks, C_out, C_in, K, K) with
biases (n_banks, C_out). ``bank_map`` maps the eight pattern indices
(0-based) onto stored banks, so the degraded variant is the 4-bank array
with map (0, 1, 2, 3, 0, 1, 2, 3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DimensionError

FULL_MAP = (0, 1, 2, 3, 4, 5, 6, 7)
TIED_MAP = (0, 1, 2, 3, 0, 1, 2, 3)


def pattern_index(k: int, v: int) -> int:
    """1-based pattern (bank) index for 0-based output row ``k``, column ``v``."""
    return 2 * (k % 4) + (v % 2) + 1


def pattern_map(h: int, w: int) -> np.ndarray:
    """Pattern index of every position of an h x w grid."""
    k = np.arange(h)[:, None]
    v = np.arange(w)[None, :]
    return 2 * (k % 4) + (v % 2) + 1


def svc_forward(x: Tensor, weight: Tensor, bias: Tensor | None, bank_map=FULL_MAP) -> Tensor:
    """Apply the spatially varying convolution with 'same' zero padding.

    Args:
        x: (B, C_in, H, W) input; the phase origin is the top-left pixel.
        weight: (n_banks, C_out, C_in, K, K) with K odd.
        bias: (n_banks, C_out) or None.
        bank_map: stored bank used for each of the eight patterns.

    Returns:
        (B, C_out, H, W) tensor.
    """
    x, weight = ag.as_tensor(x), ag.as_tensor(weight)
    if weight.data.ndim != 5:
        raise DimensionError(f"SVC weight must be (banks, C_out, C_in, K, K), got {weight.shape}")
    nb, cout, cin, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"SVC kernel must be square with odd size, got {k}x{k2}")
    if len(bank_map) != 8 or max(bank_map) >= nb:
        raise ConfigError(f"bank map {bank_map} incompatible with {nb} banks")
    if x.data.ndim != 4 or x.shape[1] != cin:
        raise DimensionError(f"SVC expects (B, {cin}, H, W) input, got {x.shape}")
    if bias is not None:
        bias = ag.as_tensor(bias)
        if bias.shape != (nb, cout):
            raise DimensionError(f"SVC bias must be {(nb, cout)}, got {bias.shape}")
    b, _, h, w = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.empty((b, cout, h, w), dtype=np.result_type(x.dtype, weight.dtype))
    phases = []
    for a in range(4):
        for c in range(2):
            hh = len(range(a, h, 4))
            ww = len(range(c, w, 2))
            if hh == 0 or ww == 0:
                continue
            bank = bank_map[2 * a + c]
            cols = win[:, :, a::4, c::2].transpose(0, 2, 3, 1, 4, 5).reshape(b * hh * ww, cin * k * k)
            wmat = weight.data[bank].reshape(cout, -1)
            o = cols @ wmat.T
            if bias is not None:
                o += bias.data[bank]
            out[:, :, a::4, c::2] = o.reshape(b, hh, ww, cout).transpose(0, 3, 1, 2)
            phases.append((a, c, hh, ww, bank, cols))

    def bw(g):
        gw = np.zeros_like(weight.data) if weight.requires_grad else None
        gb = np.zeros_like(bias.data) if bias is not None and bias.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for a, c, hh, ww, bank, cols in phases:
            g2 = g[:, :, a::4, c::2].transpose(0, 2, 3, 1).reshape(-1, cout)
            if gw is not None:
                gw[bank] += (g2.T @ cols).reshape(cout, cin, k, k)
            if gb is not None:
                gb[bank] += g2.sum(axis=0)
            if gxp is not None:
                gc = (g2 @ weight.data[bank].reshape(cout, -1)).reshape(b, hh, ww, cin, k, k)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, a + i : a + i + 4 * (hh - 1) + 1 : 4, c + j : c + j + 2 * (ww - 1) + 1 : 2] += (
                            gc[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                        )
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if gxp is not None else None
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return ag._result(out, inputs, bw, "svc")


def tie_svc_d(weight: np.ndarray, bias: np.ndarray | None = None):
    """Return 8-bank copies with banks 5-8 overwritten by banks 1-4."""
    w = np.array(weight, copy=True)
    w[4:8] = w[0:4]
    if bias is None:
        return w
    bb = np.array(bias, copy=True)
    bb[4:8] = bb[0:4]
    return w, bb


def pack_rggb(x: Tensor) -> Tensor:
    """(B, 1, H, W) mosaic -> (B, 4, H/2, W/2) with offsets (0,0), (0,1), (1,0), (1,1)."""
    x = ag.as_tensor(x)
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"pack_rggb needs even spatial extents, got {x.shape}")
    return ag.pixel_unshuffle(x, 2)


def unpack_rggb(x: Tensor) -> Tensor:
    return ag.pixel_shuffle(x, 2)


# ----------------------------------------------------------- first layers


@dataclass(frozen=True)
class HeadSpec:
    """A first-layer kind.

    ``kind`` is one of opt_base, opt_2_2, opt_4_2, opt_4_4, opt_rggb, svc_d,
    svc; ``k`` is the kernel size for the svc kinds.
    """

    kind: str
    k: int = 5

    @classmethod
    def parse(cls, text: str) -> "HeadSpec":
        t = text.strip().lower().replace("-", "_")
        if t in ("opt_base", "opt_2_2", "opt_4_2", "opt_4_4", "opt_rggb"):
            return cls(t, 0)
        for prefix in ("svc_d", "svc"):
            if t.startswith(prefix):
                rest = t[len(prefix):].lstrip("_")
                if prefix == "svc" and rest.startswith("d"):
                    continue
                k = int(rest) if rest else 5
                if k % 2 == 0 or k < 1:
                    raise ConfigError(f"SVC kernel size must be odd, got {k}")
                return cls(prefix, k)
        raise ConfigError(f"unknown first-layer kind {text!r}")

    def __str__(self) -> str:
        return f"{self.kind}{self.k}" if self.kind in ("svc", "svc_d") else self.kind

    # conv geometry: (kernel, stride, pad, out-channel multiplier, shuffle factor)
    def geometry(self) -> tuple[int, int, int, int, int]:
        return {
            "opt_base": (3, 1, 1, 1, 1),
            "opt_2_2": (2, 2, 0, 4, 2),
            "opt_4_2": (4, 2, 1, 4, 2),
            "opt_4_4": (4, 4, 0, 16, 4),
            "opt_rggb": (3, 1, 1, 4, 2),
        }[self.kind]

    def param_shapes(self, cin: int, cout: int) -> dict[str, tuple[int, ...]]:
        if self.kind in ("svc", "svc_d"):
            nb = 8 if self.kind == "svc" else 4
            return {"weight": (nb, cout, cin, self.k, self.k), "bias": (nb, cout)}
        k, _, _, mult, _ = self.geometry()
        c_in = cin * 4 if self.kind == "opt_rggb" else cin
        return {"weight": (cout * mult, c_in, k, k), "bias": (cout * mult,)}

    def fan_in(self, cin: int) -> int:
        if self.kind in ("svc", "svc_d"):
            return cin * self.k * self.k
        k = self.geometry()[0]
        return cin * (4 if self.kind == "opt_rggb" else 1) * k * k

    def n_params(self, cin: int, cout: int) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes(cin, cout).values())

    def flops_per_pixel(self, cin: int, cout: int) -> float:
        """(weight MACs + bias adds) per input pixel of the full-resolution grid."""
        if self.kind in ("svc", "svc_d"):
            return (cin * self.k * self.k + 1) * cout
        k, stride, _, mult, _ = self.geometry()
        if self.kind == "opt_rggb":
            return (4 * cin * k * k + 1) * cout * mult / 4
        return (cin * k * k + 1) * cout * mult / (stride * stride)


def first_layer_apply(spec: HeadSpec, x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Map an (B, C, H, W) mosaic to (B, C_out, H, W) features with the given first layer."""
    x = ag.as_tensor(x)
    if x.data.ndim != 4 or x.shape[2] % 4 or x.shape[3] % 2:
        raise DimensionError(f"first layer input must be (B, C, 4m, 2n), got {x.shape}")
    expected = spec.param_shapes(x.shape[1], _out_channels(spec, weight))
    if tuple(weight.shape) != expected["weight"] or tuple(bias.shape) != expected["bias"]:
        raise ConfigError(f"weights {weight.shape}/{bias.shape} do not fit first layer {spec}")
    if spec.kind == "svc":
        return svc_forward(x, weight, bias, FULL_MAP)
    if spec.kind == "svc_d":
        return svc_forward(x, weight, bias, TIED_MAP)
    k, stride, pad, _, factor = spec.geometry()
    if spec.kind == "opt_rggb":
        x = pack_rggb(x)
    y = ag.conv2d(x, weight, bias, stride=stride, padding=pad)
    return ag.pixel_shuffle(y, factor) if factor > 1 else y


def _out_channels(spec: HeadSpec, weight: Tensor) -> int:
    if spec.kind in ("svc", "svc_d"):
        return weight.shape[1]
    return weight.shape[0] // spec.geometry()[3]

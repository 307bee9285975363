"""Camera response functions, radiance conversion, exposure masks, display export."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ValidationError

DEFAULT_ALPHA = 0.0392
# threshold sweep around the default used for the mask sensitivity study
ALPHA_SWEEP = (0.0196, 0.0294, 0.0392, 0.0490, 0.0588)


@dataclass
class Crf:
    """Monotone response on normalized [0, 1] exposure -> [0, 1] pixel value.

    ``kind`` is "linear", "gamma" (encode x ** (1/gamma)) or "tabulated".
    A tabulated CRF holds, per channel, the response at equally spaced
    exposure knots ``k / (n - 1)``; both directions interpolate linearly
    between knots, so the inverse is exact at the knots.
    """

    kind: str = "linear"
    gamma: float = 1.0
    table: np.ndarray | None = None  # (3, n)

    def __post_init__(self):
        if self.kind not in ("linear", "gamma", "tabulated"):
            raise ConfigError(f"unknown CRF kind {self.kind!r}")
        if self.kind == "gamma" and not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.kind == "tabulated":
            t = np.asarray(self.table, dtype=np.float64)
            if t.ndim == 1:
                t = np.tile(t, (3, 1))
            if t.ndim != 2 or t.shape[0] != 3 or t.shape[1] < 2:
                raise FormatError(f"CRF table must be (3, n) with n >= 2, got {t.shape}")
            self.table = t

    @classmethod
    def parse(cls, text: str) -> "Crf":
        """Build from "linear", "gamma:G" or "file:PATH" (or a bare path)."""
        t = text.strip()
        if t == "linear":
            return cls("linear")
        if t.startswith("gamma:"):
            return cls("gamma", gamma=float(t.split(":", 1)[1]))
        if t.startswith("file:"):
            t = t.split(":", 1)[1]
        if Path(t).exists():
            return read_crf(t)
        raise ConfigError(f"cannot interpret CRF {text!r}")

    def describe(self) -> str:
        if self.kind == "gamma":
            return f"gamma:{self.gamma:g}"
        return self.kind

    def is_monotone(self) -> bool:
        if self.kind != "tabulated":
            return True
        t = self.table
        return bool(np.all(np.diff(t, axis=1) > 0) and np.all(t[:, 0] == 0) and np.all(t[:, -1] == 1))

    def _check(self):
        if not self.is_monotone():
            raise ValidationError("CRF table is not strictly increasing from 0 to 1")

    def forward(self, x: np.ndarray, channel=None) -> np.ndarray:
        """Exposure (clamped to [0, 1]) -> normalized pixel value."""
        x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
        if self.kind == "linear":
            return x
        if self.kind == "gamma":
            return x ** (1.0 / self.gamma)
        self._check()
        return self._per_channel(x, channel, lambda xs, t: np.interp(xs, np.linspace(0, 1, t.size), t))

    def inverse(self, y: np.ndarray, channel=None) -> np.ndarray:
        """Normalized pixel value -> exposure."""
        y = np.clip(np.asarray(y, dtype=np.float64), 0.0, 1.0)
        if self.kind == "linear":
            return y
        if self.kind == "gamma":
            return y ** self.gamma
        self._check()
        return self._per_channel(y, channel, lambda ys, t: np.interp(ys, t, np.linspace(0, 1, t.size)))

    def _per_channel(self, a, channel, fn):
        if channel is None:
            channel = np.zeros(a.shape, dtype=np.int64)
        channel = np.broadcast_to(np.asarray(channel), a.shape)
        out = np.empty_like(a)
        for c in range(3):
            sel = channel == c
            if np.any(sel):
                out[sel] = fn(a[sel], self.table[c])
        return out


def read_crf(path) -> Crf:
    lines = Path(path).read_text().split()
    if len(lines) < 3 or lines[0] != "CRF" or lines[1] != "v1" or not lines[2].startswith("bits="):
        raise FormatError(f"{path}: expected header 'CRF v1 bits=N'")
    bits = int(lines[2].split("=", 1)[1])
    n = 2 ** bits
    vals = np.array([float(v) for v in lines[3:]])
    if vals.size != 3 * n:
        raise FormatError(f"{path}: expected {3 * n} values for bits={bits}, found {vals.size}")
    return Crf("tabulated", table=vals.reshape(3, n))


def write_crf(path, crf: Crf, bits: int) -> None:
    """Write ``crf`` sampled at 2**bits knots as a tabulated CRF file."""
    n = 2 ** bits
    x = np.linspace(0.0, 1.0, n)
    rows = [f"CRF v1 bits={bits}"]
    for c in range(3):
        rows.extend(f"{v:.17g}" for v in crf.forward(x, np.full(n, c)))
    Path(path).write_text("\n".join(rows) + "\n")


@dataclass
class RadianceImage:
    """Irradiance grid, (H, W) Bayer or (H, W, 3) full colour.

    ``domain`` is "linear" or "log"; linear irradiance is
    ``exp(values)`` (log) or ``values`` (linear), times ``scale``.
    """

    values: np.ndarray
    domain: str = "linear"
    scale: float = 1.0
    exposure_map: object | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.domain not in ("linear", "log"):
            raise ValidationError(f"unknown radiance domain {self.domain!r}")
        if not self.scale > 0:
            raise ValidationError("radiance scale must be positive")

    def linear(self) -> np.ndarray:
        v = np.exp(self.values) if self.domain == "log" else self.values
        return v * self.scale


def half_lsb(bits: int) -> float:
    return 0.5 / (2 ** bits - 1)


def to_radiance(frame, crf: Crf) -> RadianceImage:
    """Bayer frame -> log-domain Bayer radiance, ln e = ln f^-1(z) - ln dt.

    Zero codes are floored at half a quantization step before the log.
    """
    from .sve import cfa_channel_map

    if not crf.is_monotone():
        raise ValidationError("CRF must be strictly monotone")
    zmax = 2 ** frame.bits - 1
    y = np.maximum(frame.values.astype(np.float64) / zmax, half_lsb(frame.bits))
    h, w = frame.values.shape
    chan = cfa_channel_map(h, w, frame.cfa)
    f_inv = np.maximum(crf.inverse(y, chan), np.finfo(np.float64).tiny)
    dt = frame.exposure_map.times[:, None]
    return RadianceImage(np.log(f_inv) - np.log(dt), "log", 1.0, frame.exposure_map)


def exposure_mask(frame, alpha: float = DEFAULT_ALPHA, weighting: str = "binary") -> np.ndarray:
    """Per-pixel reliability in [0, 1] computed from raw codes.

    binary: 0 for long-exposure pixels at or above (1 - alpha) of full scale
    and short-exposure pixels at or below alpha of full scale, else 1.
    debevec_triangle / robertson_gaussian: hat-shaped soft weights on the
    code value, applied regardless of row.
    """
    if not 0 < alpha < 0.5:
        raise ValidationError(f"alpha must lie in (0, 0.5), got {alpha}")
    zmax = 2 ** frame.bits - 1
    z = frame.values.astype(np.float64)
    if weighting == "binary":
        em = frame.exposure_map
        long_row = (em.times == em.tau_l)[:, None]
        short_row = (em.times == em.tau_s)[:, None]
        bad = (long_row & (z >= (1 - alpha) * zmax)) | (short_row & (z <= alpha * zmax))
        return np.where(bad, 0.0, 1.0)
    half = zmax / 2.0
    if weighting == "debevec_triangle":
        return np.minimum(z, zmax - z) / half
    if weighting == "robertson_gaussian":
        return np.exp(-4.0 * (z - half) ** 2 / half ** 2)
    raise ValidationError(f"unknown mask weighting {weighting!r}")


@dataclass(frozen=True)
class NetworkDomain:
    """Affine map between irradiance and the network's [0, 1] range.

    linear: x = e / e_max. log: x = (ln e - ln e_min) / (ln e_max - ln e_min).
    """

    e_max: float
    e_min: float = 0.0
    kind: str = "linear"

    @classmethod
    def for_exposures(cls, tau_s: float, tau_l: float, bits: int, crf: Crf | None = None,
                      kind: str = "linear") -> "NetworkDomain":
        crf = crf or Crf("linear")
        floor = crf.inverse(np.array([half_lsb(bits)]), np.zeros(1, int))[0]
        return cls(e_max=1.0 / tau_s, e_min=floor / tau_l, kind=kind)


def normalize_for_network(image: RadianceImage, domain: NetworkDomain) -> np.ndarray:
    """Radiance -> NCHW float array in the network domain."""
    e = image.linear()
    if domain.kind == "linear":
        x = e / domain.e_max
    elif domain.kind == "log_norm":
        lo, hi = np.log(domain.e_min), np.log(domain.e_max)
        x = (np.log(np.maximum(e, domain.e_min)) - lo) / (hi - lo)
    else:
        raise ConfigError(f"unknown network domain {domain.kind!r}")
    return to_nchw(x)


def denormalize(x: np.ndarray, domain: NetworkDomain) -> np.ndarray:
    """Inverse of :func:`normalize_for_network` (NCHW in, NCHW out)."""
    if domain.kind == "linear":
        return x * domain.e_max
    lo, hi = np.log(domain.e_min), np.log(domain.e_max)
    return np.exp(x * (hi - lo) + lo)


def to_nchw(a: np.ndarray) -> np.ndarray:
    if a.ndim == 2:
        return a[None, None]
    if a.ndim == 3:
        return np.ascontiguousarray(a.transpose(2, 0, 1)[None])
    return a


def to_hwc(a: np.ndarray) -> np.ndarray:
    """First batch element of an NCHW array as HWC (or HW for one channel)."""
    a = a[0]
    return a[0] if a.shape[0] == 1 else np.ascontiguousarray(a.transpose(1, 2, 0))


LUMA_709 = np.array([0.2126, 0.7152, 0.0722])


def gray_world(rgb: np.ndarray) -> np.ndarray:
    means = rgb.reshape(-1, 3).mean(axis=0)
    target = means.mean()
    gains = np.where(means > 0, target / np.where(means > 0, means, 1.0), 1.0)
    return rgb * gains


def reinhard(rgb: np.ndarray) -> np.ndarray:
    """Global L/(1+L) on luminance, colours rescaled by L_out/L."""
    lum = rgb @ LUMA_709
    ratio = np.where(lum > 0, 1.0 / (1.0 + lum), 0.0)
    return rgb * ratio[..., None]


def tonemap_display(hdr: np.ndarray) -> np.ndarray:
    """Linear HxWx3 radiance -> 8-bit display RGB (gray world, Reinhard, gamma 1/2.2)."""
    rgb = np.maximum(np.asarray(hdr, dtype=np.float64), 0.0)
    if not np.any(rgb > 0):
        return np.zeros(rgb.shape, dtype=np.uint8)
    out = reinhard(gray_world(rgb))
    out = np.clip(out, 0.0, 1.0) ** (1.0 / 2.2)
    return np.floor(out * 255.0 + 0.5).astype(np.uint8)

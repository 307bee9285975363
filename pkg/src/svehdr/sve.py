"""Dual-time SVE Bayer data: exposure layout, mosaicking, capture simulation.

Rows use 1-based indices in the public helpers to match the usual
statement of the layout: row i is short-exposed when i mod 4 is 1 or 2 and
long-exposed when it is 3 or 0. In 0-based terms rows {0, 1} (mod 4) are
short and rows {2, 3} are long. ``short_first=False`` swaps the two.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, ValidationError
from .radiometry import Crf, RadianceImage, half_lsb

CFA_PHASES = ("RGGB", "GRBG", "GBRG", "BGGR")
_CHANNEL = {"R": 0, "G": 1, "B": 2}


@dataclass
class ExposureMap:
    times: np.ndarray  # per-row exposure time, seconds
    tau_s: float
    tau_l: float
    layout: str = "dual_time"
    short_first: bool = True

    @property
    def ratio(self) -> float:
        return self.tau_l / self.tau_s

    def is_short(self) -> np.ndarray:
        return self.times == self.tau_s

    def crop(self, row0: int, h: int) -> "ExposureMap":
        return ExposureMap(self.times[row0 : row0 + h].copy(), self.tau_s, self.tau_l, self.layout, self.short_first)


def exposure_map(h: int, tau_s: float, tau_l: float, short_first: bool = True) -> ExposureMap:
    """Per-row exposure times for an image with ``h`` rows."""
    if h <= 0 or h % 4:
        raise DimensionError(f"image height must be a positive multiple of 4, got {h}")
    if not 0 < tau_s <= tau_l:
        raise ValidationError(f"need 0 < tau_s <= tau_l, got {tau_s}, {tau_l}")
    i = np.arange(1, h + 1)
    short = (i % 4 == 1) | (i % 4 == 2)
    if not short_first:
        short = ~short
    return ExposureMap(np.where(short, float(tau_s), float(tau_l)), float(tau_s), float(tau_l), "dual_time", short_first)


def cfa_color(i: int, j: int, phase: str = "RGGB") -> str:
    """Colour ('R', 'G' or 'B') recorded at 1-based row ``i``, column ``j``."""
    phase = phase.upper()
    if phase not in CFA_PHASES:
        raise ValidationError(f"unknown CFA phase {phase!r}")
    return phase[2 * ((i - 1) % 2) + (j - 1) % 2]


def cfa_channel_map(h: int, w: int, phase: str = "RGGB") -> np.ndarray:
    """Channel index (0=R, 1=G, 2=B) for every pixel of an h x w mosaic."""
    phase = phase.upper()
    if phase not in CFA_PHASES:
        raise ValidationError(f"unknown CFA phase {phase!r}")
    cell = np.array([[_CHANNEL[phase[0]], _CHANNEL[phase[1]]], [_CHANNEL[phase[2]], _CHANNEL[phase[3]]]])
    return np.tile(cell, ((h + 1) // 2, (w + 1) // 2))[:h, :w]


@dataclass
class BayerFrame:
    values: np.ndarray  # (H, W) integer codes
    bits: int
    cfa: str
    exposure_map: ExposureMap

    def __post_init__(self):
        self.values = np.asarray(self.values)
        h, w = self.values.shape
        if h % 4 or w % 2:
            raise DimensionError(f"Bayer frame must be (4m, 2n), got {h}x{w}")
        if self.exposure_map.times.shape != (h,):
            raise DimensionError("exposure map height does not match frame")
        if self.values.min() < 0 or self.values.max() > 2 ** self.bits - 1:
            raise ValidationError(f"codes outside [0, {2 ** self.bits - 1}]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def crop(self, row0: int, col0: int, h: int, w: int) -> "BayerFrame":
        """Crop keeping the CFA/exposure phase (origin must be (0, 0) mod (4, 2))."""
        if row0 % 4 or col0 % 2:
            raise DimensionError(f"crop origin ({row0}, {col0}) breaks the 4x2 phase")
        return BayerFrame(self.values[row0 : row0 + h, col0 : col0 + w], self.bits, self.cfa,
                          self.exposure_map.crop(row0, h))


@dataclass
class ExposurePair:
    short: np.ndarray  # (H, W, 3) integer codes
    long: np.ndarray
    tau_s: float
    tau_l: float
    bits: int

    def __post_init__(self):
        if self.short.shape != self.long.shape or self.short.ndim != 3 or self.short.shape[2] != 3:
            raise DimensionError(f"exposure pair shapes differ or are not HxWx3: {self.short.shape} vs {self.long.shape}")


def mosaic(rgb: np.ndarray, phase: str = "RGGB") -> np.ndarray:
    """Sample one channel per pixel according to the CFA phase."""
    h, w = rgb.shape[:2]
    chan = cfa_channel_map(h, w, phase)
    return np.take_along_axis(rgb, chan[..., None], axis=2)[..., 0]


def simulate_dual_time(pair: ExposurePair, phase: str = "RGGB", short_first: bool = True) -> BayerFrame:
    """Interleave rows of the short and long captures and mosaic them."""
    h, w, _ = pair.short.shape
    em = exposure_map(h, pair.tau_s, pair.tau_l, short_first)
    rows = em.is_short()[:, None, None]
    src = np.where(rows, pair.short, pair.long)
    return BayerFrame(mosaic(src, phase), pair.bits, phase, em)


def quantize(y: np.ndarray, bits: int) -> np.ndarray:
    zmax = 2 ** bits - 1
    return np.floor(np.clip(y, 0.0, 1.0) * zmax + 0.5).astype(np.int64)


def capture(scene: np.ndarray, crf: Crf, dt: float, bits: int) -> np.ndarray:
    """Full-resolution N-bit capture of ``scene`` at exposure time ``dt``."""
    chan = np.broadcast_to(np.arange(3), scene.shape)
    return quantize(crf.forward(np.clip(scene * dt, 0.0, 1.0), chan), bits)


def simulate_from_scene(scene: np.ndarray, crf: Crf, tau_s: float, tau_l: float, bits: int,
                        phase: str = "RGGB", short_first: bool = True):
    """Render a dual-time Bayer frame from scene irradiance.

    Returns the frame and the scene itself as the exact ground truth.
    """
    scene = np.asarray(scene, dtype=np.float64)
    if scene.ndim != 3 or scene.shape[2] != 3:
        raise DimensionError(f"scene must be HxWx3, got {scene.shape}")
    if not np.all(np.isfinite(scene)) or np.any(scene <= 0):
        raise ValidationError("scene irradiance must be strictly positive and finite")
    h, w, _ = scene.shape
    em = exposure_map(h, tau_s, tau_l, short_first)
    chan = cfa_channel_map(h, w, phase)
    e = np.take_along_axis(scene, chan[..., None], axis=2)[..., 0]
    z = quantize(crf.forward(np.clip(e * em.times[:, None], 0.0, 1.0), chan), bits)
    return BayerFrame(z, bits, phase, em), RadianceImage(scene, "linear", 1.0, em)


def triangle_weight(z: np.ndarray, bits: int) -> np.ndarray:
    zmax = 2 ** bits - 1
    return np.minimum(z, zmax - z).astype(np.float64)


def merge_ground_truth(pair: ExposurePair, crf: Crf) -> RadianceImage:
    """Weighted log-domain merge of a short/long pair into radiance.

    Where both weights vanish (both codes on a rail) the estimate falls back
    to a single exposure: the long one if both are black, otherwise the
    short one.
    """
    zmax = 2 ** pair.bits - 1
    chan = np.broadcast_to(np.arange(3), pair.short.shape)
    zs = pair.short.astype(np.float64)
    zl = pair.long.astype(np.float64)
    ws, wl = triangle_weight(zs, pair.bits), triangle_weight(zl, pair.bits)
    floor = half_lsb(pair.bits)

    def log_e(z, dt):
        f = crf.inverse(np.maximum(z / zmax, floor), chan)
        return np.log(np.maximum(f, np.finfo(np.float64).tiny)) - np.log(dt)

    ls, ll = log_e(zs, pair.tau_s), log_e(zl, pair.tau_l)
    wsum = ws + wl
    with np.errstate(invalid="ignore", divide="ignore"):
        merged = (ws * ls + wl * ll) / wsum
    both_black = (zs == 0) & (zl == 0)
    fallback = np.where(both_black, ll, ls)
    out = np.where(wsum > 0, merged, fallback)
    if not np.all(np.isfinite(out)):
        raise NumericError("merge produced non-finite radiance")
    return RadianceImage(np.exp(out), "linear", 1.0)


def gen_synthetic_scene(seed: int, h: int, w: int, stops: float = 8.0) -> np.ndarray:
    """Deterministic HxWx3 irradiance with max 1 and max/min >= 2**stops.

    The log-luminance field mixes a smooth gradient, low-frequency waves,
    flat-shaded rectangles and discs, and a few small white highlights; it
    is stretched to exactly ``stops`` stops before per-object colour gains
    (<= 1) are applied. The brightest highlight is kept white so the
    maximum stays 1.
    """
    if not stops >= 1:
        raise ValidationError(f"dynamic range must be at least 1 stop, got {stops}")
    if h < 4 or w < 4:
        raise DimensionError("scene must be at least 4x4")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w], dtype=np.float64).reshape(2, 1, 1)

    theta = rng.uniform(0, 2 * np.pi)
    f = np.cos(theta) * xx + np.sin(theta) * yy
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 3.0, size=2)
        f += 0.3 * rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * (fx * xx + fy * yy) + rng.uniform(0, 2 * np.pi))
    color = np.ones((h, w, 3)) * rng.uniform(0.6, 1.0, size=3)

    for _ in range(rng.integers(3, 7)):
        level = rng.uniform(-1.0, 2.0)
        tint = rng.uniform(0.35, 1.0, size=3)
        if rng.random() < 0.5:
            y0, x0 = rng.uniform(0, 1, size=2)
            dy, dx = rng.uniform(0.1, 0.5, size=2)
            sel = (yy >= y0) & (yy < y0 + dy) & (xx >= x0) & (xx < x0 + dx)
        else:
            cy, cx = rng.uniform(0, 1, size=2)
            r = rng.uniform(0.05, 0.25)
            sel = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        f = np.where(sel, level + 0.2 * f, f)
        color[sel] = tint

    lo = f.min()
    f = (f - lo) / max(f.max() - lo, 1e-12)
    n_hi = rng.integers(1, 4)
    for _ in range(n_hi):
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        r = rng.uniform(0.6, 2.5)
        sel = (np.arange(h)[:, None] - cy) ** 2 + (np.arange(w)[None, :] - cx) ** 2 <= r * r
        f[sel] = 1.0
        color[sel] = 1.0
    f[np.unravel_index(np.argmin(f), f.shape)] = 0.0

    lum = np.exp2(stops * (f - 1.0))
    scene = lum[..., None] * color
    return scene

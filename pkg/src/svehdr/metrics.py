"""PU encoding and HDR image-quality metrics (MAE, MSE, PSNR, SSIM)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .errors import DimensionError, FormatError, ValidationError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA_601 = np.array([0.299, 0.587, 0.114])

# contrast sensitivity fit used to derive the default encoding
_CSF_SA = (30.162, 4.0627, 1.6596, 0.2712)
_PU_LOW, _PU_HIGH = 31.9270, 149.9244
DEFAULT_PEAK_CD = 1000.0


@dataclass
class PuTable:
    """Monotone (linear radiance, PU value) knots.

    Interpolation is piecewise linear between knots; inputs below the first
    knot take the first PU value and inputs above the last take the last.
    """

    linear: np.ndarray
    pu: np.ndarray
    tag: str = ""

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=np.float64)
        self.pu = np.asarray(self.pu, dtype=np.float64)
        if self.linear.ndim != 1 or self.linear.shape != self.pu.shape or self.linear.size < 2:
            raise FormatError("PU table needs two equal-length columns with >= 2 rows")
        if not (np.all(np.diff(self.linear) > 0) and np.all(np.diff(self.pu) > 0)):
            raise ValidationError("PU table must be strictly increasing in both columns")
        if not (np.all(np.isfinite(self.linear)) and np.all(np.isfinite(self.pu))):
            raise ValidationError("PU table has non-finite entries")

    @classmethod
    def identity(cls, hi: float = 1.0, n: int = 2) -> "PuTable":
        x = np.linspace(0.0, hi, n)
        return cls(x, x.copy(), "identity")

    def encode(self, x) -> np.ndarray:
        return pu_encode(x, self)


def pu_encode(linear, table: PuTable) -> np.ndarray:
    x = np.asarray(linear, dtype=np.float64)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValidationError("PU encoding needs finite non-negative radiance")
    return np.interp(x, table.linear, table.pu)


def read_pu_table(path) -> PuTable:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("PU v1"):
        raise FormatError(f"{path}: expected 'PU v1' header")
    rows = []
    for n, line in enumerate(lines[1:], 2):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{n}: expected 'linear pu'")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise FormatError(f"{path}:{n}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: empty PU table")
    arr = np.array(rows)
    return PuTable(arr[:, 0], arr[:, 1], lines[0][5:].strip())


def write_pu_table(path, table: PuTable) -> None:
    out = [f"PU v1 {table.tag}".rstrip()]
    out += [f"{a:.10e} {b:.10e}" for a, b in zip(table.linear, table.pu)]
    Path(path).write_text("\n".join(out) + "\n")


def pu_from_csf(n: int = 4096, lo: float = 1e-6, hi: float = 4.0, peak_cd: float = DEFAULT_PEAK_CD) -> PuTable:
    """Build the default table by integrating detection thresholds of a CSF fit.

    ``linear`` is relative radiance with 1.0 mapped to ``peak_cd`` cd/m^2;
    knots are log-spaced over [lo, hi].
    """
    l_grid = np.linspace(-5.0, 10.0, 2 ** 14)
    p1, p2, p3, p4 = _CSF_SA
    sens = p1 * ((p2 / 10.0 ** l_grid) ** p3 + 1.0) ** (-p4)
    # d(PU)/d(log10 L) = L / threshold(L) * ln 10 with threshold = L / S
    p = cumulative_trapezoid(sens * np.log(10.0), l_grid, initial=0.0)
    p = 255.0 * (p - _PU_LOW) / (_PU_HIGH - _PU_LOW)
    x = np.geomspace(lo, hi, n)
    pu = np.interp(np.log10(x * peak_cd), l_grid, p)
    return PuTable(x, pu, f"csf-fit peak={peak_cd:g}cd/m2")


def default_pu_table() -> PuTable:
    ref = resources.files("svehdr") / "data" / "pu_default.txt"
    with resources.as_file(ref) as path:
        return read_pu_table(path)


def load_pu_table(spec: str | None) -> PuTable:
    """``None``/"default" -> shipped table, "identity" -> identity, else a file path."""
    if spec in (None, "", "default"):
        return default_pu_table()
    if spec == "identity":
        return PuTable.identity()
    return read_pu_table(spec)


# ------------------------------------------------------------------ metrics


def gaussian_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation with the normalized Gaussian
    v = np.lib.stride_tricks.sliding_window_view(img, g.size, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(v, g.size, axis=1) @ g


def ssim(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    """Mean SSIM over the 'valid' 11x11 windows of two 2-D images (y is the reference)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise DimensionError(f"SSIM needs equal 2-D images, got {x.shape}, {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    if not data_range > 0:
        raise ValidationError("SSIM dynamic range must be positive")
    win = gaussian_1d()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def psnr(mse: float, peak: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP)


METRIC_NAMES = ("mae", "mse", "psnr_rgb", "ssim_rgb", "psnr_y", "ssim_y")


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)  # name + METRIC_NAMES
    meta: dict[str, str] = field(default_factory=dict)

    def add(self, name: str, values: dict) -> None:
        self.rows.append({"name": name, **{k: float(values[k]) for k in METRIC_NAMES}})

    def extend(self, other: "MetricReport") -> None:
        self.rows.extend(other.rows)

    def aggregate(self) -> dict[str, float]:
        """Mean of every per-image metric."""
        if not self.rows:
            raise ValidationError("empty metric report")
        return {k: float(np.mean([r[k] for r in self.rows])) for k in METRIC_NAMES}

    def to_tsv(self) -> str:
        out = [f"# {k}={v}" for k, v in self.meta.items()]
        out.append("\t".join(("image",) + METRIC_NAMES))
        for r in self.rows:
            out.append("\t".join([r["name"]] + [f"{r[k]:.10g}" for k in METRIC_NAMES]))
        agg = self.aggregate()
        out.append("\t".join(["mean"] + [f"{agg[k]:.10g}" for k in METRIC_NAMES]))
        return "\n".join(out) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_tsv())

    @classmethod
    def from_tsv(cls, text: str) -> "MetricReport":
        rep = cls()
        header = None
        for line in text.splitlines():
            if line.startswith("# "):
                k, _, v = line[2:].partition("=")
                rep.meta[k] = v
                continue
            cells = line.split("\t")
            if header is None:
                header = cells
                continue
            if cells[0] == "mean":
                continue
            rep.add(cells[0], dict(zip(header[1:], map(float, cells[1:]))))
        return rep


def compute_metrics(pred_radiance: np.ndarray, gt_radiance: np.ndarray, table: PuTable,
                    max_radiance: float = 1.0, name: str = "image") -> MetricReport:
    """Metrics of HxWx3 linear radiance ``pred`` against reference ``gt``.

    Both images are divided by ``max_radiance`` (the largest representable
    radiance) and PU-encoded; the PSNR/SSIM peak is the PU value of 1.0.
    """
    pred = np.asarray(pred_radiance, dtype=np.float64)
    gt = np.asarray(gt_radiance, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[2] != 3:
        raise DimensionError(f"expected two HxWx3 radiance images, got {pred.shape}, {gt.shape}")
    if not max_radiance > 0:
        raise ValidationError("max_radiance must be positive")
    if np.any(pred < 0) or np.any(gt < 0):
        raise ValidationError("metrics take linear (non-negative) radiance; clamp predictions first")
    pp = pu_encode(pred / max_radiance, table)
    pg = pu_encode(gt / max_radiance, table)
    peak = float(pu_encode(np.array([1.0]), table)[0])
    diff = pp - pg
    mse = float(np.mean(diff * diff))
    yp, yg = pp @ LUMA_601, pg @ LUMA_601
    mse_y = float(np.mean((yp - yg) ** 2))
    rep = MetricReport()
    rep.add(name, {
        "mae": float(np.mean(np.abs(diff))),
        "mse": mse,
        "psnr_rgb": psnr(mse, peak),
        "ssim_rgb": float(np.mean([ssim(pp[..., c], pg[..., c], peak) for c in range(3)])),
        "psnr_y": psnr(mse_y, peak),
        "ssim_y": ssim(yp, yg, peak),
    })
    return rep

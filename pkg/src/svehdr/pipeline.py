"""Datasets, patch sampling, training, evaluation, inference and inspection.

Dataset layout::

    DIR/dataset.cfg            generation parameters
    DIR/crf.txt                tabulated CRF used for every sample
    DIR/{train,val,test}/NNNNN.bayer.png   raw dual-time Bayer codes
    DIR/{train,val,test}/NNNNN.gt.pfm      linear ground-truth radiance
    DIR/{train,val,test}/NNNNN.meta.cfg    bits, tau_s, tau_l, cfa, short_first
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import autograd as ag
from . import checkpoint as ckpt_io
from . import plots
from .autograd import Adam, CosineSchedule
from .config import TrainConfig
from .errors import ConfigError, DimensionError, NumericError, ValidationError
from .imageio import read_image, read_kv, read_png, write_kv, write_pfm, write_png
from .losses import total_loss
from .metrics import MetricReport, PuTable, compute_metrics
from .network import ModelWeights, build_model, extract_betas, model_forward
from .radiometry import (DEFAULT_ALPHA, Crf, NetworkDomain, RadianceImage, denormalize, exposure_mask,
                         normalize_for_network, to_hwc, to_radiance, tonemap_display, write_crf)
from .sve import (BayerFrame, ExposurePair, exposure_map, gen_synthetic_scene, merge_ground_truth,
                  simulate_dual_time, simulate_from_scene)

SPLITS = ("train", "val", "test")
CRF_BITS = 12


@dataclass
class Sample:
    name: str
    e_norm: np.ndarray  # (H, W) normalized Bayer radiance
    mask: np.ndarray  # (H, W)
    gt: np.ndarray | None  # (3, H, W) normalized target
    domain: NetworkDomain


# ------------------------------------------------------------------ dataset


def split_counts(n: int) -> tuple[int, int, int]:
    n_train = round(0.6 * n)
    n_val = round(0.2 * n)
    return n_train, n_val, n - n_train - n_val


def _split_of(index: int, n: int) -> str:
    n_train, n_val, _ = split_counts(n)
    return "train" if index < n_train else "val" if index < n_train + n_val else "test"


def _write_sample(root: Path, split: str, index: int, frame: BayerFrame, gt: np.ndarray, crf_text: str) -> None:
    d = root / split
    d.mkdir(parents=True, exist_ok=True)
    stem = f"{index:05d}"
    write_png(d / f"{stem}.bayer.png", frame.values, bits=8 if frame.bits <= 8 else 16)
    write_pfm(d / f"{stem}.gt.pfm", gt)
    em = frame.exposure_map
    write_kv(d / f"{stem}.meta.cfg", {"bits": frame.bits, "tau_s": repr(em.tau_s), "tau_l": repr(em.tau_l),
                                      "cfa": frame.cfa, "short_first": int(em.short_first), "crf": crf_text})


def gen_dataset(out, count: int, seed: int, size: tuple[int, int], ratio: float, crf: Crf, bits: int,
                stops: float, cfa: str = "RGGB") -> Path:
    """Render ``count`` synthetic scenes into the dataset layout (tau_s = 1, tau_l = ratio)."""
    h, w = size
    if count < 1:
        raise ValidationError("count must be >= 1")
    if h % 4 or w % 2:
        raise DimensionError(f"size {h}x{w} must be a multiple of (4, 2)")
    if not ratio >= 1:
        raise ValidationError(f"exposure ratio must be >= 1, got {ratio}")
    if not 1 <= bits <= 16:
        raise ValidationError(f"bits must be in [1, 16], got {bits}")
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    write_crf(root / "crf.txt", crf, CRF_BITS)
    write_kv(root / "dataset.cfg", {"count": count, "seed": seed, "size": f"{h}x{w}", "ratio": repr(float(ratio)),
                                    "bits": bits, "stops": repr(float(stops)), "cfa": cfa, "crf": crf.describe()})
    for i in range(count):
        scene = gen_synthetic_scene(seed * 1_000_003 + i, h, w, stops)
        frame, gt = simulate_from_scene(scene, crf, 1.0, float(ratio), bits, cfa)
        _write_sample(root, _split_of(i, count), i, frame, gt.linear(), "../crf.txt")
    return root


def prep_dataset(short_dir, long_dir, out, tau_s: float, tau_l: float, crf: Crf, bits: int | None = None,
                 cfa: str = "RGGB") -> Path:
    """Turn matching short/long full-colour captures into the dataset layout.

    Ground truth is the weighted merge of each pair; the input is the
    row-interleaved mosaic of the two captures.
    """
    short_dir, long_dir = Path(short_dir), Path(long_dir)
    names = sorted(p.name for p in short_dir.glob("*.png"))
    if not names:
        raise ValidationError(f"no PNG captures in {short_dir}")
    missing = [n for n in names if not (long_dir / n).exists()]
    if missing:
        raise ValidationError(f"long-exposure captures missing for {missing}")
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    write_crf(root / "crf.txt", crf, CRF_BITS)
    write_kv(root / "dataset.cfg", {"count": len(names), "source": str(short_dir), "tau_s": repr(tau_s),
                                    "tau_l": repr(tau_l), "cfa": cfa, "crf": crf.describe()})
    for i, name in enumerate(names):
        zs, zl = read_png(short_dir / name), read_png(long_dir / name)
        nbits = bits or (8 if zs.dtype == np.uint8 else 16)
        if zs.ndim != 3:
            raise DimensionError(f"{name}: captures must be RGB")
        h, w = zs.shape[0] - zs.shape[0] % 4, zs.shape[1] - zs.shape[1] % 2
        pair = ExposurePair(zs[:h, :w].astype(np.int64), zl[:h, :w].astype(np.int64), tau_s, tau_l, nbits)
        frame = simulate_dual_time(pair, cfa)
        gt = merge_ground_truth(pair, crf).linear()
        _write_sample(root, _split_of(i, len(names)), i, frame, gt, "../crf.txt")
    return root


def read_frame(bayer_path, meta: dict[str, str] | None = None, **overrides) -> BayerFrame:
    """Load a Bayer PNG; exposure metadata comes from its sidecar and/or ``overrides``."""
    bayer_path = Path(bayer_path)
    if meta is None:
        side = sidecar_path(bayer_path)
        meta = read_kv(side) if side.exists() else {}
    meta = {**meta, **{k: str(v) for k, v in overrides.items() if v is not None}}
    for key in ("bits", "tau_s", "tau_l"):
        if key not in meta:
            raise ValidationError(f"{bayer_path}: exposure metadata {key!r} missing (no sidecar or flag)")
    z = read_image(bayer_path)
    if z.ndim != 2:
        raise DimensionError(f"{bayer_path}: Bayer input must be single-channel, got {z.shape}")
    h, w = z.shape
    if h % 4 or w % 2:
        raise DimensionError(f"{bayer_path}: {h}x{w} is not divisible by (4, 2)")
    em = exposure_map(h, float(meta["tau_s"]), float(meta["tau_l"]), bool(int(meta.get("short_first", "1"))))
    return BayerFrame(z.astype(np.int64), int(meta["bits"]), meta.get("cfa", "RGGB"), em)


def sidecar_path(bayer_path) -> Path:
    p = Path(bayer_path)
    stem = p.name.split(".")[0]
    return p.with_name(f"{stem}.meta.cfg")


def dataset_crf(root) -> Crf:
    path = Path(root) / "crf.txt"
    if not path.exists():
        raise ValidationError(f"{root}: dataset CRF (crf.txt) missing")
    return Crf.parse(f"file:{path}")


def prepare_sample(frame: BayerFrame, crf: Crf, gt_linear: np.ndarray | None = None, alpha: float = DEFAULT_ALPHA,
                   weighting: str = "binary", name: str = "sample") -> Sample:
    em = frame.exposure_map
    domain = NetworkDomain.for_exposures(em.tau_s, em.tau_l, frame.bits, crf)
    e_norm = normalize_for_network(to_radiance(frame, crf), domain)[0, 0]
    mask = exposure_mask(frame, alpha, weighting)
    gt = None
    if gt_linear is not None:
        gt_linear = np.asarray(gt_linear, dtype=np.float64)
        if gt_linear.shape != frame.shape + (3,):
            raise DimensionError(f"{name}: ground truth {gt_linear.shape} does not match frame {frame.shape}")
        gt = normalize_for_network(RadianceImage(gt_linear), domain)[0]
    return Sample(name, e_norm, mask, gt, domain)


def list_split(root, split: str) -> list[Path]:
    if split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
    d = Path(root) / split
    if not d.is_dir():
        raise ValidationError(f"{d}: split directory missing")
    return sorted(d.glob("*.bayer.png"))


def load_split(root, split: str, alpha: float = DEFAULT_ALPHA, weighting: str = "binary") -> list[Sample]:
    crf = dataset_crf(root)
    out = []
    for path in list_split(root, split):
        frame = read_frame(path)
        stem = path.name.split(".")[0]
        gt = read_image(path.with_name(f"{stem}.gt.pfm")).astype(np.float64)
        out.append(prepare_sample(frame, crf, gt, alpha, weighting, stem))
    return out


# ----------------------------------------------------------------- training


def patch_origins(h: int, w: int, patch: int) -> tuple[range, range]:
    """Admissible crop origins: rows = 0 mod 4, cols = 0 mod 2."""
    if patch % 4:
        raise ConfigError(f"patch size must be a multiple of 4, got {patch}")
    if patch > h or patch > w:
        raise DimensionError(f"patch {patch} larger than image {h}x{w}")
    return range(0, h - patch + 1, 4), range(0, w - patch + 1, 2)


def sample_patch(sample: Sample, patch: int, rng: np.random.Generator):
    """Phase-preserving random crop of (E_norm, mask, gt)."""
    rows, cols = patch_origins(*sample.e_norm.shape, patch)
    r = rows[rng.integers(len(rows))]
    c = cols[rng.integers(len(cols))]
    win = (slice(r, r + patch), slice(c, c + patch))
    return sample.e_norm[win], sample.mask[win], sample.gt[(slice(None),) + win]


def _batch(samples: list[Sample], cfg: TrainConfig, rng: np.random.Generator, dtype):
    e, m, g = [], [], []
    for _ in range(cfg.batch):
        pe, pm, pg = sample_patch(samples[rng.integers(len(samples))], cfg.patch, rng)
        e.append(pe)
        m.append(pm)
        g.append(pg)
    return (np.stack(e)[:, None].astype(dtype), np.stack(m)[:, None].astype(dtype), np.stack(g).astype(dtype))


@dataclass
class TrainResult:
    weights: ModelWeights
    optimizer: Adam
    rows: list[tuple]  # (iteration, lr, l1, color, total)
    checkpoint: Path
    iteration: int


LOG_HEADER = "iteration\tlr\tl1\tcolor\ttotal"


def format_log(rows) -> str:
    lines = [LOG_HEADER] + [f"{it}\t{lr!r}\t{a!r}\t{b!r}\t{c!r}" for it, lr, a, b, c in rows]
    return "\n".join(lines) + "\n"


def read_log(path) -> list[tuple]:
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        it, lr, a, b, c = line.split("\t")
        rows.append((int(it), float(lr), float(a), float(b), float(c)))
    return rows


def _ckpt_extra(cfg: TrainConfig) -> dict[str, str]:
    kv = cfg.to_kv()
    keep = ("train.seed", "train.iterations", "train.dtype", "train.lambda", "mask.alpha", "mask.weighting")
    return {k: kv[k] for k in keep}


def train(config: TrainConfig, resume=None, until: int | None = None, samples: list[Sample] | None = None,
          progress=None) -> TrainResult:
    """Run (or continue) the training loop.

    ``until`` stops after that many total iterations without changing the
    learning-rate schedule, so a run split at any point and resumed from its
    checkpoint reproduces the uninterrupted run. Checkpoints go to
    ``config.out`` every ``ckpt_interval`` iterations plus ``last.ckpt`` at
    the end; the loss log is ``loss.tsv`` with a matching ``loss.png``.
    """
    dtype = np.dtype(config.dtype)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    with threadpool_limits(limits=1):
        if samples is None:
            samples = load_split(config.data, "train", config.alpha, config.weighting)
        if not samples:
            raise ValidationError(f"{config.data}: no training samples")
        for s in samples:
            patch_origins(*s.e_norm.shape, config.patch)

        rows: list[tuple] = []
        if resume is not None:
            ck = ckpt_io.load(resume, expected=config.model)
            weights = ck.weights().astype(dtype)
            opt = ck.optimizer(weights)
            state = ck.rng_state()
            if opt is None or state is None:
                raise ConfigError(f"{resume}: checkpoint has no optimizer/RNG state to resume from")
            rng = np.random.default_rng()
            rng.bit_generator.state = state
            start = ck.iteration
            log_path = out / "loss.tsv"
            if log_path.exists():
                rows = [r for r in read_log(log_path) if r[0] <= start]
        else:
            weights = build_model(config.model, seed=config.seed, dtype=dtype)
            opt = Adam(dict(weights.params))
            rng = np.random.default_rng([config.seed, 1])
            start = 0

        schedule = CosineSchedule(config.iterations, config.lr_initial, config.lr_final)
        stop = config.iterations if until is None else min(until, config.iterations)
        extra = _ckpt_extra(config)
        it = start
        try:
            for it in range(start, stop):
                e, m, g = _batch(samples, config, rng, dtype)
                pred = model_forward(weights, e, m)
                lv = total_loss(pred, g, config.lam)
                opt.zero_grad()
                ag.backward(lv.total)
                lr = ag.optimizer_step(opt, schedule)
                rows.append((it + 1, lr) + lv.values())
                if progress is not None:
                    progress(rows[-1])
                if config.ckpt_interval and (it + 1) % config.ckpt_interval == 0 and it + 1 < stop:
                    ckpt_io.save(out / f"iter_{it + 1:07d}.ckpt",
                                 ckpt_io.make_checkpoint(weights, opt, rng, it + 1, extra))
        except NumericError as exc:
            ag.get_tape().reset()
            raise NumericError(f"training aborted at iteration {it + 1}: {exc}; last good checkpoint kept") from exc
        finally:
            (out / "loss.tsv").write_text(format_log(rows))
            plots.loss_curve(rows, out / "loss.png")

        final = out / "last.ckpt"
        ckpt_io.save(final, ckpt_io.make_checkpoint(weights, opt, rng, stop, extra))
    return TrainResult(weights, opt, rows, final, stop)


# --------------------------------------------------------------- inference


def predict(weights: ModelWeights, sample: Sample) -> np.ndarray:
    """Full-frame normalized prediction (3, H, W), no patching."""
    dtype = weights.dtype
    with ag.no_grad():
        out = model_forward(weights, sample.e_norm[None, None].astype(dtype), sample.mask[None, None].astype(dtype))
    return out.data[0].astype(np.float64)


def to_radiance_hwc(pred_norm: np.ndarray, domain: NetworkDomain) -> np.ndarray:
    """Clamp a (3, H, W) prediction to [0, 1] and map it back to linear radiance (H, W, 3)."""
    return to_hwc(denormalize(np.clip(pred_norm, 0.0, 1.0)[None], domain))


def _weights_from(ckpt) -> tuple[ModelWeights, ckpt_io.Checkpoint]:
    ck = ckpt if isinstance(ckpt, ckpt_io.Checkpoint) else ckpt_io.load(ckpt)
    return ck.weights(), ck


def evaluate(data, split: str, ckpt, table: PuTable, samples: list[Sample] | None = None) -> MetricReport:
    """Per-image and aggregate metrics of full-frame predictions against ground truth."""
    weights, ck = _weights_from(ckpt) if not isinstance(ckpt, ModelWeights) else (ckpt, None)
    alpha = float(ck.config.get("mask.alpha", DEFAULT_ALPHA)) if ck else DEFAULT_ALPHA
    weighting = ck.config.get("mask.weighting", "binary") if ck else "binary"
    with threadpool_limits(limits=1):
        if samples is None:
            samples = load_split(data, split, alpha, weighting)
        if not samples:
            raise ValidationError(f"{data}: split {split!r} is empty")
        report = MetricReport(meta={"split": split, "n": str(len(samples))})
        for s in samples:
            h, w = s.e_norm.shape
            if h % 4 or w % 2:
                raise DimensionError(f"{s.name}: {h}x{w} does not match the 4x2 model geometry")
            pred = to_radiance_hwc(predict(weights, s), s.domain)
            gt = to_hwc(denormalize(s.gt[None], s.domain))
            report.extend(compute_metrics(pred, gt, table, max_radiance=s.domain.e_max, name=s.name))
    return report


def infer(input_path, crf: Crf, ckpt, out_path, png_path=None, **meta) -> np.ndarray:
    """Reconstruct linear HDR radiance from one Bayer capture; writes a PFM (and a PNG preview)."""
    weights, ck = _weights_from(ckpt)
    frame = read_frame(input_path, **meta)
    alpha = float(ck.config.get("mask.alpha", DEFAULT_ALPHA))
    sample = prepare_sample(frame, crf, None, alpha, ck.config.get("mask.weighting", "binary"), Path(input_path).name)
    with threadpool_limits(limits=1):
        hdr = to_radiance_hwc(predict(weights, sample), sample.domain)
    write_pfm(out_path, hdr)
    if png_path is not None:
        write_png(png_path, tonemap_display(hdr), bits=8)
    return hdr


# --------------------------------------------------------------- inspection


def power_iteration(cov: np.ndarray, tol: float = 1e-8, max_iter: int = 1000) -> tuple[float, np.ndarray, int]:
    """Leading eigenpair of a symmetric PSD matrix; returns (value, unit vector, iterations)."""
    n = cov.shape[0]
    v = np.ones(n) / math.sqrt(n)
    for i in range(1, max_iter + 1):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0, v, i
        w /= norm
        if w @ v < 0:
            w = -w
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return float(v @ cov @ v), v, i


def principal_map(features: np.ndarray, tol: float = 1e-8, max_iter: int = 1000) -> np.ndarray:
    """First principal component of a (C, H, W) stack, min-max scaled to [0, 1]."""
    c, h, w = features.shape
    x = features.reshape(c, -1).astype(np.float64)
    x = x - x.mean(axis=1, keepdims=True)
    cov = x @ x.T / max(x.shape[1] - 1, 1)
    _, v, _ = power_iteration(cov, tol, max_iter)
    pc = (v @ x).reshape(h, w)
    lo, hi = pc.min(), pc.max()
    return (pc - lo) / (hi - lo) if hi > lo else np.zeros_like(pc)


@dataclass
class InspectReport:
    betas: list[float]
    heatmap: np.ndarray


def inspect(ckpt, sample_path, out_dir=None, crf: Crf | None = None, **meta) -> InspectReport:
    weights, ck = _weights_from(ckpt)
    betas = extract_betas(weights)
    frame = read_frame(sample_path, **meta)
    if crf is None:
        side = sidecar_path(sample_path)
        crf_ref = read_kv(side).get("crf", "linear") if side.exists() else "linear"
        if crf_ref not in ("linear",) and not crf_ref.startswith("gamma:"):
            crf_ref = str((Path(sample_path).parent / crf_ref).resolve())
        crf = Crf.parse(crf_ref)
    s = prepare_sample(frame, crf, None, float(ck.config.get("mask.alpha", DEFAULT_ALPHA)),
                       ck.config.get("mask.weighting", "binary"))
    dtype = weights.dtype
    with threadpool_limits(limits=1), ag.no_grad():
        _, g = model_forward(weights, s.e_norm[None, None].astype(dtype), s.mask[None, None].astype(dtype),
                             return_egb=True)
    heat = principal_map(g.data[0])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "betas.tsv").write_text("block\tbeta\n" + "".join(f"{i}\t{b!r}\n" for i, b in enumerate(betas, 1)))
        plots.beta_bars(betas, out / "betas.png")
        plots.heatmap(heat, out / "egb_pca.png")
    return InspectReport(betas, heat)

"""Command-line entry point: ``svehdr <command> ...``.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from . import oracles, pipeline, plots
from .config import load_config
from .errors import SveHdrError, ValidationError
from .metrics import load_pu_table
from .network import count_params, estimate_flops, named_config
from .radiometry import Crf

# reference model sizes (millions of parameters) and costs at 480x480 (1e11 FLOPs)
REFERENCE = {
    "opt_base": (1.221, 2.813),
    "opt_2_2": (1.222, 2.813),
    "opt_4_2": (1.225, 2.814),
    "opt_4_4": (1.238, 2.814),
    "opt_rggb": (1.230, 2.817),
    "svc_d5": (1.227, 2.816),
    "svc3": (1.225, 2.813),
    "svc5": (1.234, 2.816),
    "svc7": (1.246, 2.819),
    "rb+egb": (1.850, 4.263),
    "multiplication": (None, 4.345),
    "concatenation": (None, 4.346),
    "complete": (1.912, 4.352),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from exc
    return h, w


def _crf(text: str) -> Crf:
    if text in ("linear",) or text.startswith(("gamma:", "file:")):
        return Crf.parse(text)
    if Path(text).exists():
        return Crf.parse(f"file:{text}")
    raise ValidationError(f"CRF {text!r} not found")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="svehdr", description="Dual-exposure Bayer to HDR reconstruction")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=_size, default=(64, 64))
    g.add_argument("--ratio", type=float, default=16.0)
    g.add_argument("--crf", default="linear")
    g.add_argument("--bits", type=int, default=8)
    g.add_argument("--stops", type=float, default=8.0)
    g.add_argument("--cfa", default="RGGB")

    pr = sub.add_parser("prep", help="build a dataset from real short/long capture pairs")
    pr.add_argument("--short", required=True)
    pr.add_argument("--long", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--tau-s", type=float, required=True)
    pr.add_argument("--tau-l", type=float, required=True)
    pr.add_argument("--crf", default="linear")
    pr.add_argument("--bits", type=int)
    pr.add_argument("--cfa", default="RGGB")

    t = sub.add_parser("train", help="train from a key=value config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume")
    t.add_argument("--until", type=int, help="stop after this many total iterations")
    t.add_argument("--log-every", type=int, default=100)

    e = sub.add_parser("eval", help="metrics of a checkpoint on a dataset split")
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("val", "test", "train"), default="test")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--pu", default="default", help="PU table file, 'default' or 'identity'")
    e.add_argument("--out", help="directory for metrics.tsv and metrics.png")

    i = sub.add_parser("infer", help="reconstruct one Bayer capture")
    i.add_argument("--input", required=True)
    i.add_argument("--crf", required=True)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--png")
    i.add_argument("--tau-s", type=float)
    i.add_argument("--tau-l", type=float)
    i.add_argument("--bits", type=int)
    i.add_argument("--cfa")

    c = sub.add_parser("count", help="parameters and FLOPs")
    c.add_argument("--config")
    c.add_argument("--res", type=_size, default=(480, 480))

    k = sub.add_parser("check", help="run oracle self-checks")
    k.add_argument("--suite", choices=sorted(oracles.SUITES) + ["all"], default="all")

    s = sub.add_parser("inspect", help="fusion weights and EGB feature map")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--sample", required=True)
    s.add_argument("--crf")
    s.add_argument("--out", default=".")
    return p


def _meta(args) -> dict:
    return {"tau_s": args.tau_s, "tau_l": args.tau_l, "bits": args.bits, "cfa": args.cfa}


def cmd_gen_data(args) -> None:
    root = pipeline.gen_dataset(args.out, args.count, args.seed, args.size, args.ratio, _crf(args.crf),
                                args.bits, args.stops, args.cfa.upper())
    print(f"wrote {args.count} samples to {root}")


def cmd_prep(args) -> None:
    root = pipeline.prep_dataset(args.short, args.long, args.out, args.tau_s, args.tau_l, _crf(args.crf),
                                 args.bits, args.cfa.upper())
    print(f"wrote dataset to {root}")


def cmd_train(args) -> None:
    cfg = load_config(args.config)

    def progress(row):
        if args.log_every and row[0] % args.log_every == 0:
            print("{}\tlr={:.3e}\tl1={:.6f}\tcolor={:.6f}\ttotal={:.6f}".format(*row), flush=True)

    res = pipeline.train(cfg, resume=args.resume, until=args.until, progress=progress)
    print(f"finished at iteration {res.iteration}; checkpoint {res.checkpoint}")


def cmd_eval(args) -> None:
    report = pipeline.evaluate(args.data, args.split, args.ckpt, load_pu_table(args.pu))
    sys.stdout.write(report.to_tsv())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write(out / "metrics.tsv")
        plots.metric_bars(report, out / "metrics.png")


def cmd_infer(args) -> None:
    hdr = pipeline.infer(args.input, _crf(args.crf), args.ckpt, args.out, args.png, **_meta(args))
    print(f"wrote {args.out} ({hdr.shape[0]}x{hdr.shape[1]}, max radiance {hdr.max():.6g})")


def cmd_count(args) -> None:
    h, w = args.res
    if args.config:
        cfg = load_config(args.config).model
        print("params\tflops")
        print(f"{count_params(cfg)}\t{estimate_flops(cfg, h, w)}")
        return
    print(f"variant\tparams\tparams_M\tref_params_M\tflops@{h}x{w}\tflops_1e11\tref_flops_1e11@480x480")
    for name, (ref_p, ref_f) in REFERENCE.items():
        cfg = named_config("rb" if name == "opt_base" else name)
        n, f = count_params(cfg), estimate_flops(cfg, h, w)
        print(f"{name}\t{n}\t{n / 1e6:.3f}\t{'-' if ref_p is None else f'{ref_p:.3f}'}\t{f}\t{f / 1e11:.3f}\t{ref_f:.3f}")


def cmd_check(args) -> int:
    names = sorted(oracles.SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        for label, ok, detail in oracles.SUITES[name]():
            print(f"{'PASS' if ok else 'FAIL'}\t{name}\t{label}\t{detail}")
            failed += not ok
    return 2 if failed else 0


def cmd_inspect(args) -> None:
    crf = _crf(args.crf) if args.crf else None
    rep = pipeline.inspect(args.ckpt, args.sample, args.out, crf)
    print("block\tbeta")
    for n, b in enumerate(rep.betas, 1):
        print(f"{n}\t{b:.6g}")
    print(f"wrote {Path(args.out) / 'egb_pca.png'}")


COMMANDS = {
    "gen-data": cmd_gen_data, "prep": cmd_prep, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
    "count": cmd_count, "check": cmd_check, "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args) or 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SveHdrError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

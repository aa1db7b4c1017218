"""Command-line front end for closed-loop experiments.

Subcommands: run, compare, sweep, gen-trace, report.  Every command writes
plain CSV/JSON so downstream scripts can diff runs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from .allocator import AllocatorConfig, InvariantViolation
from .encoder_sim import NoiseModel, generate_trace, read_trace, run_sequence, write_trace
from .harness import (
    DEFAULT_VARSIGMA_GRID,
    compare,
    compute_metrics,
    recompute_from_logs,
    sweep_varsigma,
    write_report,
)
from .nash import NewtonConfig

EXIT_INVARIANT = 3
EXIT_MISMATCH = 4


def _config(args) -> AllocatorConfig:
    return AllocatorConfig(varsigma=args.varsigma, eta_once_per_frame=args.eta_once_per_frame,
                           newton=NewtonConfig(tau=args.tau))


def _noise(args) -> NoiseModel:
    return NoiseModel(args.sigma_bits, args.sigma_params)


def _add_run_flags(p: argparse.ArgumentParser, allocator: bool = True) -> None:
    p.add_argument("--trace", required=True, type=Path, help="trace file (see gen-trace)")
    p.add_argument("--bitrate", type=float, default=None, help="target bits per second (default: trace reference)")
    p.add_argument("--fps", type=float, default=None, help="frame rate (default: trace fps)")
    if allocator:
        p.add_argument("--allocator", choices=("nash", "proportional"), default="nash")
    p.add_argument("--varsigma", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--eta-once-per-frame", action="store_true")
    p.add_argument("--sigma-bits", type=float, default=0.1)
    p.add_argument("--sigma-params", type=float, default=0.05)
    p.add_argument("--init", choices=("default", "truth"), default="default")
    p.add_argument("--tau", type=float, default=1e-10, help="Newton stopping tolerance")


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_run(args) -> int:
    trace = read_trace(args.trace)
    rep = run_sequence(trace, _config(args), args.bitrate, args.fps, allocator=args.allocator,
                       noise=_noise(args), seed=args.seed, init=args.init)
    write_report(rep, args.out_dir)
    print(json.dumps({"rc_error": compute_metrics(rep).rc_error, "total_bits": rep.total_bits,
                      "out_dir": str(args.out_dir)}))
    return 0


def cmd_compare(args) -> int:
    trace = read_trace(args.trace)
    if args.fps is not None and args.fps != trace.fps:
        trace.fps = args.fps
    cmp, runs = compare(trace, _config(args), args.bitrate, _noise(args), args.seed, args.init)
    for name, rep in runs.items():
        write_report(rep, args.out_dir / name)
    out = {
        "winners": cmp.winners,
        "metrics": {n: {k: v for k, v in vars(m).items() if k not in ("frame_bits", "frame_psnr")}
                    for n, m in cmp.metrics.items()},
        "nbs_game": [None if math.isnan(v) else v for v in cmp.nbs_game],
        "nbs_baseline": [None if math.isnan(v) else v for v in cmp.nbs_baseline],
        "nbs_dominance_holds": cmp.nbs_dominance_holds,
    }
    _dump(args.out_dir / "comparison.json", out)
    print(json.dumps(cmp.winners, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    trace = read_trace(args.trace)
    if args.fps is not None:
        trace.fps = args.fps
    rows = sweep_varsigma(trace, args.values, _config(args), args.bitrate, _noise(args), args.seed, args.init)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    for r in rows:
        print(f"varsigma={r['varsigma']:.2f}  rc_error={r['rc_error']:.4f}%  mean_psnr={r['mean_psnr']:.3f}")
    return 0


def cmd_gen_trace(args) -> int:
    tr = generate_trace(args.name, args.width, args.height, frames=args.frames, gop_size=args.gop,
                        seed=args.seed, fps=args.fps, bpp=args.bpp)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(tr, args.out)
    print(f"wrote {args.out}: {tr.frame_count} frames x {tr.ctu_count} CTUs")
    return 0


def cmd_report(args) -> int:
    met, summary = recompute_from_logs(args.run_dir)
    stored = summary["metrics"]
    ok = True
    for key in ("rc_error", "mean_psnr_proxy", "psnr_variance", "bits_variance", "bits_mean"):
        mine = getattr(met, key)
        if not math.isclose(mine, stored[key], rel_tol=1e-12, abs_tol=1e-12):
            print(f"mismatch in {key}: logs give {mine!r}, summary says {stored[key]!r}", file=sys.stderr)
            ok = False
    print(json.dumps({k: getattr(met, k) for k in stored}, sort_keys=True))
    return 0 if ok else EXIT_MISMATCH


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nashrc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one trace, one rate, one allocator")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="bargaining allocator against the proportional baseline")
    _add_run_flags(p, allocator=False)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="closed-loop runs over a varsigma grid")
    _add_run_flags(p, allocator=False)
    p.add_argument("--values", type=float, nargs="+", default=list(DEFAULT_VARSIGMA_GRID))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-trace", help="write a synthetic trace")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--width", type=int, default=1280)
    p.add_argument("--height", type=int, default=720)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--gop", type=int, default=4)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--bpp", type=float, default=0.06, help="reference bitrate in bits per pixel")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("report", help="recompute metrics from a run directory and check the summary")
    p.add_argument("--run-dir", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())

"""Evaluation metrics, the proportional baseline, and experiment drivers."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocator import AllocationDecision, AllocatorConfig, FrameContext, Source, plain_lambda_decision
from .encoder_sim import CtuLog, FrameLog, NoiseModel, SequenceReport, SequenceTrace, run_sequence

DEFAULT_VARSIGMA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
RATE_POINT_SCALES = (0.5, 1.0, 2.0, 4.0)


def rc_error(target_bits: float, actual_bits: float) -> float:
    """Rate-control error in percent."""
    if not target_bits > 0:
        raise ValueError("target_bits must be > 0")
    return 100.0 * abs(target_bits - actual_bits) / target_bits


def psnr_proxy(mse: float) -> float:
    if not mse > 0:
        raise ValueError("mse must be > 0")
    return 10.0 * math.log10(255.0 ** 2 / mse)


def fluctuation_stats(series) -> tuple[float, float]:
    """Population variance and mean."""
    a = np.asarray(series, dtype=float)
    if a.size == 0:
        raise ValueError("empty series")
    return float(a.var()), float(a.mean())


def baseline_proportional(ctx: FrameContext, cfg: AllocatorConfig = AllocatorConfig()) -> AllocationDecision:
    """Equal-bpp allocation of the remaining bits, with the same window and clip chain as the game allocator."""
    return plain_lambda_decision(ctx, cfg, Source.BASELINE_PROPORTIONAL)


@dataclass
class RunMetrics:
    rc_error: float
    mean_psnr_proxy: float
    psnr_variance: float
    bits_variance: float
    bits_mean: float
    frame_bits: list[int] = field(default_factory=list)
    frame_psnr: list[float] = field(default_factory=list)


def metrics_from_frames(frames, target_total_bits: float) -> RunMetrics:
    bits = [int(f.actual_bits) for f in frames]
    psnr = [psnr_proxy(float(f.mse)) for f in frames]
    pv, pm = fluctuation_stats(psnr)
    bv, bm = fluctuation_stats(bits)
    return RunMetrics(rc_error(target_total_bits, sum(bits)), pm, pv, bv, bm, bits, psnr)


def compute_metrics(report: SequenceReport) -> RunMetrics:
    return metrics_from_frames(report.frames, report.target_total_bits)


def geomean_arithmean_report(report: SequenceReport) -> dict:
    """Per-frame geometric and arithmetic mean of the coded bpps, plus the largest relative gap."""
    rows = [(f.frame, f.geo_bpp, f.arith_bpp) for f in report.frames]
    gaps = [(a - g) / a for _, g, a in rows]
    return {"frames": rows, "max_relative_gap": max(gaps) if gaps else 0.0}


def geo_arith_means(bpps) -> tuple[float, float]:
    a = np.asarray(bpps, dtype=float)
    return float(np.exp(np.mean(np.log(a)))), float(np.mean(a))


@dataclass
class ComparisonReport:
    metrics: dict[str, RunMetrics]
    nbs_game: list[float]
    nbs_baseline: list[float]
    winners: dict[str, str]

    @property
    def nbs_dominance_holds(self) -> bool:
        return all(g >= b for g, b in zip(self.nbs_game, self.nbs_baseline) if not math.isnan(g))


def compare(trace: SequenceTrace, cfg: AllocatorConfig = AllocatorConfig(), target_bitrate: float | None = None,
            noise: NoiseModel = NoiseModel(), seed: int = 0, init: str = "default") -> tuple[ComparisonReport, dict]:
    """Run the bargaining allocator and the proportional baseline on the same trace, budget and noise."""
    runs = {name: run_sequence(trace, cfg, target_bitrate, allocator=name, noise=noise, seed=seed, init=init)
            for name in ("nash", "proportional")}
    m = {name: compute_metrics(r) for name, r in runs.items()}
    game = runs["nash"].frames
    winners = {
        "rc_error": min(m, key=lambda a: m[a].rc_error),
        "mean_psnr_proxy": max(m, key=lambda a: m[a].mean_psnr_proxy),
        "psnr_variance": min(m, key=lambda a: m[a].psnr_variance),
        "bits_variance": min(m, key=lambda a: m[a].bits_variance),
    }
    rep = ComparisonReport(m, [f.nbs_game for f in game], [f.nbs_baseline for f in game], winners)
    return rep, runs


def sweep_varsigma(trace: SequenceTrace, values=DEFAULT_VARSIGMA_GRID, cfg: AllocatorConfig = AllocatorConfig(),
                   target_bitrate: float | None = None, noise: NoiseModel = NoiseModel(), seed: int = 0,
                   init: str = "default") -> list[dict]:
    """One closed-loop run per varsigma value; returns one table row per value."""
    rows = []
    for v in values:
        if not 0 < v <= 1:
            raise ValueError(f"varsigma {v} outside (0, 1]")
        rep = run_sequence(trace, dataclasses.replace(cfg, varsigma=v), target_bitrate, noise=noise,
                           seed=seed, init=init)
        met = compute_metrics(rep)
        inter = [c for c in rep.ctus if c.source != Source.INTRA_PROPORTIONAL.value]
        rows.append({
            "varsigma": v,
            "rc_error": met.rc_error,
            "mean_mse": float(np.mean([f.mse for f in rep.frames])),
            "mean_psnr": met.mean_psnr_proxy,
            "nash_fraction": sum(c.source == Source.NASH.value for c in inter) / max(1, len(inter)),
            "fallbacks": sum(c.source == Source.PLAIN_LAMBDA_FALLBACK.value for c in inter),
        })
    return rows


def rate_points(trace: SequenceTrace, scales=RATE_POINT_SCALES) -> list[float]:
    return [s * trace.reference_bitrate for s in scales]


# -- logs ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(path: Path, rows) -> None:
    rows = list(rows)
    cols = [f.name for f in dataclasses.fields(rows[0])] if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in cols])


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_report(report: SequenceReport, out_dir) -> Path:
    """Write ``summary.json``, ``frames.csv`` and ``ctus.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "frames.csv", report.frames)
    _write_rows(out / "ctus.csv", report.ctus)
    met = compute_metrics(report)
    summary = {
        "trace": report.trace_name,
        "allocator": report.allocator,
        "target_bitrate": report.target_bitrate,
        "fps": report.fps,
        "seed": report.seed,
        "varsigma": report.varsigma,
        "target_total_bits": report.target_total_bits,
        "total_bits": report.total_bits,
        "metrics": {k: v for k, v in dataclasses.asdict(met).items() if k not in ("frame_bits", "frame_psnr")},
        "geo_arith_max_relative_gap": geomean_arithmean_report(report)["max_relative_gap"],
    }
    (out / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return out


def _parse(value: str, typ):
    if typ is bool:
        return value == "1"
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    return value


def read_frames(path) -> list[FrameLog]:
    types = {f.name: f.type for f in dataclasses.fields(FrameLog)}
    conv = {"int": int, "float": float, "bool": bool, "str": str}
    with open(path, newline="", encoding="utf-8") as fh:
        return [FrameLog(**{k: _parse(v, conv[types[k]]) for k, v in row.items()}) for row in csv.DictReader(fh)]


def read_ctus(path) -> list[CtuLog]:
    types = {f.name: f.type for f in dataclasses.fields(CtuLog)}
    conv = {"int": int, "float": float, "bool": bool, "str": str}
    with open(path, newline="", encoding="utf-8") as fh:
        return [CtuLog(**{k: _parse(v, conv[types[k]]) for k, v in row.items()}) for row in csv.DictReader(fh)]


def recompute_from_logs(run_dir) -> tuple[RunMetrics, dict]:
    """Recompute run metrics from ``frames.csv`` and return them with the stored summary."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    frames = read_frames(run_dir / "frames.csv")
    return metrics_from_frames(frames, float(summary["target_total_bits"])), summary

"""Trace-driven virtual encoder.

A :class:`SequenceTrace` holds ground-truth (c, k) per CTU per frame.  The
virtual encoder "codes" a CTU at the controller's lambda by reading the rate
off the true curve, perturbing it with lognormal noise and reporting the
resulting distortion.  :func:`run_sequence` closes the loop with a
:class:`~nashrc.allocator.RateController`.

Trace file layout (tab separated, UTF-8)::

    # nashrc-trace 1
    # name=<str>
    # width=<int>
    # height=<int>
    # fps=<float>
    # reference_bitrate=<float>
    # gop_size=<int>
    # noise_seed=<int>
    # hierarchy=<int>,<int>,...      one temporal level per frame, 0 = intra
    frame	ctu	c	k
    0	0	0.367	8.72
    ...

Records are sorted by frame then CTU index in raster order; every frame
lists every CTU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .allocator import (
    AllocationDecision,
    AllocatorConfig,
    InvariantViolation,
    RateController,
    Source,
    allocate_intra_frame,
    commit_actual,
    partition_ctu_types,
    type_budget,
)
from .rd_model import DEFAULT_C, DEFAULT_K, CodingResult, RdParams, distortion_at_rate, rate_at_lambda

TRUTH_C_RANGE = (0.05, 5.0)
TRUTH_K_RANGE = (0.01, 1e6)
DEFAULT_LEVEL_WEIGHTS = (1.0, 0.6, 0.4, 0.25)
TRACE_MAGIC = "# nashrc-trace 1"


@dataclass
class SequenceTrace:
    name: str
    width: int
    height: int
    fps: float
    reference_bitrate: float
    gop_size: int
    hierarchy: list[int]
    c: np.ndarray  # (frames, ctus)
    k: np.ndarray
    noise_seed: int = 0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.k = np.asarray(self.k, dtype=float)
        n = len(partition_ctu_types(self.width, self.height))
        if self.c.shape != (len(self.hierarchy), n) or self.k.shape != self.c.shape:
            raise ValueError(f"trace arrays must be ({len(self.hierarchy)}, {n}), got {self.c.shape}")
        lo, hi = TRUTH_C_RANGE
        if np.any(self.c < lo) or np.any(self.c > hi):
            raise ValueError("ground-truth c outside [0.05, 5]")
        lo, hi = TRUTH_K_RANGE
        if np.any(self.k < lo) or np.any(self.k > hi):
            raise ValueError("ground-truth k outside [0.01, 1e6]")

    @property
    def frame_count(self) -> int:
        return len(self.hierarchy)

    @property
    def ctu_count(self) -> int:
        return self.c.shape[1]

    def truth(self, frame: int) -> list[RdParams]:
        return [RdParams(float(c), float(k)) for c, k in zip(self.c[frame], self.k[frame])]


@dataclass(frozen=True)
class NoiseModel:
    sigma_bits: float = 0.1
    sigma_params: float = 0.05

    def __post_init__(self):
        if self.sigma_bits < 0 or self.sigma_params < 0:
            raise ValueError("noise sigmas must be >= 0")


NOISELESS = NoiseModel(0.0, 0.0)


def hierarchy_levels(frames: int, gop_size: int, max_level: int = 3) -> list[int]:
    """Low-delay temporal levels: frame 0 is intra (level 0), GOP ends sit at level 1."""
    depth = max(0, int(math.log2(gop_size))) if gop_size > 0 else 0
    out = [0]
    for f in range(1, frames):
        pos = (f - 1) % gop_size + 1
        v2 = (pos & -pos).bit_length() - 1
        out.append(min(max_level, 1 + depth - min(v2, depth)))
    return out[:frames]


def _smooth_field(rng: np.random.Generator, shape, smoothness: float) -> np.ndarray:
    z = gaussian_filter(rng.standard_normal(shape), smoothness, mode="reflect")
    sd = z.std()
    return z / sd if sd > 0 else z


def generate_trace(name: str, width: int, height: int, frames: int = 32, gop_size: int = 4,
                   seed: int = 0, fps: float = 30.0, bpp: float = 0.06,
                   temporal_drift: float = 0.05, smoothness: float = 1.5,
                   c_center: float = DEFAULT_C, k_center: float = DEFAULT_K,
                   c_spread: float = 0.25, k_spread: float = 0.8) -> SequenceTrace:
    """Synthesise a trace with spatially smooth, slowly drifting log-(c, k) fields."""
    rng = np.random.default_rng(seed)
    geo = partition_ctu_types(width, height)
    rows = -(-height // 128)
    cols = -(-width // 128)
    zc = _smooth_field(rng, (rows, cols), smoothness)
    zk = _smooth_field(rng, (rows, cols), smoothness)
    keep = math.sqrt(max(0.0, 1.0 - temporal_drift ** 2))
    cs, ks = [], []
    for _ in range(frames):
        cs.append(np.clip(c_center * np.exp(c_spread * zc.ravel()), *TRUTH_C_RANGE))
        ks.append(np.clip(k_center * np.exp(k_spread * zk.ravel()), *TRUTH_K_RANGE))
        if temporal_drift > 0:
            zc = keep * zc + temporal_drift * _smooth_field(rng, (rows, cols), smoothness)
            zk = keep * zk + temporal_drift * _smooth_field(rng, (rows, cols), smoothness)
    assert len(geo) == rows * cols
    return SequenceTrace(name, width, height, fps, bpp * width * height * fps, gop_size,
                         hierarchy_levels(frames, gop_size), np.array(cs), np.array(ks),
                         noise_seed=seed)


def write_trace(trace: SequenceTrace, path) -> None:
    lines = [
        TRACE_MAGIC,
        f"# name={trace.name}",
        f"# width={trace.width}",
        f"# height={trace.height}",
        f"# fps={trace.fps!r}",
        f"# reference_bitrate={trace.reference_bitrate!r}",
        f"# gop_size={trace.gop_size}",
        f"# noise_seed={trace.noise_seed}",
        "# hierarchy=" + ",".join(str(h) for h in trace.hierarchy),
        "frame\tctu\tc\tk",
    ]
    for f in range(trace.frame_count):
        for j in range(trace.ctu_count):
            lines.append(f"{f}\t{j}\t{float(trace.c[f, j])!r}\t{float(trace.k[f, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path) -> SequenceTrace:
    meta: dict[str, str] = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != TRACE_MAGIC:
            raise ValueError(f"{path}: not a trace file (bad first line {first!r})")
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            elif line.startswith("frame"):
                continue
            else:
                f, j, c, k = line.split("\t")
                rows.append((int(f), int(j), float(c), float(k)))
    hierarchy = [int(h) for h in meta["hierarchy"].split(",")]
    width, height = int(meta["width"]), int(meta["height"])
    n = len(partition_ctu_types(width, height))
    c = np.full((len(hierarchy), n), np.nan)
    k = np.full_like(c, np.nan)
    for f, j, cv, kv in rows:
        c[f, j] = cv
        k[f, j] = kv
    if np.isnan(c).any():
        raise ValueError(f"{path}: missing CTU records")
    return SequenceTrace(meta.get("name", Path(path).stem), width, height, float(meta["fps"]),
                         float(meta["reference_bitrate"]), int(meta["gop_size"]), hierarchy, c, k,
                         int(meta.get("noise_seed", 0)))


def encode_ctu(truth: RdParams, decision: AllocationDecision, pixels: int, noise: NoiseModel,
               z: float | np.random.Generator = 0.0) -> CodingResult:
    """Code one CTU at the decided lambda against the true RD curve.

    ``z`` is a standard-normal draw (or a generator to draw it from); the
    rate is multiplied by ``exp(sigma_bits * z)``.
    """
    if not decision.lam > 0:
        raise ValueError("decision lambda must be > 0")
    if isinstance(z, np.random.Generator):
        z = float(z.standard_normal())
    r = rate_at_lambda(truth, decision.lam) * math.exp(noise.sigma_bits * z)
    return CodingResult(r, decision.lam, distortion_at_rate(truth, r), math.floor(r * pixels + 0.5))


def frame_target_bits(trace: SequenceTrace, total_bitrate: float, fps: float, frame_index: int,
                      weights=DEFAULT_LEVEL_WEIGHTS) -> float:
    """Per-frame budget from level weights, normalised so every GOP gets its share of the bitrate.

    Frame 0 forms its own group; after it, consecutive runs of ``gop_size``
    frames are normalised together (the last run may be shorter).
    """
    if not (total_bitrate > 0 and fps > 0):
        raise ValueError("bitrate and fps must be > 0")
    if frame_index == 0:
        group = [0]
    else:
        start = 1 + ((frame_index - 1) // trace.gop_size) * trace.gop_size
        group = list(range(start, min(start + trace.gop_size, trace.frame_count)))
    w = [weights[min(trace.hierarchy[f], len(weights) - 1)] for f in group]
    return len(group) * total_bitrate / fps * w[group.index(frame_index)] / sum(w)


@dataclass
class FrameLog:
    frame: int
    level: int
    intra: bool
    scheduled_bits: float
    budget_bits: float
    actual_bits: int
    mse: float
    psnr: float
    n_nash: int
    n_plain: int
    nbs_game: float
    nbs_baseline: float
    geo_bpp: float
    arith_bpp: float
    overshoot_bits: float
    final_remaining: float


@dataclass
class CtuLog:
    frame: int
    index: int
    type: str
    pixels: int
    source: str
    lam: float
    lambda_raw: float
    lambda_model: float
    target_bpp: float
    target_bits: int
    actual_bits: int
    r_actual: float
    d_actual: float
    eta_star: float
    u0: float
    iterations: int
    solver_fallback: bool


@dataclass
class SequenceReport:
    trace_name: str
    allocator: str
    target_bitrate: float
    fps: float
    seed: int
    varsigma: float
    target_total_bits: float
    frames: list[FrameLog] = field(default_factory=list)
    ctus: list[CtuLog] = field(default_factory=list)

    @property
    def total_bits(self) -> int:
        return sum(f.actual_bits for f in self.frames)


def _geo_arith(bpps: np.ndarray) -> tuple[float, float]:
    return float(np.exp(np.mean(np.log(bpps)))), float(np.mean(bpps))


def run_sequence(trace: SequenceTrace, cfg: AllocatorConfig = AllocatorConfig(),
                 target_bitrate: float | None = None, fps: float | None = None,
                 allocator: str = "nash", noise: NoiseModel = NoiseModel(), seed: int = 0,
                 init: str = "default", carry_window: int = 8) -> SequenceReport:
    """Closed-loop run of the controller over every CTU of every frame.

    ``init="truth"`` starts the controller at frame 0's ground truth,
    ``"default"`` at the stock (c, k).  ``carry_window`` spreads the running
    sequence-level surplus or deficit over the next that many frames
    (0 disables it).  Raises :class:`InvariantViolation` on broken accounting.
    """
    fps = trace.fps if fps is None else fps
    target_bitrate = trace.reference_bitrate if target_bitrate is None else target_bitrate
    if init == "truth":
        init_params = trace.truth(0)
    elif init == "default":
        init_params = RdParams(DEFAULT_C, DEFAULT_K)
    else:
        raise ValueError(f"unknown init {init!r}")
    ctl = RateController(trace.width, trace.height, cfg, init_params, allocator)
    geo = ctl.geometry
    pixels = np.array([g.pixels for g in geo], dtype=float)
    n = len(geo)
    schedule = [frame_target_bits(trace, target_bitrate, fps, f) for f in range(trace.frame_count)]
    rng = np.random.default_rng([trace.noise_seed, seed])
    log_drift = np.zeros((2, n))
    report = SequenceReport(trace.name, allocator, target_bitrate, fps, seed, cfg.varsigma, float(sum(schedule)))

    spent = 0.0
    for f in range(trace.frame_count):
        # drawn up front so every allocator sees the same noise
        z_bits = rng.standard_normal(n)
        z_par = rng.standard_normal((2, n))
        log_drift += noise.sigma_params * z_par
        truth_c = np.clip(trace.c[f] * np.exp(log_drift[0]), *TRUTH_C_RANGE)
        truth_k = np.clip(trace.k[f] * np.exp(log_drift[1]), *TRUTH_K_RANGE)

        budget = schedule[f]
        if carry_window > 0:
            budget += (sum(schedule[:f]) - spent) / min(carry_window, trace.frame_count - f)
        level = trace.hierarchy[f]
        intra = level == 0
        ctx = ctl.start_frame(budget, level, intra)
        initial = ctx.remaining_bits
        first_nash: AllocationDecision | None = None
        decisions = allocate_intra_frame(ctx) if intra else None
        while ctx.uncoded:
            head = ctx.uncoded[0]
            if intra:
                d = decisions[len(ctx.committed)]
            else:
                if abs(sum(type_budget(ctx).values()) - ctx.remaining_bits) > 1.0:
                    raise InvariantViolation(f"frame {f}: per-type budgets do not sum to remaining bits")
                d = ctl.decide(ctx)
                if d.source is Source.NASH and first_nash is None:
                    first_nash = d
            truth = RdParams(float(truth_c[head.index]), float(truth_k[head.index]))
            res = encode_ctu(truth, d, head.pixels, noise, float(z_bits[head.index]))
            commit_actual(ctx, head.index, res)
            report.ctus.append(CtuLog(f, head.index, head.geom.type_pi.value, head.pixels, d.source.value,
                                      d.lam, d.lambda_raw, d.lambda_model, d.target_bpp, d.target_bits,
                                      res.bits_actual, res.r_actual, res.d_actual, d.eta_star, d.u0,
                                      d.iterations, d.solver_fallback))
        ctl.end_frame(ctx)

        results = [done.result for done in ctx.committed]
        actual = sum(r.bits_actual for r in results)
        if abs(initial + ctx.overshoot_bits - actual - ctx.remaining_bits) > 1e-6 * max(1.0, initial):
            raise InvariantViolation(f"frame {f}: bit accounting broken")
        spent += actual
        mse = float(np.dot(pixels, [r.d_actual for r in results]) / pixels.sum())
        geo_bpp, arith_bpp = _geo_arith(np.array([r.r_actual for r in results]))
        sources = [c.source for c in report.ctus[-n:]]
        report.frames.append(FrameLog(
            f, level, intra, schedule[f], budget, actual, mse, 10.0 * math.log10(255.0 ** 2 / mse),
            sources.count(Source.NASH.value), sources.count(Source.PLAIN_LAMBDA_FALLBACK.value),
            first_nash.nbs_game if first_nash else math.nan,
            first_nash.nbs_baseline if first_nash else math.nan,
            geo_bpp, arith_bpp, ctx.overshoot_bits, ctx.remaining_bits))
    return report

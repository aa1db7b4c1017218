"""CTU-level bit allocation loop for one frame.

The allocator owns a :class:`FrameContext` per frame and walks the CTUs in
raster order.  For each CTU it

1. derives a minimal utility for every uncoded CTU from per-type budgets,
   a scale factor and the co-located distortion history,
2. bargains the remaining frame budget across all uncoded CTUs,
3. smooths the head CTU's share with a sliding window,
4. converts the smoothed bits to lambda and applies the clip chain,
5. after encoding, books the actual bits and refits the head's RD curve.

:class:`RateController` carries the cross-frame state (co-located RD
parameters, distortion history per hierarchy level, previous Q-step).
"""

from __future__ import annotations

import enum
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .nash import InfeasibleError, NewtonConfig, nbs_objective, solve_arrays
from .rd_model import DEFAULT_PARAMS, CodingResult, RdParams, lambda_at_rate, update_params

LCU_SIZE = 128
LAMBDA_FLOOR = 0.1
LAMBDA_ABS_MIN = 10.0 * 2.0 ** 4
LAMBDA_ABS_MAX = 1000.0 * 2.0 ** 4
NEIGHBOR_STEP = 2.0 ** (1.0 / 3.0)
FRAME_STEP = 2.0 ** (2.0 / 3.0)


class InvariantViolation(RuntimeError):
    pass


class CtuType(enum.Enum):
    FULL = "full"
    RIGHT_EDGE = "right"
    BOTTOM_EDGE = "bottom"
    CORNER = "corner"


class Source(enum.Enum):
    NASH = "nash"
    PLAIN_LAMBDA_FALLBACK = "plain"
    INTRA_PROPORTIONAL = "intra"
    BASELINE_PROPORTIONAL = "baseline"


@dataclass(frozen=True)
class CtuGeometry:
    index: int
    x: int
    y: int
    width: int
    height: int
    type_pi: CtuType

    @property
    def pixels(self) -> int:
        return self.width * self.height


def partition_ctu_types(frame_width: int, frame_height: int, lcu: int = LCU_SIZE) -> list[CtuGeometry]:
    """Split a frame into raster-ordered CTUs and tag each with its effective-size type."""
    if frame_width <= 0 or frame_height <= 0 or lcu <= 0:
        raise ValueError("frame dimensions and LCU size must be positive")
    out = []
    cols = -(-frame_width // lcu)
    rows = -(-frame_height // lcu)
    for row in range(rows):
        y = row * lcu
        h = min(lcu, frame_height - y)
        for col in range(cols):
            x = col * lcu
            w = min(lcu, frame_width - x)
            if w == lcu and h == lcu:
                t = CtuType.FULL
            elif h == lcu:
                t = CtuType.RIGHT_EDGE
            elif w == lcu:
                t = CtuType.BOTTOM_EDGE
            else:
                t = CtuType.CORNER
            out.append(CtuGeometry(len(out), x, y, w, h, t))
    return out


@dataclass
class CtuRecord:
    geom: CtuGeometry
    params: RdParams
    d_tilde: float = 0.0  # 0 means no co-located history

    @property
    def index(self) -> int:
        return self.geom.index

    @property
    def pixels(self) -> int:
        return self.geom.pixels


@dataclass(frozen=True)
class AllocatorConfig:
    varsigma: float = 0.7
    newton: NewtonConfig = NewtonConfig()
    lcu: int = LCU_SIZE
    max_window: int = 4
    min_bits_per_pixel: float = 1.0 / 64.0
    eta_once_per_frame: bool = False
    use_frame_lambda_est: bool = True
    qp_slope: float = 4.2005
    qp_offset: float = 13.7122

    def __post_init__(self):
        if not 0 < self.varsigma <= 1:
            raise ValueError(f"varsigma must lie in (0, 1], got {self.varsigma}")

    def min_bits(self, pixels: int) -> int:
        return max(1, math.ceil(pixels * self.min_bits_per_pixel))


@dataclass
class AllocationDecision:
    index: int
    lam: float
    target_bpp: float
    target_bits: int
    source: Source
    lambda_raw: float = math.nan
    lambda_model: float = math.nan
    eta_star: float = math.nan
    u0: float = math.nan
    iterations: int = 0
    solver_fallback: bool = False
    nbs_game: float = math.nan
    nbs_baseline: float = math.nan
    n_uncoded: int = 0

    @property
    def clipped(self) -> bool:
        return self.lam != self.lambda_raw


@dataclass
class CommittedCtu:
    index: int
    params: RdParams
    result: CodingResult
    params_updated: bool


@dataclass
class FrameContext:
    remaining_bits: float
    uncoded: list[CtuRecord]
    frame_lambda_est: float = 0.0
    hierarchy_level: int = 1
    q_hat: float = 0.0
    q: float = 0.0
    intra: bool = False
    lambda_nei: float = 0.0
    overshoot_bits: float = 0.0
    # (eta, pole offset, max c) of the first solve when eta is reused per frame
    eta_cache: tuple[float, float, float] | None = None
    committed: list[CommittedCtu] = field(default_factory=list)

    @property
    def window(self) -> int:
        return max(1, min(4, len(self.uncoded)))

    @property
    def delta(self) -> float:
        if self.q_hat > 0 and self.q > 0:
            return self.q_hat / self.q
        return 1.0

    @property
    def per_type_budget(self) -> dict[CtuType, float]:
        return type_budget(self)


def qstep_from_lambda(lam: float, slope: float = 4.2005, offset: float = 13.7122) -> float:
    qp = slope * math.log(lam) + offset
    return 2.0 ** ((qp - 4.0) / 6.0)


def type_budget(ctx: FrameContext) -> dict[CtuType, float]:
    """Share the remaining bits among CTU types in proportion to their uncoded pixels."""
    if not ctx.uncoded:
        raise ValueError("no uncoded CTUs")
    mass: dict[CtuType, int] = {}
    for rec in ctx.uncoded:
        mass[rec.geom.type_pi] = mass.get(rec.geom.type_pi, 0) + rec.pixels
    total = sum(mass.values())
    return {t: ctx.remaining_bits * m / total for t, m in mass.items()}


def _need(rec: CtuRecord) -> float:
    """Bits this CTU needs to reach its historical mean distortion."""
    return rec.pixels * (rec.params.k / rec.d_tilde) ** (1.0 / rec.params.c)


def scale_factor(ctx: FrameContext, ctu: CtuRecord, varsigma: float,
                 budgets: dict[CtuType, float] | None = None) -> float:
    """Discounted type budget over the bits all uncoded same-type CTUs need for their past quality."""
    same = [r for r in ctx.uncoded if r.geom.type_pi is ctu.geom.type_pi]
    if any(not r.d_tilde > 0 for r in same):
        raise ValueError("co-located distortion history missing for a same-type CTU")
    budgets = type_budget(ctx) if budgets is None else budgets
    return varsigma * budgets[ctu.geom.type_pi] / sum(_need(r) for r in same)


def min_utility(d_tilde: float, scale: float, delta: float) -> float:
    if not d_tilde > 0:
        raise ValueError("d_tilde must be > 0")
    if not delta > 0:
        raise ValueError("delta must be > 0")
    return min(scale, 1.0) / (delta * d_tilde)


def clip_lambda(lam: float, lambda_nei: float | None = None, lambda_est: float | None = None) -> float:
    """Neighbour band, then frame band (or the absolute band), then the 0.1 floor."""
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    if lambda_nei and lambda_nei > 0:
        lam = max(min(lam, lambda_nei * NEIGHBOR_STEP), lambda_nei / NEIGHBOR_STEP)
    if lambda_est and lambda_est > 0:
        lam = max(min(lam, lambda_est * FRAME_STEP), lambda_est / FRAME_STEP)
    else:
        lam = max(min(lam, LAMBDA_ABS_MAX), LAMBDA_ABS_MIN)
    if lam < LAMBDA_FLOOR:
        lam = LAMBDA_FLOOR
    return lam


def sliding_window_bits(head_bits: float, estimated_total: float, remaining_bits: float, window: int) -> int:
    """``floor(M r - (sum(M r) - R) / W + 0.5)``."""
    if window < 1:
        raise ValueError("window must be >= 1")
    return math.floor(head_bits - (estimated_total - remaining_bits) / window + 0.5)


def refine_bits(ctx: FrameContext, estimated_bpps, cfg: AllocatorConfig = AllocatorConfig(),
                budget: float | None = None) -> int:
    """Smoothed target bits for the head CTU, floored at the per-CTU minimum."""
    pixels = np.array([r.pixels for r in ctx.uncoded], dtype=float)
    bpps = np.asarray(estimated_bpps, dtype=float)
    budget = ctx.remaining_bits if budget is None else budget
    window = max(1, min(cfg.max_window, len(ctx.uncoded)))
    bits = sliding_window_bits(pixels[0] * bpps[0], float(np.dot(pixels, bpps)), budget, window)
    return max(bits, cfg.min_bits(ctx.uncoded[0].pixels))


def minimal_utilities(ctx: FrameContext, cfg: AllocatorConfig) -> np.ndarray:
    budgets = type_budget(ctx)
    scales = {t: scale_factor(ctx, next(r for r in ctx.uncoded if r.geom.type_pi is t), cfg.varsigma, budgets)
              for t in budgets}
    delta = ctx.delta
    return np.array([min_utility(r.d_tilde, scales[r.geom.type_pi], delta) for r in ctx.uncoded])


def _effective_budget(ctx: FrameContext, cfg: AllocatorConfig) -> tuple[float, bool]:
    floor = sum(cfg.min_bits(r.pixels) for r in ctx.uncoded)
    if ctx.remaining_bits <= floor:
        return float(floor), True
    return ctx.remaining_bits, False


def frame_lambda_estimate(uncoded, bits: float) -> float:
    """Lambda at the remaining bpp on the pixel-weighted mean (c, k) of the uncoded CTUs."""
    m = np.array([r.pixels for r in uncoded], dtype=float)
    w = m / m.sum()
    c = float(np.dot(w, [r.params.c for r in uncoded]))
    k = float(np.dot(w, [r.params.k for r in uncoded]))
    return lambda_at_rate(RdParams(c, k), bits / m.sum())


def _finish(ctx: FrameContext, cfg: AllocatorConfig, bpps: np.ndarray, budget: float,
            source: Source, **extra) -> AllocationDecision:
    head = ctx.uncoded[0]
    if cfg.use_frame_lambda_est:
        ctx.frame_lambda_est = frame_lambda_estimate(ctx.uncoded, budget)
    bits = refine_bits(ctx, bpps, cfg, budget)
    # a huge bargaining target can underflow lambda; the clip bands then decide
    raw = max(lambda_at_rate(head.params, bits / head.pixels), sys.float_info.min)
    lam = clip_lambda(raw, ctx.lambda_nei, ctx.frame_lambda_est)
    extra.setdefault("lambda_model", lambda_at_rate(head.params, float(bpps[0])))
    return AllocationDecision(head.index, lam, float(bpps[0]), bits, source, lambda_raw=raw,
                              n_uncoded=len(ctx.uncoded), **extra)


def plain_lambda_decision(ctx: FrameContext, cfg: AllocatorConfig = AllocatorConfig(),
                          source: Source = Source.PLAIN_LAMBDA_FALLBACK) -> AllocationDecision:
    """Equal bpp for every uncoded CTU; lambda from the RD curve at that bpp."""
    budget, _ = _effective_budget(ctx, cfg)
    total = sum(r.pixels for r in ctx.uncoded)
    bpps = np.full(len(ctx.uncoded), budget / total)
    return _finish(ctx, cfg, bpps, budget, source)


def allocate_next_ctu(ctx: FrameContext, cfg: AllocatorConfig = AllocatorConfig()) -> AllocationDecision:
    """Decide lambda and target bits for the head uncoded CTU of an inter frame."""
    if not ctx.uncoded:
        raise ValueError("no uncoded CTUs left")
    if ctx.intra:
        raise ValueError("intra frames are allocated with allocate_intra_frame")
    budget, starved = _effective_budget(ctx, cfg)
    if starved or any(not r.d_tilde > 0 for r in ctx.uncoded):
        return plain_lambda_decision(ctx, cfg)

    c = np.array([r.params.c for r in ctx.uncoded])
    k = np.array([r.params.k for r in ctx.uncoded])
    m = np.array([r.pixels for r in ctx.uncoded], dtype=float)
    u0 = minimal_utilities(ctx, cfg)
    eta, offset = None, math.nan
    if cfg.eta_once_per_frame and ctx.eta_cache is not None:
        eta, offset, cmax = ctx.eta_cache
        # -eta - max(c) for the CTUs still uncoded
        offset += cmax - float(c.max())
    try:
        sol = solve_arrays(c, k, u0, m, budget, cfg.newton, eta=eta, pole_offset=offset)
    except InfeasibleError:
        return plain_lambda_decision(ctx, cfg)
    if cfg.eta_once_per_frame and ctx.eta_cache is None:
        ctx.eta_cache = (sol.eta_star, sol.pole_offset, float(c.max()))

    equal = np.full(len(c), budget / m.sum())
    return _finish(ctx, cfg, sol.bpps, budget, Source.NASH,
                   lambda_model=float(sol.lambdas[0]), eta_star=sol.eta_star, u0=float(u0[0]),
                   iterations=sol.iterations, solver_fallback=sol.fallback_used,
                   nbs_game=nbs_objective(c, k, u0, sol.bpps),
                   nbs_baseline=nbs_objective(c, k, u0, equal))


def commit_actual(ctx: FrameContext, index: int, res: CodingResult) -> FrameContext:
    """Book the coded CTU: charge its bits, refit its RD curve, advance the neighbour lambda."""
    if not ctx.uncoded or ctx.uncoded[0].index != index:
        raise ValueError(f"CTU {index} is not the head of the uncoded list")
    head = ctx.uncoded.pop(0)
    ctx.remaining_bits -= res.bits_actual
    if ctx.remaining_bits < 0:
        ctx.overshoot_bits += -ctx.remaining_bits
        ctx.remaining_bits = 0.0
    params, ok = update_params(head.params, res)
    ctx.committed.append(CommittedCtu(index, params, res, ok))
    ctx.lambda_nei = res.lambda_actual
    return ctx


def allocate_intra_frame(ctx: FrameContext) -> list[AllocationDecision]:
    """Pixel-proportional bits and the matching RD-curve lambda for every CTU of an intra frame."""
    total = sum(r.pixels for r in ctx.uncoded)
    bpp = ctx.remaining_bits / total
    out = []
    for rec in ctx.uncoded:
        bits = math.floor(ctx.remaining_bits * rec.pixels / total + 0.5)
        lam = lambda_at_rate(rec.params, bpp) if bpp > 0 else LAMBDA_FLOOR
        out.append(AllocationDecision(rec.index, max(lam, LAMBDA_FLOOR), bpp, bits,
                                      Source.INTRA_PROPORTIONAL, lambda_raw=lam, lambda_model=lam,
                                      n_uncoded=len(ctx.uncoded)))
    return out


def check_decision(d: AllocationDecision) -> None:
    if not d.lam >= LAMBDA_FLOOR:
        raise InvariantViolation(f"CTU {d.index}: lambda {d.lam} below floor")
    if d.target_bits < 0:
        raise InvariantViolation(f"CTU {d.index}: negative target bits")


class RateController:
    """Cross-frame state for one sequence.

    ``init_params`` is either one :class:`RdParams` for every CTU or a list
    with one entry per CTU.  ``allocator`` selects the bargaining allocator
    (``"nash"``) or the equal-bpp baseline (``"proportional"``).
    """

    def __init__(self, frame_width: int, frame_height: int, cfg: AllocatorConfig = AllocatorConfig(),
                 init_params=DEFAULT_PARAMS, allocator: str = "nash"):
        if allocator not in ("nash", "proportional"):
            raise ValueError(f"unknown allocator {allocator!r}")
        self.cfg = cfg
        self.allocator = allocator
        self.geometry = partition_ctu_types(frame_width, frame_height, cfg.lcu)
        if isinstance(init_params, RdParams):
            init_params = [init_params] * len(self.geometry)
        if len(init_params) != len(self.geometry):
            raise ValueError("need one initial RdParams per CTU")
        self.params = list(init_params)
        self._dist: dict[tuple[int, int], list[float]] = {}
        self._qstep: dict[int, float] = {}

    def d_tilde(self, level: int, index: int) -> float:
        acc = self._dist.get((level, index))
        return acc[0] / acc[1] if acc else 0.0

    def frame_lambda(self, frame_bits: float) -> float:
        recs = [CtuRecord(g, self.params[g.index]) for g in self.geometry]
        floor = sum(self.cfg.min_bits(g.pixels) for g in self.geometry)
        return frame_lambda_estimate(recs, max(frame_bits, floor))

    def start_frame(self, frame_bits: float, level: int, intra: bool = False) -> FrameContext:
        recs = [CtuRecord(g, self.params[g.index], self.d_tilde(level, g.index)) for g in self.geometry]
        ctx = FrameContext(float(frame_bits), recs, hierarchy_level=level, intra=intra)
        if self.cfg.use_frame_lambda_est and not intra:
            ctx.frame_lambda_est = self.frame_lambda(frame_bits)
            ctx.q_hat = qstep_from_lambda(ctx.frame_lambda_est, self.cfg.qp_slope, self.cfg.qp_offset)
            ctx.q = self._qstep.get(level, 0.0)
        return ctx

    def decide(self, ctx: FrameContext) -> AllocationDecision:
        if self.allocator == "proportional":
            from .harness import baseline_proportional
            d = baseline_proportional(ctx, self.cfg)
        else:
            d = allocate_next_ctu(ctx, self.cfg)
        check_decision(d)
        return d

    def end_frame(self, ctx: FrameContext) -> None:
        """Fold a finished inter frame into the co-located history."""
        if ctx.uncoded:
            raise InvariantViolation("frame ended with uncoded CTUs")
        if ctx.intra:
            return
        for done in ctx.committed:
            if done.params_updated:
                self.params[done.index] = done.params
            if done.result.d_actual > 0:
                acc = self._dist.setdefault((ctx.hierarchy_level, done.index), [0.0, 0])
                acc[0] += done.result.d_actual
                acc[1] += 1
        if ctx.q_hat > 0:
            self._qstep[ctx.hierarchy_level] = ctx.q_hat


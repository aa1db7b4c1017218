"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` (the status lines are
printed regardless of capture), or ``python3 tests/test_acceptance.py``.
"""

import math
import statistics
import sys
import time

import numpy as np
import pytest

from _oracles import eta_bisection, grid_max, nbs_value, replay_frame
from _replay import library_replay, load_fixtures
from _suites import arrays, feasible, positive_branch, small_suite
from nashrc.encoder_sim import NOISELESS, NoiseModel, generate_trace, run_sequence
from nashrc.harness import geo_arith_means, geomean_arithmean_report, rc_error, sweep_varsigma, write_report
from nashrc.nash import BargainCtu, InfeasibleError, NewtonConfig, nash_allocate, solve_eta
from nashrc.rd_model import RdParams, rate_at_lambda

SIZES = [(1200, 800), (1280, 720), (1920, 1080), (1024, 1024), (1000, 1000)]
N_SEQ = 20
FRAMES = 32
NOISY = NoiseModel(sigma_bits=0.1, sigma_params=0.05)


def status(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def traces():
    out = []
    for i in range(N_SEQ):
        w, h = SIZES[i % len(SIZES)]
        out.append(generate_trace(f"seq{i:02d}_{w}x{h}", w, h, frames=FRAMES, seed=100 + i))
    return out


@pytest.fixture(scope="module")
def noiseless_runs(traces):
    return [run_sequence(tr, noise=NOISELESS) for tr in traces]


@pytest.fixture(scope="module")
def noisy_runs(traces):
    return [run_sequence(tr, noise=NOISY, seed=i) for i, tr in enumerate(traces)]


def random_suite(seed=2024, n_instances=300):
    """Feasible bargaining instances with 2 to 64 CTUs."""
    rng = np.random.default_rng(seed)
    return [feasible(rng, int(rng.integers(2, 65))) for _ in range(n_instances)]


def test_newton_matches_bisection(capsys):
    insts = positive_branch(np.random.default_rng(1000), 1000)
    cfg = NewtonConfig(tau=1e-10)
    t0 = time.perf_counter()
    results = [solve_eta([BargainCtu(RdParams(float(cj), 1.0), float(u), 1) for cj, u in zip(c, uk)], xi, cfg)
               for c, uk, xi in insts]
    elapsed = time.perf_counter() - t0
    worst = max(abs(r.eta - eta_bisection(c, xi)) / abs(eta_bisection(c, xi))
                for r, (c, _, xi) in zip(results, insts))
    med = statistics.median(r.iterations for r in results)
    ok = worst <= 1e-6 and med <= 8 and elapsed < 5.0
    status(capsys, "Newton vs bisection oracle", ok,
           f"max rel err {worst:.2e} (<= 1e-6), median iters {med} (<= 8), {elapsed:.2f} s (< 5)")


def test_nbs_optimal_against_grid(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for ctus, budget in small_suite():
        c, k, u0, m = arrays(ctus)
        sol = nash_allocate(ctus, budget)
        best, _ = grid_max(c, k, u0, len(c) * math.log(budget / m.sum()))
        worst = max(worst, abs(nbs_value(c, k, u0, np.log(sol.bpps)) - best))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 60.0
    status(capsys, "NBS optimality (200 x 2-CTU, 100 x 3-CTU)", ok,
           f"max |closed form - grid max| {worst:.2e} (<= 1e-6), {elapsed:.1f} s (< 60)")


def _lagrangian_residual(p, u0, eta, lam):
    """Relative residual of d/d(log lambda) [log(u - u0) + eta * log r] by central differences."""
    def term(x):
        r = rate_at_lambda(p, x)
        return math.log(r ** p.c / p.k - u0)

    def lagr(x):
        return term(x) + eta * math.log(rate_at_lambda(p, x))

    h = 1e-5
    hi, lo = lam * math.exp(h), lam * math.exp(-h)
    grad = (lagr(hi) - lagr(lo)) / (2 * h)
    scale = abs(term(hi) - term(lo)) / (2 * h)
    return abs(grad) / scale


def test_kkt_stationarity(capsys):
    worst, count = 0.0, 0
    for ctus, budget in random_suite():
        try:
            sol = nash_allocate(ctus, budget)
        except InfeasibleError:
            continue
        for t, lam in zip(ctus, sol.lambdas):
            worst = max(worst, _lagrangian_residual(t.params, t.u0, sol.eta_star, float(lam)))
            count += 1
    status(capsys, "KKT stationarity", worst <= 1e-6 and count > 0,
           f"max relative residual {worst:.2e} (<= 1e-6) over {count} lambdas")


def test_budget_activity(capsys):
    worst, count, skipped = 0.0, 0, 0
    for ctus, budget in random_suite() + small_suite():
        c, _, _, m = arrays(ctus)
        try:
            sol = nash_allocate(ctus, budget)
        except InfeasibleError:
            skipped += 1
            continue
        n = len(c)
        worst = max(worst, abs(float(np.sum(np.log(sol.bpps))) - n * math.log(budget / (m.mean() * n))))
        count += 1
    status(capsys, "Budget activity", worst <= 1e-6 and count > 0,
           f"max |sum log r - N log(R/(M N))| {worst:.2e} (<= 1e-6) on {count} solutions ({skipped} infeasible)")


def test_replay_against_reference(capsys):
    fixtures = load_fixtures()
    bits_ok, worst, branches = True, 0.0, set()
    for fx in fixtures:
        lib, ref = library_replay(fx), replay_frame(fx)
        bits_ok &= [d["target_bits"] for d in lib] == [d["target_bits"] for d in ref]
        bits_ok &= [d["target_bits"] for d in ref] == [d["target_bits"] for d in fx["expected"]]
        for a, b in zip(lib, ref):
            worst = max(worst, abs(a["lam"] - b["lam"]) / b["lam"])
            branches.update(b["branches"])
    needed = {"nei_hi", "nei_lo", "est_hi", "est_lo", "abs_hi", "abs_lo", "floor"}
    ok = bits_ok and worst <= 1e-12 and needed <= branches
    status(capsys, f"Per-CTU replay ({len(fixtures)} fixture frames)", ok,
           f"target_bits exact: {bits_ok}, max lambda rel diff {worst:.1e} (<= 1e-12), "
           f"clip branches hit {sorted(branches)}")


def test_closed_loop_accuracy(capsys, traces, noiseless_runs, noisy_runs):
    assert all(tr.frame_count >= 32 and tr.ctu_count >= 60 for tr in traces)
    clean = [rc_error(r.target_total_bits, r.total_bits) for r in noiseless_runs]
    noisy = [rc_error(r.target_total_bits, r.total_bits) for r in noisy_runs]
    ok = max(clean) < 0.1 and statistics.mean(noisy) <= 1.5
    status(capsys, "Closed-loop RC error (20 sequences)", ok,
           f"noiseless max {max(clean):.4f}% (< 0.1), noisy mean {statistics.mean(noisy):.4f}% (<= 1.5), "
           f"noisy max {max(noisy):.4f}%")


def test_nbs_dominates_baseline(capsys, noiseless_runs, noisy_runs):
    frames = [f for r in noiseless_runs + noisy_runs for f in r.frames if not math.isnan(f.nbs_game)]
    weak = sum(f.nbs_game < f.nbs_baseline for f in frames)
    strict = sum(f.nbs_game > f.nbs_baseline for f in frames)
    # the equal split often drops some CTU below its floor (objective -inf);
    # report the frames where both objectives are finite separately
    finite = [f.nbs_game - f.nbs_baseline for f in frames if math.isfinite(f.nbs_baseline)]
    # every synthetic frame is asymmetric, so the gain must be strict
    ok = frames and weak == 0 and strict == len(frames) and all(math.isfinite(f.nbs_game) for f in frames)
    status(capsys, "Bargaining objective vs proportional baseline", bool(ok),
           f"{len(frames)} frames with the game path, {weak} violations, {strict} strictly better; "
           f"baseline finite on {len(finite)}, min margin there "
           f"{min(finite) if finite else float('nan'):.3f}")


def test_varsigma_sweep(capsys, traces):
    aborted = []
    table = []
    for tr in traces:
        try:
            rows = sweep_varsigma(tr, noise=NOISY)
        except Exception as exc:  # any abort fails the criterion
            aborted.append(f"{tr.name}: {exc}")
            continue
        table.append(rows)
    grid = [0.1, 0.3, 0.5, 0.7, 0.9]
    ok = not aborted and all([r["varsigma"] for r in rows] == grid for rows in table)
    if table:
        with capsys.disabled():
            print("\n  varsigma  mean RC error %  mean PSNR  game-path share")
            for i, v in enumerate(grid):
                col = [rows[i] for rows in table]
                print(f"  {v:8.1f}  {statistics.mean(r['rc_error'] for r in col):15.4f}  "
                      f"{statistics.mean(r['mean_psnr'] for r in col):9.3f}  "
                      f"{statistics.mean(r['nash_fraction'] for r in col):15.3f}")
    status(capsys, "varsigma sweep 0.1..0.9", ok,
           f"{len(table)} sequences x {len(grid)} values completed, {len(aborted)} aborts")


def test_geo_not_above_arith(capsys, noiseless_runs, noisy_runs):
    gaps = [(a - g) / a for r in noiseless_runs + noisy_runs
            for _, g, a in geomean_arithmean_report(r)["frames"]]
    # symmetric frame: identical CTUs split the budget equally
    sym = [BargainCtu(RdParams(0.6, 5.0), 0.05, 128 * 128)] * 64
    g, a = geo_arith_means(nash_allocate(sym, 64 * 128 * 128 * 0.2).bpps)
    sym_gap = abs(a - g) / a
    ok = min(gaps) >= -1e-12 and sym_gap <= 1e-12
    status(capsys, "Geometric vs arithmetic mean bpp", ok,
           f"{len(gaps)} frames, min gap {min(gaps):.2e} (>= 0), max gap {max(gaps):.3f}, "
           f"symmetric frame gap {sym_gap:.1e}")


def test_determinism(capsys, traces, tmp_path):
    same = True
    for i in (0, 2):
        dirs = []
        for rep in ("a", "b"):
            run = run_sequence(traces[i], noise=NOISY, seed=77)
            dirs.append(write_report(run, tmp_path / f"{i}{rep}"))
        for name in ("frames.csv", "ctus.csv", "summary.json"):
            same &= (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    status(capsys, "Determinism", same, f"byte-identical logs across repeated seeded runs: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

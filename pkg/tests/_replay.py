"""Drive the package's allocator over a replay fixture."""

import json
from pathlib import Path

from nashrc.allocator import (
    AllocatorConfig,
    CtuGeometry,
    CtuRecord,
    CtuType,
    FrameContext,
    allocate_next_ctu,
    commit_actual,
)
from nashrc.encoder_sim import NoiseModel, encode_ctu
from nashrc.rd_model import RdParams

FIXTURES = Path(__file__).resolve().parent / "fixtures" / "replay"


def load_fixtures() -> list[dict]:
    return [json.loads(p.read_text(encoding="utf-8")) for p in sorted(FIXTURES.glob("*.json"))]


def library_replay(fx: dict) -> list[dict]:
    cfg = AllocatorConfig(varsigma=fx["config"]["varsigma"],
                          use_frame_lambda_est=fx["config"]["use_frame_lambda_est"],
                          max_window=fx["config"]["max_window"],
                          min_bits_per_pixel=fx["config"]["min_bits_per_pixel"])
    recs = [CtuRecord(CtuGeometry(t["index"], t["x"], t["y"], t["width"], t["height"], CtuType(t["type"])),
                      RdParams(t["c"], t["k"]), t["d_tilde"]) for t in fx["ctus"]]
    ctx = FrameContext(fx["remaining_bits"], recs, frame_lambda_est=fx["frame_lambda_est"],
                       q_hat=fx["q_hat"], q=fx["q"], lambda_nei=fx["lambda_nei"])
    truth = {t["index"]: (RdParams(t["truth_c"], t["truth_k"]), t["z"]) for t in fx["ctus"]}
    noise = NoiseModel(fx["sigma_bits"], 0.0)
    out = []
    while ctx.uncoded:
        head = ctx.uncoded[0]
        d = allocate_next_ctu(ctx, cfg)
        p, z = truth[head.index]
        res = encode_ctu(p, d, head.pixels, noise, z)
        commit_actual(ctx, head.index, res)
        out.append({"index": d.index, "target_bits": d.target_bits, "lam": d.lam, "source": d.source.value,
                    "actual_bits": res.bits_actual})
    return out

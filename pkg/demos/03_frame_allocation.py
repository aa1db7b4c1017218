# %% [markdown]
# # Allocating one inter frame CTU by CTU
#
# The controller walks the frame in raster order. For each CTU it re-solves
# the game over every CTU still uncoded, smooths the head CTU's share with
# a sliding window and clips the resulting lambda. It then charges what the
# encoder actually spent.

# %%
import numpy as np

from nashrc.allocator import AllocatorConfig, CtuRecord, FrameContext, allocate_next_ctu, commit_actual, partition_ctu_types
from nashrc.encoder_sim import NOISELESS, encode_ctu
from nashrc.rd_model import RdParams

rng = np.random.default_rng(3)
geo = partition_ctu_types(640, 360)
print(len(geo), "CTUs;", sorted({g.type_pi.value for g in geo}))

# %%
truth = [RdParams(float(rng.uniform(0.3, 0.9)), float(rng.uniform(2.0, 20.0))) for _ in geo]
# the model's belief is the truth plus some error; history comes from a
# previous frame at the same temporal level
model = [RdParams(t.c, t.k * float(rng.lognormal(0, 0.2))) for t in truth]
d_hist = [t.k * 0.05 ** -t.c for t in truth]
recs = [CtuRecord(g, p, d) for g, p, d in zip(geo, model, d_hist)]

budget = 0.05 * 640 * 360
ctx = FrameContext(budget, recs, frame_lambda_est=0.0)
cfg = AllocatorConfig()

# %%
while ctx.uncoded:
    d = allocate_next_ctu(ctx, cfg)
    head = ctx.uncoded[0]
    res = encode_ctu(truth[head.index], d, head.pixels, NOISELESS)
    commit_actual(ctx, head.index, res)
    if d.index % 5 == 0:
        print(f"CTU {d.index:2d} {d.source.value:6s} target={d.target_bits:5d} spent={res.bits_actual:5d} "
              f"lambda={d.lam:8.2f} left={ctx.remaining_bits:8.0f}")

# %%
spent = sum(c.result.bits_actual for c in ctx.committed)
print(f"budget {budget:.0f}  spent {spent}  error {100 * abs(spent - budget) / budget:.3f}%")

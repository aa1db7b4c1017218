# %% [markdown]
# # Sweeping the budget discount
#
# `varsigma` scales the per-type budget used to set each CTU's minimal
# utility: small values loosen the floors, values near 1 tighten them.
# Most fallbacks below come from the first frame at each temporal level,
# which has no co-located history yet. The rest move a little with
# `varsigma`. On these synthetic traces the sweep barely moves rate or
# quality, so it gives no reason to prefer one value.

# %%
from nashrc.encoder_sim import NoiseModel, generate_trace
from nashrc.harness import sweep_varsigma

traces = [generate_trace(f"sweep{i}", w, h, frames=32, seed=40 + i)
          for i, (w, h) in enumerate([(1280, 720), (1024, 1024)])]

# %%
for tr in traces:
    print(tr.name)
    for row in sweep_varsigma(tr, noise=NoiseModel(0.1, 0.05), seed=2):
        print(f"  varsigma={row['varsigma']:.1f}  RC={row['rc_error']:.3f}%  PSNR={row['mean_psnr']:.2f}  "
              f"game share={row['nash_fraction']:.2f}  fallbacks={row['fallbacks']}")

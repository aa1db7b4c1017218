# %% [markdown]
# # The hyperbolic RD model
#
# Every CTU is described by two numbers, `c` and `k`. Distortion falls as
# `d = k * r**-c` with the rate `r` in bits per pixel, and the slope of that
# curve is the Lagrange multiplier the encoder is driven with.

# %%
import numpy as np

from nashrc.rd_model import (
    DEFAULT_PARAMS,
    CodingResult,
    RdParams,
    distortion_at_rate,
    lambda_at_rate,
    rate_at_lambda,
    update_params,
)

p = RdParams(c=0.8, k=6.0)
for r in (0.01, 0.05, 0.2, 1.0):
    print(f"r={r:5.2f} bpp  d={distortion_at_rate(p, r):9.3f}  lambda={lambda_at_rate(p, r):10.3f}")

# %% [markdown]
# The map from lambda back to rate is the inverse of the slope, so a round
# trip returns the starting rate.

# %%
lam = lambda_at_rate(p, 0.05)
print(rate_at_lambda(p, lam))

# %% [markdown]
# After coding, one observed point `(r, lambda, d)` is enough to refit both
# parameters: `c = r * lambda / d`, then `k = d * r**c`.  Feeding in a point
# from a known curve recovers that curve exactly.

# %%
truth = RdParams(1.3, 0.4)
r = 0.03
seen = CodingResult(r, lambda_at_rate(truth, r), distortion_at_rate(truth, r), int(r * 128 * 128))
fitted, ok = update_params(DEFAULT_PARAMS, seen)
print(ok, fitted)

# %% [markdown]
# The stock starting point follows the usual `lambda = 3.2003 * bpp**-1.367`
# curve.

# %%
bpp = np.array([0.01, 0.1, 1.0])
print([float(lambda_at_rate(DEFAULT_PARAMS, b)) for b in bpp])
print(3.2003 * bpp ** -1.367)

"""Hyperbolic lambda-domain rate-distortion model.

A CTU's distortion (mean squared error per pixel) is modelled as

    d(r) = k * r**(-c)

with ``r`` in bits per pixel.  The Lagrange multiplier is the negative slope
``lambda = c * k * r**(-c - 1)``.  Every function here is a pure conversion
between rate, distortion and lambda for one set of parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

C_MIN, C_MAX = 0.03, 20.0
K_MIN, K_MAX = 1e-6, 1e8

# lambda = 3.2003 * bpp**-1.367 rewritten as c*k*r**(-c-1)
DEFAULT_C = 0.367
DEFAULT_K = 3.2003 / 0.367


class DomainError(ValueError):
    """Raised when a rate, lambda or distortion argument is not positive."""


@dataclass(frozen=True)
class RdParams:
    c: float
    k: float

    def __post_init__(self):
        if not (self.c > 0 and self.k > 0) or not (math.isfinite(self.c) and math.isfinite(self.k)):
            raise DomainError(f"RD parameters must be positive and finite, got c={self.c}, k={self.k}")

    def clamped(self) -> "RdParams":
        return RdParams(min(max(self.c, C_MIN), C_MAX), min(max(self.k, K_MIN), K_MAX))


DEFAULT_PARAMS = RdParams(DEFAULT_C, DEFAULT_K)


@dataclass(frozen=True)
class CodingResult:
    """What the encoder reports after coding one CTU."""

    r_actual: float
    lambda_actual: float
    d_actual: float
    bits_actual: int

    @property
    def usable(self) -> bool:
        return self.r_actual > 0 and self.lambda_actual > 0 and self.d_actual > 0 and self.bits_actual > 0


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise DomainError(f"{name} must be > 0, got {value!r}")


def distortion_at_rate(p: RdParams, r: float) -> float:
    _positive("rate", r)
    return p.k * r ** (-p.c)


def lambda_at_rate(p: RdParams, r: float) -> float:
    _positive("rate", r)
    return p.c * p.k * r ** (-p.c - 1.0)


def rate_at_lambda(p: RdParams, lam: float) -> float:
    _positive("lambda", lam)
    return (lam / (p.c * p.k)) ** (-1.0 / (p.c + 1.0))


def distortion_at_lambda(p: RdParams, lam: float) -> float:
    _positive("lambda", lam)
    return (lam * p.k ** (1.0 / p.c) / p.c) ** (p.c / (p.c + 1.0))


def update_params(old: RdParams, res: CodingResult) -> tuple[RdParams, bool]:
    """Refit (c, k) so the curve passes through the coded point with the coded slope.

    Returns ``(params, updated)``.  A result with any non-positive field
    (including a skipped CTU with zero bits) leaves ``old`` untouched and
    ``updated`` is False.
    """
    if not res.usable:
        return old, False
    c = res.r_actual * res.lambda_actual / res.d_actual
    # d = k * r**-c, so k = d * r**c
    k = res.d_actual * res.r_actual ** c
    if not (math.isfinite(c) and math.isfinite(k) and c > 0 and k > 0):
        return old, False
    return RdParams(c, k).clamped(), True

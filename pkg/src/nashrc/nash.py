"""Nash bargaining bit allocation over the hyperbolic RD model.

Every uncoded CTU is a player with utility ``u = 1/d`` and disagreement
point ``u0``.  Maximising ``sum(log(u_j - u0_j))`` subject to the
geometric-mean budget ``sum(log r_j) = N * log(R / sum(M))`` reduces to a
scalar equation ``f(eta) = xi`` with

    xi     = sum((1/c_j) * log(u0_j * k_j)) - N * log(R / (mean(M) * N))
    f(eta) = sum((1/c_j) * log(c_j / eta + 1))

after which every CTU gets a closed-form lambda and bpp.

``f`` has two real branches.  On ``eta > 0`` it falls from +inf to 0, on
``eta < -max(c)`` it falls from 0 to -inf, so ``f(eta) = xi`` always has
exactly one root on the branch matching the sign of ``xi``.  The sign of
``xi`` is the sign of ``sum(log r0_j) - sum(log r_bar)``: the geometric mean
of the floor rates ``r0_j = (u0_j k_j)**(1/c_j)`` against the budget.

* ``xi < 0``: the budget clears every floor.  The root lies at
  ``eta < -max(c)``, every CTU ends strictly above its floor, and the closed
  forms give the bargaining optimum.
* ``xi > 0``: the budget cannot clear the floors.  The positive root still
  satisfies the budget, but every CTU lands below ``u0``, and
  :func:`nash_allocate` reports the instance as infeasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rd_model import DomainError, RdParams, rate_at_lambda


class InfeasibleError(ArithmeticError):
    """The bargaining problem has no admissible solution for this budget."""


@dataclass(frozen=True)
class BargainCtu:
    params: RdParams
    u0: float
    pixels: int

    def __post_init__(self):
        if not self.u0 > 0 or not math.isfinite(self.u0):
            raise DomainError(f"minimal utility must be positive and finite, got {self.u0!r}")
        if self.pixels <= 0:
            raise DomainError(f"pixel count must be positive, got {self.pixels!r}")


@dataclass(frozen=True)
class NewtonConfig:
    """Newton iteration settings.

    ``eta0=None`` picks ``c_hat / expm1(xi / sum(1/c))`` with ``c_hat`` the
    1/c-weighted geometric mean of ``c``; it is the exact root when all
    ``c`` are equal.
    """

    eta0: float | None = None
    tau: float = 1e-10
    max_iters: int = 100

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.eta0 is not None and (self.eta0 == 0 or not math.isfinite(self.eta0)):
            raise ValueError("eta0 must be finite and non-zero")


@dataclass(frozen=True)
class EtaResult:
    eta: float
    iterations: int
    fallback_used: bool
    residual: float
    # negative branch only: -eta - max(c), kept because eta itself cannot
    # resolve roots sitting close to the pole
    pole_offset: float = math.nan


@dataclass
class NashSolution:
    eta_star: float
    lambdas: np.ndarray
    bpps: np.ndarray
    iterations: int
    fallback_used: bool
    xi: float = 0.0
    residual: float = 0.0
    u0: np.ndarray = field(default_factory=lambda: np.empty(0))
    pole_offset: float = math.nan


def _arrays(ctus) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if len(ctus) == 0:
        raise DomainError("need at least one CTU")
    c = np.array([t.params.c for t in ctus], dtype=float)
    k = np.array([t.params.k for t in ctus], dtype=float)
    u0 = np.array([t.u0 for t in ctus], dtype=float)
    m = np.array([t.pixels for t in ctus], dtype=float)
    return c, k, u0, m


def budget_log_term(budget_bits: float, mean_pixels: float, n: int) -> float:
    """``N * log(R / (mean(M) * N))``: the log of the geometric-mean bpp budget, times N."""
    if not budget_bits > 0:
        raise InfeasibleError(f"budget must be positive, got {budget_bits!r}")
    if not mean_pixels > 0:
        raise DomainError("mean_pixels must be > 0")
    return n * math.log(budget_bits / (mean_pixels * n))


def _xi(c, k, u0, budget_bits, mean_pixels) -> float:
    uk = u0 * k
    if np.any(uk <= 0):
        raise DomainError("u0 * k must be positive for every CTU")
    return float(np.sum(np.log(uk) / c)) - budget_log_term(budget_bits, mean_pixels, len(c))


def compute_xi(ctus, budget_bits: float, mean_pixels: float) -> float:
    c, k, u0, _ = _arrays(ctus)
    return _xi(c, k, u0, budget_bits, mean_pixels)


def _f(c, eta: float) -> float:
    return float(np.sum(np.log1p(c / eta) / c))


def f_eta(ctus, eta: float) -> float:
    """Evaluate f on either branch; ``eta`` in ``[-max(c), 0]`` is outside its domain."""
    c, _, _, _ = _arrays(ctus)
    _check_eta(c, eta)
    return _f(c, eta)


def f_eta_prime(c: np.ndarray, eta: float) -> float:
    """Exact derivative ``-sum(1 / (eta * (eta + c_j)))``."""
    return -float(np.sum(1.0 / (eta * (eta + c))))


class _Branch:
    """Newton iteration for ``Z(eta) = f(eta) - xi`` on one branch of ``f``.

    The iterate is stored as ``x``: ``x = eta`` on the positive branch and
    ``x = -eta - max(c)`` on the negative one, so roots sitting next to the
    pole at ``-max(c)`` keep full relative precision.  In both cases
    ``x > 0`` and ``Z`` decreases as ``eta`` increases.
    """

    def __init__(self, c: np.ndarray, xi: float):
        self.c = c
        self.inv = 1.0 / c
        self.xi = xi
        self.positive = xi > 0
        self.cmax = float(c.max())
        self.d = c - self.cmax

    def eta(self, x: float) -> float:
        return x if self.positive else -self.cmax - x

    def offset(self, x: float) -> float:
        return math.nan if self.positive else x

    def x_of(self, eta: float) -> float:
        return eta if self.positive else -eta - self.cmax

    def z(self, x: float) -> float:
        if self.positive:
            return float(np.dot(self.inv, np.log1p(self.c / x))) - self.xi
        # log(c/eta + 1) = log((eta + c)/eta) = log((x - d)/(x + cmax))
        with np.errstate(divide="ignore"):
            return float(np.dot(self.inv, np.log((x - self.d) / (x + self.cmax)))) - self.xi

    def newton(self, x: float, z: float) -> float:
        # eta_next = eta - Z/f'(eta); on the negative branch x moves opposite to eta
        if self.positive:
            return x - z / f_eta_prime(self.c, x)
        slope = -float(np.sum(1.0 / ((self.cmax + x) * (x - self.d))))
        return x + z / slope

    def bracket(self) -> tuple[float, float]:
        """Return ``(x_pos, x_neg)`` with ``Z >= 0`` at the first and ``Z <= 0`` at the second."""
        c, xi, n = self.c, self.xi, len(self.c)
        cmin, cmax = float(c.min()), self.cmax
        if self.positive:
            # each term is at least (1/cmax)*log(cmax/eta+1) and at most the cmin version
            if xi * cmax / n > 700.0:
                raise InfeasibleError("root is not representable in floating point")
            return cmax / math.expm1(xi * cmax / n), cmin / math.expm1(xi * cmin / n)
        a = xi * cmax / n
        x_pos = cmax * math.exp(a) / -math.expm1(a)
        if not x_pos > 0:
            raise InfeasibleError("root is not representable in floating point")
        x_neg = x_pos
        while self.z(x_neg) > 0:
            x_neg *= 1e-3
            if x_neg < 1e-300:
                raise InfeasibleError("root is not representable in floating point")
        return x_pos, x_neg


def _polish(br: _Branch, x: float, z: float) -> tuple[float, float]:
    # one extra Newton step after the stop rule: near the root it squares
    # the error, so eta comes back at machine precision
    if z == 0:
        return x, z
    with np.errstate(divide="ignore", invalid="ignore"):
        x_new = br.newton(x, z)
    if not (math.isfinite(x_new) and x_new > 0):
        return x, z
    z_new = br.z(x_new)
    return (x_new, z_new) if abs(z_new) <= abs(z) else (x, z)


def _default_eta0(c: np.ndarray, xi: float) -> float:
    # exact root of S*log(c_hat/eta + 1) = xi, S = sum(1/c), with c_hat the
    # 1/c-weighted geometric mean of c; exact when all c agree and
    # asymptotically exact as eta -> 0
    s = float(np.sum(1.0 / c))
    c_hat = math.exp(float(np.sum(np.log(c) / c)) / s)
    try:
        return c_hat / math.expm1(xi / s)
    except (OverflowError, ZeroDivisionError):
        return math.nan


def _iterate(c: np.ndarray, xi: float, cfg: NewtonConfig) -> EtaResult:
    if xi == 0 or not math.isfinite(xi):
        raise InfeasibleError(f"no finite root for xi={xi!r}")
    br = _Branch(c, xi)
    x_pos, x_neg = br.bracket()

    def inside(x):
        return min(x_pos, x_neg) < x < max(x_pos, x_neg)

    eta0 = cfg.eta0 if cfg.eta0 is not None else _default_eta0(c, xi)
    x = br.x_of(eta0) if math.isfinite(eta0) else math.nan
    if not inside(x):
        x = math.sqrt(x_pos) * math.sqrt(x_neg)

    z = br.z(x)
    if z == 0:
        return EtaResult(br.eta(x), 0, False, 0.0, br.offset(x))
    fallback = False
    for it in range(1, cfg.max_iters + 1):
        if z > 0:
            x_pos = x
        else:
            x_neg = x
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = br.newton(x, z)
        if not (math.isfinite(x_new) and inside(x_new)):
            fallback = True
            x_new = math.sqrt(x_pos) * math.sqrt(x_neg)
        z_new = br.z(x_new)
        x = x_new
        if abs(z - z_new) < cfg.tau or abs(z_new) < cfg.tau:
            x, z_new = _polish(br, x, z_new)
            return EtaResult(br.eta(x), it, fallback, z_new, br.offset(x))
        z = z_new

    # cap reached: plain log-bisection on the bracket
    for extra in range(1, 400):
        if z > 0:
            x_pos = x
        else:
            x_neg = x
        x = math.sqrt(x_pos) * math.sqrt(x_neg)
        z = br.z(x)
        if abs(z) < cfg.tau or abs(x_pos - x_neg) <= 4 * np.finfo(float).eps * x:
            break
    return EtaResult(br.eta(x), cfg.max_iters + extra, True, z, br.offset(x))


def solve_eta(ctus, xi: float, cfg: NewtonConfig = NewtonConfig()) -> EtaResult:
    """Find the root of ``f(eta) = xi`` by safeguarded Newton iteration.

    Stops when ``|Z_x - Z_{x+1}| < tau`` or ``|Z_{x+1}| < tau``.  A Newton
    step that leaves the current bracket is replaced by a log-scale bisection
    step and ``fallback_used`` is set.  Raises :class:`InfeasibleError` for
    ``xi == 0`` (root at infinity) or a root too close to a pole to represent.
    """
    c, _, _, _ = _arrays(ctus)
    return _iterate(c, xi, cfg)


def _check_eta(c, eta):
    if eta == 0 or not math.isfinite(eta):
        raise DomainError(f"eta must be finite and non-zero, got {eta!r}")
    ratio = (c + eta) / eta
    if np.any(ratio <= 0):
        raise DomainError(f"eta={eta!r} lies between the branches of f")
    return ratio


def optimal_lambda(p: RdParams, u0: float, eta_star: float) -> float:
    """``c * k**(-1/c) * ((c + eta)/(eta * u0))**((c+1)/c)``."""
    if not u0 > 0:
        raise DomainError("u0 must be > 0")
    ratio = _check_eta(p.c, eta_star)
    return p.c * p.k ** (-1.0 / p.c) * (ratio / u0) ** ((p.c + 1.0) / p.c)


def target_bpp(p: RdParams, u0: float, eta_star: float) -> float:
    """``(k * u0 * eta / (c + eta))**(1/c)``."""
    if not u0 > 0:
        raise DomainError("u0 must be > 0")
    ratio = _check_eta(p.c, eta_star)
    return (p.k * u0 / ratio) ** (1.0 / p.c)


def closed_form(c, k, u0, eta: float, pole_offset: float = math.nan) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``(lambdas, bpps)`` for arrays of CTU parameters.

    ``pole_offset`` (``-eta - max(c)``, from :class:`EtaResult`) replaces
    ``eta`` in the ratio ``(c + eta)/eta`` when given, which keeps full
    precision for roots next to the pole.
    """
    if eta < 0 and math.isfinite(pole_offset):
        cmax = float(np.max(c))
        ratio = (pole_offset + (cmax - c)) / (pole_offset + cmax)
    else:
        ratio = (c + eta) / eta
    if np.any(ratio <= 0):
        raise DomainError(f"eta={eta!r} lies between the branches of f")
    bpps = (k * u0 / ratio) ** (1.0 / c)
    lambdas = c * k ** (-1.0 / c) * (ratio / u0) ** ((c + 1.0) / c)
    return lambdas, bpps


def utilities(c, k, bpps) -> np.ndarray:
    """``u = 1/d = r**c / k``."""
    return np.asarray(bpps, dtype=float) ** c / k


def nbs_objective(c, k, u0, bpps) -> float:
    """``sum(log(u_j - u0_j))``; ``-inf`` if any CTU sits at or below its floor."""
    surplus = utilities(c, k, bpps) - u0
    if np.any(surplus <= 0):
        return -math.inf
    return float(np.sum(np.log(surplus)))


def solve_arrays(c, k, u0, m, budget_bits: float, cfg: NewtonConfig = NewtonConfig(),
                 eta: float | None = None, pole_offset: float = math.nan) -> NashSolution:
    """:func:`nash_allocate` on plain arrays.

    Passing ``eta`` reuses a known root; ``pole_offset`` is its distance
    ``-eta - max(c)`` when the root sits on the negative branch.
    """
    if eta is None:
        xi = _xi(c, k, u0, budget_bits, float(m.mean()))
        res = _iterate(c, xi, cfg)
    else:
        xi = math.nan
        res = EtaResult(eta, 0, False, math.nan, pole_offset)
    with np.errstate(over="ignore"):
        lambdas, bpps = closed_form(c, k, u0, res.eta, res.pole_offset)
    if not (np.all(np.isfinite(bpps)) and np.all(bpps > 0) and np.all(np.isfinite(lambdas))
            and np.all(lambdas > 0)):
        raise InfeasibleError("closed-form rates are not finite")
    # the budget only fixes the geometric mean, so the bit total can still overflow
    with np.errstate(over="ignore"):
        if not math.isfinite(float(np.dot(m, bpps))):
            raise InfeasibleError("closed-form bit total is not finite")
    if np.any(utilities(c, k, bpps) <= u0):
        raise InfeasibleError("budget cannot lift every CTU above its minimal utility")
    return NashSolution(res.eta, lambdas, bpps, res.iterations, res.fallback_used, xi, res.residual, u0,
                        res.pole_offset)


def nash_allocate(ctus, budget_bits: float, cfg: NewtonConfig = NewtonConfig()) -> NashSolution:
    """Bargaining-optimal lambda and bpp for every CTU under a shared bit budget.

    Raises :class:`InfeasibleError` when the budget is non-positive or when
    it cannot lift every CTU above its minimal utility.
    """
    c, k, u0, m = _arrays(ctus)
    sol = solve_arrays(c, k, u0, m, budget_bits, cfg)
    # bpps must round-trip through the RD model
    for j, t in enumerate(ctus):
        r = rate_at_lambda(t.params, float(sol.lambdas[j]))
        if not math.isclose(r, sol.bpps[j], rel_tol=1e-9):
            raise ArithmeticError(f"closed forms disagree for CTU {j}: {r} vs {sol.bpps[j]}")
    return sol

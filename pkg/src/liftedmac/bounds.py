"""Executable check of the unbounded-load convergence argument for windowed coupling.

The argument needs a window W so large (ln W ~ 100) that every quantity is
handled as a natural log. The chain of inequalities is:

* eps = pi exp(-(2W+1)^{1/(4 alpha)} / (4 alpha pi)), the per-bit residual
  level that one pass of the wave guarantees;
* eps < 1/(2W), so the harmonic sum of reciprocal variances in a window is at
  least ln(2W+1) / (2 alpha);
* g(s) <= pi Q(sqrt s) <= pi exp(-s/2) turns that into a polynomial bound;
* eps < pi (2W+1)^{-1 - 1/(4 alpha)}, which closes the induction at y <= eps;
* below the critical level eps_crit (smallest root of exp(-1/(2 alpha eps)) = eps/2)
  every further iteration at least halves the variance.

Each step is evaluated with both sides recorded, so a report shows exactly
which inequality breaks when W is too small.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import gkernel
from .config import CouplingSpec
from .coupled import coupled_step_window, init_profile
from .errors import DomainError, NumericFailureError, PreconditionError, RangeError

LN_PI = math.log(math.pi)
LN_2 = math.log(2.0)
EXP_LIMIT = 700.0


@dataclass(frozen=True)
class LogQuantity:
    """A positive real stored as its natural log."""

    log_value: float

    @classmethod
    def of(cls, value: float) -> "LogQuantity":
        if not value > 0:
            raise DomainError(f"LogQuantity holds positive reals only, got {value}")
        return cls(math.log(value))

    @property
    def value(self) -> float:
        if self.log_value > 709.78:
            raise RangeError(f"exp({self.log_value}) overflows a double")
        return math.exp(self.log_value)

    def __mul__(self, other: "LogQuantity") -> "LogQuantity":
        return LogQuantity(self.log_value + _lq(other).log_value)

    def __truediv__(self, other: "LogQuantity") -> "LogQuantity":
        return LogQuantity(self.log_value - _lq(other).log_value)

    def __add__(self, other: "LogQuantity") -> "LogQuantity":
        return LogQuantity(float(np.logaddexp(self.log_value, _lq(other).log_value)))

    def __pow__(self, p: float) -> "LogQuantity":
        return LogQuantity(self.log_value * p)

    def __lt__(self, other: "LogQuantity") -> bool:
        return self.log_value < _lq(other).log_value


def _lq(v) -> LogQuantity:
    return v if isinstance(v, LogQuantity) else LogQuantity.of(float(v))


def log_two_w_plus_one(log_w: float) -> float:
    """ln(2W + 1) from ln W without forming W."""
    return float(np.logaddexp(LN_2 + log_w, 0.0))


def min_window(alpha: float) -> LogQuantity:
    """Window size beyond which convergence is guaranteed: ln W* = 15 alpha ln alpha + 20 alpha."""
    if not alpha > 2:
        raise DomainError(f"the window bound applies only for alpha > 2, got {alpha}")
    return LogQuantity(15.0 * alpha * math.log(alpha) + 20.0 * alpha)


def epsilon(W: LogQuantity | float, alpha: float) -> LogQuantity:
    """Residual level eps(W, alpha), returned in log form."""
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    log_w = _lq(W).log_value
    inner = log_two_w_plus_one(log_w) / (4.0 * alpha)
    if inner > EXP_LIMIT:
        raise RangeError(f"(2W+1)^(1/(4 alpha)) = exp({inner:.3g}) is outside double range")
    return LogQuantity(LN_PI - math.exp(inner) / (4.0 * alpha * math.pi))


def epsilon_direct(W: float, alpha: float) -> float:
    """Plain floating-point eps, usable only for moderate W."""
    return math.pi * math.exp(-((2.0 * W + 1.0) ** (1.0 / (4.0 * alpha))) / (4.0 * alpha * math.pi))


def _crit_fn(eps: float, alpha: float) -> float:
    # log form of exp(-1/(2 alpha eps)) - eps/2; same sign, no underflow.
    return -1.0 / (2.0 * alpha * eps) - math.log(eps / 2.0)


def epsilon_crit(alpha: float, tol: float = 1e-12) -> float:
    """Smallest positive root of exp(-1/(2 alpha eps)) = eps / 2 on (0, 1].

    No root exists in (0, 1] when alpha <= 1/(2 ln 2); that raises
    :class:`NumericFailureError`.
    """
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    grid = np.geomspace(1e-6, 1.0, 4001)
    vals = np.array([_crit_fn(e, alpha) for e in grid])
    if vals[0] >= 0:
        raise NumericFailureError("root bracketing failed at the small end")
    idx = np.nonzero(vals[:-1] * vals[1:] <= 0)[0]
    if not len(idx):
        raise NumericFailureError(f"no root of the critical-level equation in (0, 1] for alpha={alpha}")
    i = int(idx[0])
    lo, hi = float(grid[i]), float(grid[i + 1])
    root = optimize.brentq(_crit_fn, lo, hi, args=(alpha,), xtol=tol * 1e-3, rtol=4 * np.finfo(float).eps)
    return float(root)


@dataclass
class BoundCheck:
    name: str
    log_lhs: float
    log_rhs: float
    strict: bool = True
    method: str = "direct"

    @property
    def holds(self) -> bool:
        return self.log_lhs < self.log_rhs if self.strict else self.log_lhs <= self.log_rhs

    def to_dict(self) -> dict:
        return {
            "name": self.name, "log_lhs": self.log_lhs, "log_rhs": self.log_rhs,
            "relation": "<" if self.strict else "<=", "holds": self.holds, "method": self.method,
        }


@dataclass
class BoundCheckReport:
    alpha: float
    log_w: float
    log_eps: float
    checks: list[BoundCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.holds for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.holds]

    def get(self, name: str) -> BoundCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "log_w": self.log_w, "log_eps": self.log_eps,
            "passed": self.passed, "checks": [c.to_dict() for c in self.checks],
        }


def log_g_bounded(log_s: float) -> tuple[float, str]:
    """ln g(s) from ln s: direct where representable, else the tighter of the analytic bounds."""
    if log_s <= math.log(gkernel.S_MAX):
        val = gkernel.g(math.exp(log_s))
        if val > 0:
            return math.log(val), "direct"
    if log_s < EXP_LIMIT:
        s = math.exp(log_s)
        return min(gkernel.log_pi_q_bound(s), gkernel.log_g_upper(s)), "analytic bound"
    return gkernel.log_g_upper(log_s, log_input=True), "analytic bound"


def _log_harmonic(n_log: float) -> float:
    """ln H_n for n = exp(n_log) >= 1."""
    if n_log < math.log(1e6):
        n = round(math.exp(n_log))
        return math.log(float(special.digamma(n + 1)) + np.euler_gamma)
    # H_n = ln n + gamma + 1/(2n) - ..., the tail is below double resolution here.
    return math.log(n_log + np.euler_gamma)


def check_lemma1(alpha: float, W: LogQuantity | float) -> BoundCheckReport:
    """Evaluate the first-pass inequality chain at (alpha, W)."""
    if not alpha > 2:
        raise DomainError("the first-pass bound is stated for alpha > 2")
    log_w = _lq(W).log_value
    l2w1 = log_two_w_plus_one(log_w)
    log_eps = epsilon(LogQuantity(log_w), alpha).log_value
    rep = BoundCheckReport(alpha, log_w, log_eps)
    add = rep.checks.append

    add(BoundCheck("eps_below_inverse_2w", log_eps, -LN_2 - log_w))

    # Reciprocal-variance sum: harmonic term over (2W eps + 1), against ln(2W+1)/(2 alpha).
    log_den = float(np.logaddexp(LN_2 + log_w + log_eps, 0.0))
    log_arg = _log_harmonic(l2w1) - log_den - math.log(alpha)
    log_target = math.log(l2w1) - math.log(2.0 * alpha)
    add(BoundCheck("harmonic_argument", -log_arg, -log_target, strict=False))

    # Harmonic step at its two extreme terms, k = 1 and k = 2W + 1.
    log_2w_minus_1 = LN_2 + log_w + math.log1p(-0.5 * math.exp(-log_w)) if log_w > -LN_2 else -math.inf
    rhs_k1 = float(np.logaddexp(log_2w_minus_1 + log_eps, 0.0))
    add(BoundCheck("harmonic_step_first", -log_den, -rhs_k1, strict=False))
    rhs_kmax = l2w1 + math.log1p(-math.exp(log_eps - l2w1)) if log_eps < l2w1 else -math.inf
    add(BoundCheck("harmonic_step_last", -(l2w1 + log_den), -rhs_kmax, strict=False))

    s = math.exp(log_target)
    log_g, how = log_g_bounded(math.log(s))
    log_piq = gkernel.log_pi_q_bound(s)
    add(BoundCheck("g_below_pi_q", log_g, log_piq, strict=False, method=how))
    add(BoundCheck("pi_q_below_exp", log_piq, LN_PI - s / 2.0, strict=False))

    add(BoundCheck("eps_below_power", log_eps, LN_PI - (1.0 + 1.0 / (4.0 * alpha)) * l2w1))

    log_s2 = l2w1 / (4.0 * alpha) - math.log(2.0 * alpha * math.pi)
    log_g2, how2 = log_g_bounded(log_s2)
    add(BoundCheck("closure_g_below_eps", log_g2, log_eps, strict=False, method=how2))

    # Second stage: eps sits below the halving level.
    # exp(-1/(2 alpha eps)) < eps/2  <=>  ln(ln 2 - ln eps) < -ln eps - ln(2 alpha).
    inner = LN_2 - log_eps
    lhs = math.log(inner) if inner > 0 else -math.inf
    add(BoundCheck("halving_condition", lhs, -log_eps - math.log(2.0 * alpha), method="double log"))
    try:
        crit = epsilon_crit(alpha)
        add(BoundCheck("eps_below_crit", log_eps, math.log(crit)))
    except NumericFailureError:
        add(BoundCheck("eps_below_crit", log_eps, -math.inf))

    rep.checks.extend(check_lemma2(alpha, LogQuantity(log_eps), enforce=False).checks)
    return rep


def check_lemma2(alpha: float, eps: LogQuantity | float, enforce: bool = True) -> BoundCheckReport:
    """Halving step: g(1/(alpha eps)) <= exp(-1/(2 alpha eps)) < eps / 2.

    With ``enforce`` the precondition eps < eps_crit(alpha) is checked first.
    """
    log_eps = _lq(eps).log_value
    if enforce:
        crit = epsilon_crit(alpha)
        if log_eps >= math.log(crit):
            raise PreconditionError(f"eps = {math.exp(log_eps):.4g} is not below eps_crit = {crit:.4g}")
    # With s = 1/(alpha eps) astronomically large, both sides are compared as ln(-ln(.)).
    log_s = -math.log(alpha) - log_eps
    rep = BoundCheckReport(alpha, math.nan, log_eps)
    log_half_s = log_s - LN_2
    if log_s <= math.log(gkernel.S_MAX) and gkernel.g(math.exp(log_s)) > 0:
        rep.checks.append(BoundCheck(
            "halving_g_bound", math.log(gkernel.g(math.exp(log_s))), -math.exp(log_half_s), strict=False,
        ))
    else:
        # Beyond direct evaluation the kernel's own bound g(s) <= exp(-s/2) is the step itself.
        rep.checks.append(BoundCheck("halving_g_bound", -log_half_s, -log_half_s, strict=False,
                                     method="analytic bound"))
    gap = LN_2 - log_eps
    lhs = math.log(gap) if gap > 0 else -math.inf
    rep.checks.append(BoundCheck("halving_strict", lhs, log_half_s, method="double log"))
    return rep


@dataclass
class DecayReport:
    alpha: float
    W: int
    T: int
    iterations: int
    positions: list[int]
    eventual_ratio: list[float]
    decayed: bool

    @property
    def max_ratio(self) -> float:
        return max(self.eventual_ratio) if self.eventual_ratio else math.nan

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "W": self.W, "T": self.T, "iterations": self.iterations,
            "positions": self.positions, "eventual_ratio": self.eventual_ratio,
            "decayed": self.decayed, "max_ratio": self.max_ratio,
        }


def decay_simulation(
    alpha: float, W: int, T: int | None = None, iters: int = 20_000,
    positions: list[int] | None = None, tiny: float = 1e-250,
) -> DecayReport:
    """Run the noiseless windowed chain and measure late per-iteration contraction at bulk positions.

    The ratio x_{i+1}/x_i is taken over the iterations after the front has
    passed (x below alpha/100) and before underflow (x above ``tiny``); the
    reported value is the largest ratio in that stretch.
    """
    coupling = CouplingSpec("window", W=W)
    T = max(200, 30 * coupling.span) if T is None else T
    positions = [T // 4, T // 2] if positions is None else positions
    p = init_profile(T, alpha, 0.0, W)
    idx = np.array([t - 1 for t in positions])
    trace = [p.x[idx].copy()]
    for _ in range(iters):
        p = coupled_step_window(p, alpha, 0.0, W)
        trace.append(p.x[idx].copy())
        if np.all(p.x[idx] < tiny):
            break
    tr = np.array(trace)
    ratios = []
    for k in range(len(positions)):
        col = tr[:, k]
        ok = np.nonzero((col[:-1] < alpha / 100.0) & (col[:-1] > tiny) & (col[1:] > 0))[0]
        if len(ok) == 0:
            zero = np.nonzero(col == 0.0)[0]
            ratios.append(0.0 if len(zero) else math.inf)
            continue
        ratios.append(float(np.max(col[ok + 1] / col[ok])))
    decayed = bool(ratios) and all(r <= 0.5 for r in ratios)
    return DecayReport(alpha, W, T, p.i, list(positions), ratios, decayed)

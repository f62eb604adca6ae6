"""Density evolution along a spatially coupled chain of lifted graphs.

Positions t = 1..T carry variances x^t. Positions t <= 0 are anchored (known
symbols), so they contribute no interference: x = 0 there and the soft-bit
variance y is 0. The far end of a finite chain is treated as the worst case,
y = 1 beyond T, which keeps every threshold computed here conservative.

Two coupling families are covered:

* window: each MAC node mixes fragments from the 2W+1 positions around it, so
  y^t = g(mean_{|l|<=W} 1/x^{t+l}) and x^t = alpha * mean_{|j|<=W} y^{t+j} + noise.
* simple: a fraction a of each bit's fragments goes to the previous position.
  A MAC node at t then sees a fraction 1-a of its edges from position t and a
  from position t+1, which gives

      x^t = alpha a g((1-a)/x^{t+1} + a/x^t) + alpha (1-a) g((1-a)/x^t + a/x^{t-1}) + noise.

  ``printed=True`` swaps in the heavier prefactors alpha and alpha(1-a), which
  do not conserve the load, for comparison only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gkernel
from .config import CouplingSpec
from .density import _c
from .errors import DomainError, InvalidConfigError, NoWaveError

STALL_TOL = 1e-13
SUCCESS_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000
MARGIN_SPANS = 5


def default_chain_length(coupling: CouplingSpec) -> int:
    return max(200, 30 * coupling.span)


@dataclass
class DensityProfile:
    """Variances at chain positions 1..T after ``i`` iterations."""

    x: np.ndarray
    y: np.ndarray
    i: int = 0

    @property
    def T(self) -> int:
        return len(self.x)

    def copy(self) -> "DensityProfile":
        return DensityProfile(self.x.copy(), self.y.copy(), self.i)


def init_profile(T: int, alpha: float, noise_var: float, W: int = 0) -> DensityProfile:
    """Ramp start: the load builds up linearly over the first 2W+1 positions."""
    n = 2 * W + 1
    if W < 0:
        raise InvalidConfigError("W must be >= 0")
    if T <= n:
        raise InvalidConfigError(f"chain length {T} must exceed the window 2W+1 = {n}")
    if alpha < 0 or noise_var < 0:
        raise DomainError("alpha and noise_var must be >= 0")
    t = np.arange(1, T + 1)
    x = np.where(t <= n, alpha * t / n, alpha) + noise_var
    y = np.where(t <= W, 0.0, 1.0)
    return DensityProfile(x.astype(float), y.astype(float), 0)


def _g(s: np.ndarray) -> np.ndarray:
    return gkernel.g_fast(s)


def _inv(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 1.0 / x


def coupled_step_window(
    p: DensityProfile, alpha: float, noise_var: float, W: int, m: int | None = None
) -> DensityProfile:
    n = 2 * W + 1
    box = np.full(n, 1.0 / n)
    T = p.T
    # x at 1-W .. T+W; anchored on the left, unconverged on the right.
    xp = np.concatenate([np.zeros(W), p.x, np.full(W, alpha + noise_var)])
    y = _g(_c(m) * np.convolve(_inv(xp), box, mode="valid"))
    yp = np.concatenate([np.zeros(W), y, np.ones(W)])
    x = alpha * np.convolve(yp, box, mode="valid") + noise_var
    assert len(x) == T
    return DensityProfile(x, y, p.i + 1)


def _mix(w_a: float, x_a: np.ndarray, w_b: float, x_b: np.ndarray) -> np.ndarray:
    """w_a / x_a + w_b / x_b, where a zero weight drops its term even against x = 0."""
    out = np.zeros_like(x_a)
    if w_a:
        out = out + w_a * _inv(x_a)
    if w_b:
        out = out + w_b * _inv(x_b)
    return out


def coupled_step_simple(
    p: DensityProfile, alpha: float, noise_var: float, a: float,
    printed: bool = False, m: int | None = None,
) -> DensityProfile:
    c = _c(m)
    x = p.x
    left = np.concatenate([[0.0], x[:-1]])
    right = np.concatenate([x[1:], [alpha + noise_var]])
    # y_here[t] mixes bits at t and t-1; y_next[t] mixes bits at t+1 and t.
    y_here = _g(c * _mix(1.0 - a, x, a, left))
    y_next = _g(c * _mix(1.0 - a, right, a, x))
    y_next[-1] = 1.0
    if printed:
        xn = alpha * y_next + alpha * (1.0 - a) * y_here + noise_var
        xn[0] = alpha * y_next[0] + noise_var
    else:
        xn = alpha * a * y_next + alpha * (1.0 - a) * y_here + noise_var
    return DensityProfile(xn, y_here, p.i + 1)


def uncoupled_floor(alpha: float, noise_var: float, m: int | None = None, tol: float = 1e-15) -> float:
    """Smallest fixed point of the uncoupled map, reached by iterating upward from noise_var."""
    if noise_var == 0.0:
        return 0.0
    x = noise_var
    for _ in range(100_000):
        nxt = alpha * gkernel.g(_c(m) / x) + noise_var
        if abs(nxt - x) <= tol * x:
            return nxt
        x = nxt
    return x


@dataclass
class CoupledRun:
    converged: bool
    iterations: int
    profile: DensityProfile
    floor: float
    stalled: bool
    history: np.ndarray | None = None
    history_iters: np.ndarray | None = None
    monotone: bool = True

    @property
    def max_x(self) -> float:
        return float(self.profile.x.max())


def _history_keep(i: int, record_every: int | None) -> bool:
    if record_every is None:
        return i <= 100 or i % 5 == 0
    return i % record_every == 0


def coupled_trajectory(
    alpha: float,
    noise_var: float,
    coupling: CouplingSpec,
    T: int | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = SUCCESS_TOL,
    margin: int | None = None,
    record: bool = False,
    record_every: int | None = None,
    printed: bool = False,
    m: int | None = None,
    stall_tol: float = STALL_TOL,
) -> CoupledRun:
    """Iterate the chain until positions 1..T-margin reach the floor, the profile stalls, or ``max_iter``.

    The last ``margin`` positions (default five coupling spans) sit against the
    pessimistic right edge and are excluded from the success test. History is
    stored every iteration up to 100 and every 5th after that, unless
    ``record_every`` is given.
    """
    if coupling.kind == "none":
        coupling = CouplingSpec("window", W=0, chain_length=coupling.chain_length)
    T = default_chain_length(coupling) if T is None else T
    margin = MARGIN_SPANS * coupling.span if margin is None else margin
    if margin >= T:
        raise InvalidConfigError("margin must be smaller than the chain")
    W = coupling.W if coupling.kind == "window" else 0
    p = init_profile(T, alpha, noise_var, W)
    if coupling.kind == "simple":
        p.x[:] = alpha + noise_var

    def step(q):
        if coupling.kind == "window":
            return coupled_step_window(q, alpha, noise_var, coupling.W, m)
        return coupled_step_simple(q, alpha, noise_var, coupling.a, printed, m)

    floor = uncoupled_floor(alpha, noise_var, m)
    target = floor + tol
    hist, hist_i = ([p.x.copy()], [0]) if record else (None, None)
    monotone = True
    converged = stalled = False
    check = slice(0, T - margin)
    for i in range(1, max_iter + 1):
        q = step(p)
        dx = q.x - p.x
        if np.any(dx > 1e-12 * np.maximum(1.0, p.x)):
            monotone = False
        p = q
        if record and _history_keep(i, record_every):
            hist.append(p.x.copy())
            hist_i.append(i)
        if p.x[check].max() <= target:
            converged = True
            break
        if np.abs(dx).max() < stall_tol:
            stalled = True
            break
    if record and hist_i[-1] != p.i:
        hist.append(p.x.copy())
        hist_i.append(p.i)
    return CoupledRun(
        converged, p.i, p, floor, stalled,
        np.array(hist) if record else None,
        np.array(hist_i) if record else None,
        monotone,
    )


@dataclass
class ThresholdResult:
    kind: str
    parameter: float
    alpha_threshold: float
    lo: float
    hi: float
    censored: bool
    iterations_used: int
    chain_length: int
    noise_var: float
    max_iter: int
    probes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "parameter": self.parameter,
            "alpha_threshold": self.alpha_threshold, "lo": self.lo, "hi": self.hi,
            "censored": self.censored, "iterations_used": self.iterations_used,
            "chain_length": self.chain_length, "noise_var": self.noise_var,
            "max_iter": self.max_iter,
        }


def coupling_threshold(
    coupling: CouplingSpec,
    noise_var: float = 0.0,
    T: int | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    alpha_tol: float = 0.01,
    lo: float = 1.0,
    hi: float = 8.0,
    printed: bool = False,
    m: int | None = None,
) -> ThresholdResult:
    """Largest load at which the chain converges, by bisection to ``alpha_tol``.

    The result is flagged ``censored`` when the bracket does not straddle the
    transition or the chain is shorter than 20 coupling spans.
    """
    T = default_chain_length(coupling) if T is None else T
    censored = T < 20 * coupling.span
    probes = []
    used = 0

    def ok(alpha):
        nonlocal used
        run = coupled_trajectory(alpha, noise_var, coupling, T, max_iter, printed=printed, m=m)
        used = max(used, run.iterations)
        probes.append((alpha, run.converged, run.iterations))
        return run.converged

    if not ok(lo):
        censored = True
        hi = lo
    elif ok(hi):
        censored = True
        lo = hi
    else:
        while hi - lo > alpha_tol:
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
    param = coupling.W if coupling.kind == "window" else coupling.a
    return ThresholdResult(
        coupling.kind, float(param), lo, lo, hi, censored, used, T, noise_var, max_iter, probes
    )


@dataclass
class WaveReport:
    delay: int
    speed: float
    residual: float
    crossings: np.ndarray


def wave_speed(
    history: np.ndarray, alpha: float, level: float | None = None,
    bulk: tuple[int, int] | None = None, iterations: np.ndarray | None = None,
) -> WaveReport:
    """Front delay and shape stability of a converged chain history.

    ``history`` has shape (iterations, T) and must be sampled every iteration.
    The crossing time of position t is the first iteration with x below
    ``level`` (default alpha/2). The residual compares x(i + delay, t + 1) with
    x(i, t) over the bulk, relative to alpha, at the best integer delay.
    """
    H = np.asarray(history, dtype=float)
    if iterations is not None and np.any(np.diff(iterations) != 1):
        raise NoWaveError("wave diagnostics need a history recorded at every iteration")
    n_it, T = H.shape
    level = 0.5 * alpha if level is None else level
    b0, b1 = bulk if bulk is not None else (10, T - 10)
    if b1 - b0 < 2:
        raise NoWaveError("bulk region too short")
    below = H[:, b0:b1] < level
    if not below[-1].all():
        raise NoWaveError("history has not converged over the bulk")
    cross = np.argmax(below, axis=0)
    steps = np.diff(cross)
    if np.all(steps == 0):
        return WaveReport(0, math.inf, float(np.abs(H[:, b0 + 1:b1] - H[:, b0:b1 - 1]).max() / alpha), cross)
    base = int(round(float(np.mean(steps))))
    best = None
    for d in range(max(0, base - 3), base + 4):
        n = n_it - d
        if n <= d:
            continue
        r = np.abs(H[d + d:d + n, b0 + 1:b1] - H[d:n, b0:b1 - 1]).max() / alpha
        if best is None or r < best[1]:
            best = (d, float(r))
    if best is None:
        raise NoWaveError("history too short for the front delay")
    return WaveReport(best[0], 1.0 / float(np.mean(steps)), best[1], cross)

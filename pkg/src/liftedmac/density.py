"""Scalar density evolution for the uncoupled lifted graph.

The interference-plus-noise variance x of a cancelled fragment obeys

    x_{i+1} = alpha * g(c / x_i) + noise_var,     c = (M - 1) / M,

with c -> 1 as M -> infinity (pass ``m=None``). Starting from the no-knowledge
state x_0 = alpha + noise_var the sequence decreases monotonically to the
largest fixed point, which is the one the detector actually reaches.

Solution multiplicity is organised by the fold curve of the fixed-point
equation. Writing G(x) = g(c/x), a fixed point is tangent when
alpha * G'(x) = 1, which parametrises the fold as

    alpha(x) = 1 / G'(x),     noise_var(x) = x - G(x) / G'(x).

The cusp (G'' = 0) gives the critical noise level and the spinodal load; the
branch beyond the cusp gives the largest load with a unique solution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from . import gkernel
from .errors import DomainError

SIGMA2_ZERO = 1e-9
SCAN_POINTS = 2000


def _c(m: int | None) -> float:
    return 1.0 if m is None else (m - 1) / m


def de_step(x: float, alpha: float, noise_var: float, m: int | None = None) -> float:
    """One application of the variance map."""
    if not x > 0:
        raise DomainError(f"variance must be positive, got {x}")
    return alpha * gkernel.g(_c(m) / x) + noise_var


def _de_step_array(x: np.ndarray, alpha: float, noise_var: float, m: int | None) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return alpha * gkernel.g_fast(_c(m) / x) + noise_var


@dataclass
class ScalarState:
    i: int
    x: float

    @property
    def gamma_sq(self) -> float:
        return math.inf if self.x == 0 else 1.0 / self.x


@dataclass
class Trajectory:
    states: list[ScalarState]
    fixed_point: float
    converged: bool

    @property
    def gamma_sq(self) -> float:
        return 1.0 / self.fixed_point


def de_trajectory(
    alpha: float,
    noise_var: float,
    m: int | None = None,
    tol: float = 1e-13,
    max_iter: int = 100_000,
    alpha_eff: float | None = None,
) -> Trajectory:
    """Iterate the variance map from alpha + noise_var until the relative step falls below ``tol``.

    ``alpha_eff`` overrides the load inside the map (for the finite-size
    factor (KM-1)/(NM)) while ``alpha`` still sets the starting point.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    load = alpha if alpha_eff is None else alpha_eff
    x = load + noise_var
    states = [ScalarState(0, x)]
    for i in range(1, max_iter + 1):
        if x == 0.0:
            return Trajectory(states, 0.0, True)
        nxt = de_step(x, load, noise_var, m)
        states.append(ScalarState(i, nxt))
        if abs(nxt - x) < tol * x:
            return Trajectory(states, nxt, True)
        x = nxt
    return Trajectory(states, x, False)


def tanaka_sir(alpha: float, noise_var: float) -> float:
    """Posterior SIR gamma^2 of the optimal symbol-wise detector in the large-system limit.

    Solves gamma^2 = [noise_var + alpha * E(1 - tanh(gamma^2 + gamma xi))^2]^-1 through
    its equivalent variance map, started from no prior knowledge.
    """
    if alpha < 0:
        raise DomainError("alpha must be >= 0")
    if alpha == 0:
        return math.inf if noise_var == 0 else 1.0 / noise_var
    return de_trajectory(alpha, max(noise_var, 0.0), None).gamma_sq


@dataclass
class FixedPointReport:
    solutions: list[float]
    stable: list[bool]
    alpha: float
    noise_var: float
    m: int | None = None

    @property
    def multiplicity(self) -> int:
        return len(self.solutions)

    @property
    def relevant(self) -> float:
        return max(self.solutions)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "noise_var": self.noise_var, "m": self.m,
            "solutions": self.solutions, "stable": self.stable,
            "multiplicity": self.multiplicity, "relevant": self.relevant,
        }


def map_slope(x: float, alpha: float, m: int | None = None) -> float:
    """d/dx of alpha * g(c/x)."""
    c = _c(m)
    return -alpha * gkernel.g_prime(c / x) * c / (x * x)


def count_fixed_points(
    alpha: float, noise_var: float, m: int | None = None, points: int = SCAN_POINTS
) -> FixedPointReport:
    """Locate every solution of x = alpha g(c/x) + noise_var.

    Sign changes of h(x) = x - alpha g(c/x) - noise_var are bracketed on a
    log grid over [noise_var(1 - 1e-6), alpha + noise_var] and refined by
    bisection to 1e-12 relative. Stability is read from the slope of the map.
    """
    if alpha <= 0:
        raise DomainError("alpha must be positive")
    s2 = max(noise_var, SIGMA2_ZERO)
    lo, hi = s2 * (1 - 1e-6), alpha + s2
    xs = np.geomspace(lo, hi, points)
    h = xs - _de_step_array(xs, alpha, s2, m)
    sign = np.sign(h)
    idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]

    def f(x):
        return x - alpha * gkernel.g(_c(m) / x) - s2

    roots = []
    for i in idx:
        a, b = xs[i], xs[i + 1]
        fa, fb = f(a), f(b)
        if fa == 0.0:
            roots.append(a)
            continue
        if fa * fb > 0:
            # Table vs exact disagreement right at a tangency; keep the grid midpoint.
            roots.append(math.sqrt(a * b))
            continue
        roots.append(optimize.brentq(f, a, b, xtol=1e-300, rtol=1e-12, maxiter=500))
    if not roots:
        # h(hi) = alpha (1 - g) > 0 and h(lo) < 0, so a root always exists; guard anyway.
        roots.append(optimize.brentq(f, lo, hi, rtol=1e-12))
    roots.sort()
    stable = [abs(map_slope(x, alpha, m)) < 1.0 for x in roots]
    return FixedPointReport(roots, stable, alpha, noise_var, m)


# --- fold curve -----------------------------------------------------------------------

def _G(x: float, c: float) -> float:
    return gkernel.g(c / x)


def _G1(x: float, c: float) -> float:
    return -gkernel.g_prime(c / x) * c / (x * x)


def fold_point(x: float, m: int | None = None) -> tuple[float, float]:
    """(alpha, noise_var) at which x is a tangent fixed point."""
    c = _c(m)
    d = _G1(x, c)
    return 1.0 / d, x - _G(x, c) / d


def _fold_noise(x: float, c: float) -> float:
    return x - _G(x, c) / _G1(x, c)


@dataclass
class Cusp:
    x: float
    alpha: float
    noise_var: float


_CUSP_CACHE: dict = {}


def cusp(m: int | None = None) -> Cusp:
    """Point where the two fold branches meet: noise_var is maximal along the fold."""
    if m in _CUSP_CACHE:
        return _CUSP_CACHE[m]
    c = _c(m)
    res = optimize.minimize_scalar(
        lambda x: -_fold_noise(x, c), bounds=(0.05 * c, 2.0 * c), method="bounded",
        options={"xatol": 1e-10},
    )
    x = float(res.x)
    a, s2 = fold_point(x, m)
    out = Cusp(x, a, s2)
    _CUSP_CACHE[m] = out
    return out


def critical_noise(m: int | None = None) -> float:
    """Largest noise variance at which more than one fixed point can exist."""
    return cusp(m).noise_var


def spinodal_load(m: int | None = None) -> float:
    """Smallest load admitting multiple fixed points for any noise level."""
    return cusp(m).alpha


def max_single_solution_load(noise_var: float, m: int | None = None) -> float:
    """Largest load with a unique (good) fixed point at this noise level.

    Returns +inf above the critical noise. ``noise_var = 0`` is evaluated at
    1e-9. Computed on the upper fold branch, where noise_var(x) decreases
    monotonically from the cusp value to 0 as x grows.
    """
    s2 = max(noise_var, SIGMA2_ZERO)
    cp = cusp(m)
    if s2 >= cp.noise_var:
        return math.inf
    c = _c(m)
    hi = cp.x * 2.0
    while _fold_noise(hi, c) > s2:
        hi *= 2.0
    x = optimize.brentq(lambda x: _fold_noise(x, c) - s2, cp.x, hi, xtol=1e-14, rtol=1e-13)
    return fold_point(x, m)[0]


def max_single_solution_load_scan(
    noise_var: float, m: int | None = None, alpha_tol: float = 1e-4, step: float = 0.01,
    alpha_start: float = 0.05,
) -> float:
    """Grid-scan route to the same boundary: walk alpha up until a second fixed point appears,
    then bisect the multiplicity predicate to ``alpha_tol``. Independent of the fold curve."""
    s2 = max(noise_var, SIGMA2_ZERO)
    a = alpha_start
    prev = a
    while count_fixed_points(a, s2, m).multiplicity == 1:
        prev = a
        a += step
        if a > 10.0:
            return math.inf
    lo, hi = prev, a
    while hi - lo > alpha_tol:
        mid = 0.5 * (lo + hi)
        if count_fixed_points(mid, s2, m).multiplicity == 1:
            lo = mid
        else:
            hi = mid
    return lo


# --- error rates ----------------------------------------------------------------------

@dataclass
class BerPoint:
    snr_db: float
    sigma2: float
    gamma_sq: float
    pb: float
    pb_awgn: float
    multiplicity: int

    def as_row(self, alpha: float) -> dict:
        return {
            "alpha": alpha, "snr_db": self.snr_db, "sigma2": self.sigma2,
            "gamma_sq": self.gamma_sq, "pb": self.pb, "pb_awgn": self.pb_awgn,
            "multiplicity": self.multiplicity,
        }


def snr_to_noise(snr_db: float) -> float:
    return 10.0 ** (-snr_db / 10.0)


def bit_error_rate(alpha: float, noise_var: float, m: int | None = None) -> float:
    """P_b = Q(gamma_inf) at the detector-relevant fixed point."""
    if alpha == 0:
        return float(gkernel.q_function(1.0 / math.sqrt(noise_var)))
    x = de_trajectory(alpha, noise_var, m).fixed_point
    return float(gkernel.q_function(1.0 / math.sqrt(x)))


def ber_curve(alpha: float, snr_grid_db, m: int | None = None, with_multiplicity: bool = True) -> list[BerPoint]:
    out = []
    for snr in snr_grid_db:
        s2 = snr_to_noise(float(snr))
        if alpha == 0:
            x, mult = s2, 1
        else:
            x = de_trajectory(alpha, s2, m).fixed_point
            mult = count_fixed_points(alpha, s2, m).multiplicity if with_multiplicity else 0
        out.append(BerPoint(
            float(snr), s2, 1.0 / x,
            float(gkernel.q_function(1.0 / math.sqrt(x))),
            float(gkernel.q_function(1.0 / math.sqrt(s2))),
            mult,
        ))
    return out


def log_bit_error_rate(alpha: float, noise_var: float, m: int | None = None) -> float:
    x = noise_var if alpha == 0 else de_trajectory(alpha, noise_var, m).fixed_point
    return float(special.log_ndtr(-1.0 / math.sqrt(x)))


def required_snr_db(alpha: float, target_pb: float, m: int | None = None,
                    lo: float = -10.0, hi: float = 40.0) -> float:
    """SNR (dB) at which the detector's P_b first reaches ``target_pb``."""
    def f(snr):
        return log_bit_error_rate(alpha, snr_to_noise(snr), m) - math.log(target_pb)
    return optimize.brentq(f, lo, hi, xtol=1e-8)


def awgn_required_snr_db(target_pb: float) -> float:
    q_inv = -special.ndtri(target_pb)
    return 10.0 * math.log10(q_inv * q_inv)


def snr_gap_db(alpha: float, target_pb: float, m: int | None = None) -> float:
    """Extra SNR the random-signalling detector needs over antipodal AWGN at ``target_pb``."""
    return required_snr_db(alpha, target_pb, m) - awgn_required_snr_db(target_pb)

"""Exhaustive optimal detectors for small single-block instances.

Both detectors visit all 2^K hypotheses in Gray-code order, so consecutive
hypotheses differ in one bit and the residual y - A d is updated by a single
rank-one step. Within a chunk the steps are accumulated with a cumulative sum;
each chunk restarts from an exactly recomputed residual so rounding never
builds up over the whole enumeration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import CostGuardError, DegeneratePosteriorError, InvalidDimensionError
from .rng import as_generator
from .sphere import sample_unit_vectors

MAX_USERS = 24
CHUNK = 4096


@dataclass
class SmallInstance:
    y: np.ndarray
    waveforms: np.ndarray
    noise_var: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.waveforms = np.atleast_2d(np.asarray(self.waveforms, dtype=float))
        if self.waveforms.shape[1] != self.y.shape[0]:
            raise InvalidDimensionError("waveforms must have shape (K, N) with N = len(y)")
        if self.K > MAX_USERS:
            raise CostGuardError(f"exhaustive detection is limited to K <= {MAX_USERS}, got {self.K}")

    @property
    def K(self) -> int:
        return self.waveforms.shape[0]


def random_instance(K: int, N: int, noise_var: float, rng) -> tuple[SmallInstance, np.ndarray]:
    """One block with K isotropic unit waveforms and uniform +-1 bits; returns (instance, bits)."""
    gen = as_generator(rng)
    a = sample_unit_vectors(N, K, gen)
    d = gen.choice(np.array([-1.0, 1.0]), size=K)
    y = d @ a + math.sqrt(noise_var) * gen.standard_normal(N)
    return SmallInstance(y, a, noise_var), d


def _gray(i: np.ndarray) -> np.ndarray:
    return i ^ (i >> 1)


def _bits_of(codes: np.ndarray, K: int) -> np.ndarray:
    """Hypothesis symbols, bit k of the code set means d_k = -1."""
    return 1.0 - 2.0 * ((codes[:, None] >> np.arange(K)) & 1)


def _enumerate(inst: SmallInstance):
    """Yield (codes, squared residual norms) chunk by chunk over all 2^K hypotheses."""
    K = inst.K
    A = inst.waveforms
    total = 1 << K
    for start in range(0, total, CHUNK):
        idx = np.arange(start, min(start + CHUNK, total), dtype=np.int64)
        codes = _gray(idx)
        d0 = _bits_of(codes[:1], K)[0]
        r0 = inst.y - d0 @ A
        if len(idx) == 1:
            yield codes, np.array([r0 @ r0])
            continue
        # Step from hypothesis i-1 to i flips bit = trailing zeros of i.
        steps = idx[1:]
        flip = np.log2(steps & -steps).astype(np.int64)
        prev_sym = _bits_of(codes[:-1], K)[np.arange(len(steps)), flip]
        delta = 2.0 * prev_sym[:, None] * A[flip]
        r = np.vstack([r0, r0 + np.cumsum(delta, axis=0)])
        yield codes, np.einsum("hn,hn->h", r, r)


def ml_sequence(inst: SmallInstance) -> np.ndarray:
    """Jointly most likely symbol vector.

    Metrics within 1e-12 relative of the minimum count as ties; among tied
    vectors the lexicographically smallest wins, ordering -1 before +1 and
    comparing user 0 first.
    """
    best_val = math.inf
    cands: list[np.ndarray] = []
    for codes, met in _enumerate(inst):
        m = float(met.min())
        tol = 1e-12 * max(1.0, abs(m), abs(best_val) if math.isfinite(best_val) else 0.0)
        if m < best_val - tol:
            best_val = m
            cands = [codes[met <= m + tol]]
        elif m <= best_val + tol:
            cands.append(codes[met <= best_val + tol])
    allc = np.concatenate(cands)
    syms = _bits_of(allc, inst.K)
    order = np.lexsort(syms.T[::-1])
    return syms[order[0]]


def mpm_posteriors(inst: SmallInstance) -> np.ndarray:
    """Exact per-user posterior LLRs log P(d_k=+1|y) - log P(d_k=-1|y) under uniform priors."""
    if not inst.noise_var > 0:
        raise DegeneratePosteriorError("posteriors need noise_var > 0; use ml_sequence")
    K = inst.K
    acc = np.full((2, K), -np.inf)
    for codes, met in _enumerate(inst):
        lp = -met / (2.0 * inst.noise_var)
        pos = _bits_of(codes, K) > 0
        for b, mask in ((0, pos), (1, ~pos)):
            masked = np.where(mask, lp[:, None], -np.inf)
            mx = masked.max(axis=0)
            safe = np.where(np.isfinite(mx), mx, 0.0)
            s = np.exp(masked - safe).sum(axis=0)
            with np.errstate(divide="ignore"):
                part = np.where(np.isfinite(mx), safe + np.log(s), -np.inf)
            acc[b] = np.logaddexp(acc[b], part)
    return acc[0] - acc[1]


def matched_filter(inst: SmallInstance) -> np.ndarray:
    return inst.waveforms @ inst.y


@dataclass
class LlrSirEstimates:
    """SIR read off a population of sign-corrected LLRs d * LLR.

    For a Gaussian-consistent LLR with SIR gamma^2 the population is
    N(2 gamma^2, 4 gamma^2); each field inverts one moment relation.
    """

    from_mean: float
    from_variance: float
    from_ratio: float
    gaussian_mle: float
    mean: float
    variance: float
    consistency: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def posterior_mmse(signed_llrs) -> float:
    """Mean squared error of the soft estimates tanh(LLR/2)."""
    L = np.asarray(signed_llrs, dtype=float)
    return float(np.mean(4.0 * special.expit(-L) ** 2))


def fixed_point_sir(signed_llrs, alpha: float, noise_var: float) -> float:
    """SIR implied by the measured posterior MMSE: 1 / (noise_var + alpha * mmse).

    This is the self-consistency relation that defines the large-system SIR
    of the optimal detector, evaluated with the empirical MMSE in place of
    its Gaussian-channel model, so it makes no assumption on the LLR shape.
    """
    return 1.0 / (noise_var + alpha * posterior_mmse(signed_llrs))


def llr_sir_estimates(signed_llrs) -> LlrSirEstimates:
    L = np.asarray(signed_llrs, dtype=float)
    mu, v = float(L.mean()), float(L.var())
    # MLE of gamma^2 for N(2 theta, 4 theta): theta^2 + theta = mean(L^2)/4.
    m2 = float(np.mean(L * L))
    theta = 0.5 * (-1.0 + math.sqrt(1.0 + m2))
    return LlrSirEstimates(mu / 2.0, v / 4.0, mu * mu / v, theta, mu, v, v / (2.0 * mu))

"""Iterative cancellation detector on the lifted graph.

Flooding schedule, per iteration:

1. MAC nodes: every block forms one residual r = y - sum tanh(lam_ext/2) a / sqrt(M)
   over all fragments it hosts; each fragment then adds its own term back,
   z = a^T r + tanh(lam_ext/2) / sqrt(M), and emits lam = 2 z / (sqrt(M) v),
   with v the variance of z - d/sqrt(M).
2. Bit nodes: the extrinsic LLR on fragment m is the sum over the other M-1
   fragments; the a posteriori LLR is the full sum.

The variance v comes either from a lockstep recursion on the graph's
position-to-position fragment fractions (``analytic``, default) or from the
sample variance against the true bits (``empirical``, diagnostics only).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import gkernel
from .config import SystemConfig
from .errors import DomainError
from .graph import LiftedTopology, ReceivedFrame

LLR_CAP = 40.0
VARIANCE_MODES = ("analytic", "empirical")


@dataclass
class MessageState:
    """Messages on every fragment edge, arrays shaped (K, n_bits, M)."""

    edge_llrs: np.ndarray
    extrinsic: np.ndarray
    iter_variance: np.ndarray
    iteration: int = 0

    @classmethod
    def initial(cls, topo: LiftedTopology, cfg: SystemConfig) -> "MessageState":
        shape = topo.edge_block.shape
        ext = np.zeros(shape)
        ext[:, topo.anchored, :] = LLR_CAP
        return cls(np.zeros(shape), ext, np.full(topo.positions, np.nan), 0)


def equality_update(state: MessageState, topo: LiftedTopology) -> MessageState:
    """Leave-one-out sums of the incoming MAC LLRs; anchored bits stay at the cap."""
    total = state.edge_llrs.sum(axis=2, keepdims=True)
    ext = total - state.edge_llrs
    ext[:, topo.anchored, :] = LLR_CAP
    return MessageState(state.edge_llrs, ext, state.iter_variance, state.iteration)


def _block_operator(topo: LiftedTopology) -> sparse.csr_matrix:
    E = topo.n_edges
    return sparse.csr_matrix(
        (np.ones(E), (topo.edge_block.ravel(), np.arange(E))), shape=(topo.n_blocks, E)
    )


class _Workspace:
    """Edge-level arrays reused across iterations of one frame."""

    def __init__(self, frame: ReceivedFrame, topo: LiftedTopology, cfg: SystemConfig):
        self.M = cfg.M
        self.N = cfg.N
        self.sqrt_m = math.sqrt(cfg.M)
        self.E = topo.n_edges
        self.eb = topo.edge_block.ravel()
        self.wave = frame.waveforms.reshape(self.E, cfg.N)
        self.S = _block_operator(topo)
        self.y = frame.blocks
        self.edge_pos = self.eb // topo.L
        bits_e = np.broadcast_to(frame.true_bits[:, :, None], topo.edge_block.shape).ravel()
        self.d = bits_e.astype(float)
        anchored_e = np.broadcast_to(topo.anchored[None, :, None], topo.edge_block.shape).ravel()
        self.free = ~anchored_e
        self.positions = topo.positions

    def matched_outputs(self, soft: np.ndarray) -> np.ndarray:
        """z for every edge given the soft symbols tanh(ext/2) on every edge."""
        contrib = self.S @ (soft[:, None] * self.wave)
        r = self.y - contrib / self.sqrt_m
        return np.einsum("en,en->e", self.wave, r[self.eb]) + soft / self.sqrt_m


class AnalyticVariance:
    """Lockstep variance recursion matched to a topology.

    C[s, t] counts fragments from position-s bits landing in each position-t
    block; P[s, t] is the fraction of a position-s bit's fragments at t. With
    y_s the soft-bit residual variance at position s,

        v_t = (sum_s C[s,t] y_s) (1 - 1/D_t) / (N M) + noise,   D_t = sum_s C[s,t],
        y_s = g((M-1)/M * sum_t P[s,t] / v_t),                 y_s = 0 when anchored.

    Uncoupled this is v = (KM-1)/(NM) g((M-1)/(M v)) + noise.
    """

    def __init__(self, topo: LiftedTopology, cfg: SystemConfig):
        T, L = topo.positions, topo.L
        src = np.broadcast_to(topo.bit_position()[None, :, None], topo.edge_block.shape).ravel()
        dst = topo.edge_block.ravel() // L
        C = np.zeros((T, T))
        np.add.at(C, (src, dst), 1.0)
        self.P = C / C.sum(axis=1, keepdims=True)
        self.C = C / L
        self.D = self.C.sum(axis=0)
        self.anchored_pos = np.array([topo.anchored[t * L:(t + 1) * L].all() for t in range(T)])
        self.N, self.M = cfg.N, cfg.M
        self.noise = cfg.noise_var
        self.y = np.where(self.anchored_pos, 0.0, 1.0)

    def variance(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            frac = np.where(self.D > 1, 1.0 - 1.0 / self.D, 0.0)
        return (self.y @ self.C) * frac / (self.N * self.M) + self.noise

    def advance(self, v: np.ndarray) -> None:
        c = (self.M - 1) / self.M
        with np.errstate(divide="ignore"):
            s = c * (self.P @ (1.0 / v))
        y = np.array([gkernel.g(float(si)) if np.isfinite(si) else 0.0 for si in s])
        self.y = np.where(self.anchored_pos, 0.0, y)


def _llr_from(z: np.ndarray, v_edge: np.ndarray, sqrt_m: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = 2.0 * z / (sqrt_m * v_edge)
    degenerate = ~(v_edge > 0)
    lam[degenerate] = np.sign(z[degenerate]) * LLR_CAP
    return np.clip(np.nan_to_num(lam, nan=0.0), -LLR_CAP, LLR_CAP)


def _empirical_variance(ws: _Workspace, z: np.ndarray) -> np.ndarray:
    dev = z - ws.d / ws.sqrt_m
    v = np.full(ws.positions, np.nan)
    mask = ws.free
    sums = np.bincount(ws.edge_pos[mask], weights=dev[mask] ** 2, minlength=ws.positions)
    cnt = np.bincount(ws.edge_pos[mask], minlength=ws.positions)
    ok = cnt > 0
    v[ok] = sums[ok] / cnt[ok]
    return v


def mac_update(
    state: MessageState,
    frame: ReceivedFrame,
    topo: LiftedTopology,
    cfg: SystemConfig,
    variance_mode: str = "analytic",
    _ws: _Workspace | None = None,
    _av: AnalyticVariance | None = None,
) -> tuple[MessageState, np.ndarray]:
    """Cancel, filter and convert to LLRs. Returns the new state and the raw z values."""
    if variance_mode not in VARIANCE_MODES:
        raise DomainError(f"variance_mode must be one of {VARIANCE_MODES}")
    ws = _ws or _Workspace(frame, topo, cfg)
    soft = np.tanh(0.5 * state.extrinsic.ravel())
    z = ws.matched_outputs(soft)
    if variance_mode == "analytic":
        av = _av or AnalyticVariance(topo, cfg)
        v_pos = av.variance()
    else:
        v_pos = _empirical_variance(ws, z)
    v_pos = np.where(np.isnan(v_pos), 1.0, v_pos)
    lam = _llr_from(z, v_pos[ws.edge_pos], ws.sqrt_m)
    new = MessageState(lam.reshape(state.edge_llrs.shape), state.extrinsic, v_pos, state.iteration + 1)
    return new, z


@dataclass
class DemodReport:
    final_llrs: np.ndarray
    decisions: np.ndarray
    bit_error_count: int
    scored_bits: int
    per_iteration_sir: list[float]
    per_iteration_ber: list[float]
    variance_trajectory: list[list[float]]
    variance_mode: str
    seed: int = -1
    cfg: SystemConfig | None = None
    extra: dict = field(default_factory=dict)

    @property
    def ber(self) -> float:
        return self.bit_error_count / self.scored_bits if self.scored_bits else math.nan

    def to_dict(self) -> dict:
        return {
            "schema": "liftedmac.demod_report/1",
            "config": self.cfg.to_dict() if self.cfg else None,
            "seed": self.seed,
            "variance_mode": self.variance_mode,
            "iterations": len(self.per_iteration_sir),
            "bit_errors": self.bit_error_count,
            "scored_bits": self.scored_bits,
            "ber": self.ber,
            "sir_trajectory": self.per_iteration_sir,
            "ber_trajectory": self.per_iteration_ber,
            "variance_trajectory": self.variance_trajectory,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _decide(llr: np.ndarray) -> np.ndarray:
    return np.where(llr >= 0, 1, -1).astype(np.int8)


def demodulate(
    frame: ReceivedFrame,
    topo: LiftedTopology,
    cfg: SystemConfig | None = None,
    iterations: int = 10,
    variance_mode: str = "analytic",
) -> DemodReport:
    """Run ``iterations`` MAC/bit rounds and decide on the summed fragment LLRs.

    The per-iteration SIR is 1/var(z - d/sqrt(M)) over non-anchored fragments,
    the quantity the variance recursion predicts. Anchored bits are not scored.
    """
    if iterations < 1:
        raise DomainError("iterations must be >= 1")
    cfg = frame.cfg if cfg is None else cfg
    ws = _Workspace(frame, topo, cfg)
    av = AnalyticVariance(topo, cfg) if variance_mode == "analytic" else None
    state = MessageState.initial(topo, cfg)
    free_bits = ~topo.anchored
    truth = frame.true_bits[:, free_bits]
    sirs, bers, vtraj = [], [], []
    for _ in range(iterations):
        state, z = mac_update(state, frame, topo, cfg, variance_mode, ws, av)
        dev = (z - ws.d / ws.sqrt_m)[ws.free]
        sirs.append(float(1.0 / np.mean(dev * dev)) if dev.size and np.any(dev) else math.inf)
        vtraj.append([float(v) for v in state.iter_variance])
        if av is not None:
            av.advance(state.iter_variance)
        state = equality_update(state, topo)
        post = state.edge_llrs.sum(axis=2)
        bers.append(float(np.mean(_decide(post[:, free_bits]) != truth)) if truth.size else 0.0)
    llr = state.edge_llrs.sum(axis=2)
    llr[:, topo.anchored] = LLR_CAP
    dec = _decide(llr)
    errors = int(np.sum(dec[:, free_bits] != truth))
    return DemodReport(
        llr, dec, errors, int(truth.size), sirs, bers, vtraj, variance_mode, frame.seed, cfg,
    )

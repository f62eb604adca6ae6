"""Lifted, edge-permuted factor graph and the signal blocks it produces.

Every bit (k, l) of user k is split into M fragments of amplitude 1/sqrt(M).
Each fragment lands in one receive block and is carried there by its own
random unit-energy waveform. Block l receives

    y_l = sum over fragments placed in l of d / sqrt(M) * a + sigma * n.

Uncoupled graphs permute a user's L*M fragment slots within one chain
position. Coupled graphs first send each fragment to a neighbouring position
(balanced counts per offset, clipped at the chain ends) and then permute
within the target position.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import CouplingSpec, SystemConfig
from .errors import CostGuardError, IncompleteInputError, InvalidConfigError, InvalidDimensionError
from .rng import RngStream, as_generator
from .sphere import sample_orthogonal_fragment_basis, sample_unit_vectors

STREAM_TOPOLOGY = 0
STREAM_WAVEFORMS = 1
STREAM_BITS = 2
STREAM_NOISE = 3

FRAME_MAGIC = b"LMACFRM1"
FRAME_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIIdQBdIIB")
_KINDS = {"none": 0, "simple": 1, "window": 2}


@dataclass
class LiftedTopology:
    """Placement of every fragment.

    ``edge_block[k, j, m]`` is the receive block of fragment m of bit j of
    user k. Bit j sits at chain position ``j // L``.
    """

    K: int
    M: int
    L: int
    positions: int
    edge_block: np.ndarray
    anchored: np.ndarray

    @property
    def n_bits(self) -> int:
        return self.edge_block.shape[1]

    @property
    def n_blocks(self) -> int:
        return self.positions * self.L

    @property
    def n_edges(self) -> int:
        return self.edge_block.size

    def bit_position(self) -> np.ndarray:
        return np.arange(self.n_bits) // self.L

    def fragment_map(self, k: int, j: int) -> list[tuple[int, int]]:
        """(block, slot within block) for each fragment of bit (k, j)."""
        slots = self.slot_index()
        return [(int(self.edge_block[k, j, m]), int(slots[k, j, m])) for m in range(self.M)]

    def slot_index(self) -> np.ndarray:
        flat = self.edge_block.ravel()
        order = np.argsort(flat, kind="stable")
        slot = np.empty_like(flat)
        starts = np.searchsorted(flat[order], flat[order])
        slot[order] = np.arange(flat.size) - starts
        return slot.reshape(self.edge_block.shape)

    def block_degrees(self) -> np.ndarray:
        return np.bincount(self.edge_block.ravel(), minlength=self.n_blocks)

    def incidence(self) -> np.ndarray:
        """Bit-by-block fragment multiplicity matrix, bits ordered (k, j)."""
        A = np.zeros((self.K * self.n_bits, self.n_blocks), dtype=np.int64)
        rows = np.repeat(np.arange(self.K * self.n_bits), self.M)
        np.add.at(A, (rows, self.edge_block.ravel()), 1)
        return A

    def position_fractions(self) -> np.ndarray:
        """P[s, t]: fraction of the fragments of position-s bits that land at position t."""
        T = self.positions
        src = np.broadcast_to(self.bit_position()[None, :, None], self.edge_block.shape).ravel()
        dst = self.edge_block.ravel() // self.L
        P = np.zeros((T, T))
        np.add.at(P, (src, dst), 1.0)
        return P / P.sum(axis=1, keepdims=True)


def _allocate_offsets(count: int, offsets, gen: np.random.Generator) -> np.ndarray:
    """Offsets for ``count`` fragments with per-offset totals as even as the fractions allow."""
    offs = np.array([o for o, _ in offsets])
    frac = np.array([f for _, f in offsets])
    raw = frac * count
    n = np.floor(raw).astype(int)
    rest = count - n.sum()
    if rest:
        order = np.argsort(-(raw - n) + gen.random(len(raw)) * 1e-9)
        n[order[:rest]] += 1
    return gen.permutation(np.repeat(offs, n))


def build_topology(cfg: SystemConfig, rng: RngStream | np.random.Generator) -> LiftedTopology:
    gen = as_generator(rng)
    K, M, L, T = cfg.K, cfg.M, cfg.L, cfg.positions
    coupling = cfg.coupling
    n_bits = T * L
    edge_block = np.empty((K, n_bits, M), dtype=np.int64)
    anchored = np.zeros(n_bits, dtype=bool)
    anchored[: coupling.anchored_prefix * L] = True
    offsets = coupling.offsets()
    for k in range(K):
        if coupling.span == 1:
            for t in range(T):
                perm = gen.permutation(L * M)
                edge_block[k, t * L:(t + 1) * L, :] = (t * L + perm // M).reshape(L, M)
            continue
        target = np.empty((n_bits, M), dtype=np.int64)
        for t in range(T):
            off = _allocate_offsets(L * M, offsets, gen)
            target[t * L:(t + 1) * L] = np.clip(t + off, 0, T - 1).reshape(L, M)
        for t in range(T):
            idx = np.flatnonzero(target.ravel() == t)
            if not len(idx):
                continue
            perm = gen.permutation(len(idx))
            blocks = t * L + (perm % L)
            flat = edge_block[k].reshape(-1)
            flat[idx] = blocks
    return LiftedTopology(K, M, L, T, edge_block, anchored)


def count_short_cycles(topo: LiftedTopology, max_len: int = 4) -> dict[int, int]:
    """Exact number of cycles of each even length 2..max_len in the bit/block multigraph.

    Parallel fragments of one bit in one block count as 2-cycles. Lengths 2
    and 4 use closed forms on the incidence matrix; 6 and 8 use a depth-first
    enumeration weighted by edge multiplicities.
    """
    if max_len > 8:
        raise CostGuardError("cycle enumeration is limited to length 8")
    A = topo.incidence()
    out: dict[int, int] = {}
    if max_len >= 2:
        out[2] = int((A * (A - 1) // 2).sum())
    if max_len >= 4:
        B = A @ A.T
        sq = (A * A) @ (A * A).T
        iu = np.triu_indices(A.shape[0], 1)
        out[4] = int(((B[iu] ** 2 - sq[iu]) // 2).sum())
    for length in (6, 8):
        if max_len >= length:
            out[length] = _dfs_cycles(A, length)
    return out


def _dfs_cycles(A: np.ndarray, length: int) -> int:
    """Simple cycles with ``length`` edges, each counted once, multiplicities multiplied in."""
    n_bits, n_blocks = A.shape
    # Vertices: bits 0..n_bits-1, blocks n_bits.. ; neighbour lists with multiplicity.
    nbrs: list[list[tuple[int, int]]] = [[] for _ in range(n_bits + n_blocks)]
    for u, b in zip(*np.nonzero(A)):
        w = int(A[u, b])
        nbrs[u].append((n_bits + b, w))
        nbrs[n_bits + b].append((int(u), w))
    total = 0
    for start in range(n_bits):
        # The start is the smallest bit index on the cycle; each cycle is seen in both directions.
        stack = [(start, 1, 1, (start,))]
        while stack:
            v, depth, weight, path = stack.pop()
            for w_v, mult in nbrs[v]:
                if depth == length and w_v == start:
                    total += weight * mult
                    continue
                if depth >= length or w_v in path:
                    continue
                if w_v < n_bits and w_v < start:
                    continue
                stack.append((w_v, depth + 1, weight * mult, path + (w_v,)))
    return total // 2


@dataclass
class ReceivedFrame:
    """Received blocks plus the instrumentation needed to score and replay them."""

    cfg: SystemConfig
    seed: int
    blocks: np.ndarray
    true_bits: np.ndarray
    waveforms: np.ndarray
    orthogonal: bool = False

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]


def draw_waveforms(topo: LiftedTopology, N: int, rng, orthogonal: bool = False) -> np.ndarray:
    """Unit waveforms of shape (K, n_bits, M, N)."""
    gen = as_generator(rng)
    K, J, M = topo.edge_block.shape
    if not orthogonal:
        return sample_unit_vectors(N, K * J * M, gen).reshape(K, J, M, N)
    out = np.empty((K, J, M, N))
    for k in range(K):
        eb = topo.edge_block[k].ravel()
        flat = out[k].reshape(J * M, N)
        for b in np.unique(eb):
            idx = np.flatnonzero(eb == b)
            if len(idx) > N:
                raise InvalidDimensionError(
                    f"user {k} has {len(idx)} fragments in block {b}, more than N = {N}"
                )
            flat[idx] = sample_orthogonal_fragment_basis(N, len(idx), gen)
    return out


def draw_bits(cfg: SystemConfig, topo: LiftedTopology, rng) -> np.ndarray:
    gen = as_generator(rng)
    bits = gen.choice(np.array([-1, 1], dtype=np.int8), size=(cfg.K, topo.n_bits))
    bits[:, topo.anchored] = 1
    return bits


def modulate(
    topo: LiftedTopology,
    cfg: SystemConfig,
    bits: np.ndarray,
    rng,
    orthogonal_fragments: bool = False,
    waveforms: np.ndarray | None = None,
    noise_rng=None,
    seed: int = -1,
) -> ReceivedFrame:
    """Superimpose all fragments block by block and add white noise.

    ``rng`` draws the waveforms (unless given); ``noise_rng`` draws the noise
    and defaults to ``rng``. Anchored bits are forced to +1.
    """
    bits = np.asarray(bits)
    if bits.shape != (cfg.K, topo.n_bits):
        raise IncompleteInputError(f"bits must have shape {(cfg.K, topo.n_bits)}, got {bits.shape}")
    if not np.all(np.isin(bits[:, ~topo.anchored], (-1, 1))):
        raise IncompleteInputError("bits must be +1 or -1 at every non-anchored position")
    bits = bits.astype(np.int8).copy()
    bits[:, topo.anchored] = 1
    gen = as_generator(rng)
    if waveforms is None:
        waveforms = draw_waveforms(topo, cfg.N, gen, orthogonal_fragments)
    ngen = gen if noise_rng is None else as_generator(noise_rng)
    amp = bits[:, :, None, None] * (waveforms / math.sqrt(cfg.M))
    blocks = np.zeros((topo.n_blocks, cfg.N))
    np.add.at(blocks, topo.edge_block.ravel(), amp.reshape(-1, cfg.N))
    if cfg.noise_var > 0:
        blocks += math.sqrt(cfg.noise_var) * ngen.standard_normal(blocks.shape)
    return ReceivedFrame(cfg, seed, blocks, bits, waveforms, orthogonal_fragments)


def generate_frame(
    cfg: SystemConfig, seed: int, orthogonal_fragments: bool = False, bits: np.ndarray | None = None,
) -> tuple[LiftedTopology, ReceivedFrame]:
    """Topology, waveforms, bits and noise from four fixed substreams of ``seed``."""
    topo = build_topology(cfg, RngStream(seed, STREAM_TOPOLOGY))
    waves = draw_waveforms(topo, cfg.N, RngStream(seed, STREAM_WAVEFORMS), orthogonal_fragments)
    if bits is None:
        bits = draw_bits(cfg, topo, RngStream(seed, STREAM_BITS))
    frame = modulate(
        topo, cfg, bits, None, orthogonal_fragments, waves, RngStream(seed, STREAM_NOISE), seed,
    )
    return topo, frame


def save_frame(frame: ReceivedFrame, path: str | Path) -> None:
    """Little-endian binary layout: fixed header, float64 blocks, int8 true bits.

    Header fields in order: magic, version, K, N, M, L, T, noise variance,
    seed, coupling kind, a, W, anchored prefix, orthogonal flag. Topology and
    waveforms are not stored; they are regenerated from the seed on load.
    """
    cfg = frame.cfg
    c = cfg.coupling
    if frame.seed < 0:
        raise InvalidConfigError("only seeded frames can be saved (topology is regenerated on load)")
    head = _HEADER.pack(
        FRAME_MAGIC, FRAME_VERSION, cfg.K, cfg.N, cfg.M, cfg.L, c.chain_length, cfg.noise_var,
        frame.seed, _KINDS[c.kind], c.a, c.W, c.anchored_prefix, int(frame.orthogonal),
    )
    buf = io.BytesIO()
    buf.write(head)
    buf.write(np.ascontiguousarray(frame.blocks, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(frame.true_bits, dtype=np.int8).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_frame(path: str | Path) -> tuple[LiftedTopology, ReceivedFrame]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise IncompleteInputError("frame file is truncated")
    (magic, version, K, N, M, L, T, noise_var, seed, kind, a, W, anchored, orth) = _HEADER.unpack_from(raw)
    if magic != FRAME_MAGIC or version != FRAME_VERSION:
        raise IncompleteInputError("not a frame file of a supported version")
    kind_name = {v: k for k, v in _KINDS.items()}[kind]
    cfg = SystemConfig(K, N, M, L, noise_var, CouplingSpec(kind_name, a, W, T, anchored))
    topo = build_topology(cfg, RngStream(seed, STREAM_TOPOLOGY))
    waves = draw_waveforms(topo, N, RngStream(seed, STREAM_WAVEFORMS), bool(orth))
    n_blk = topo.n_blocks * N
    off = _HEADER.size
    need = off + 8 * n_blk + K * topo.n_bits
    if len(raw) != need:
        raise IncompleteInputError(f"frame payload has {len(raw)} bytes, expected {need}")
    blocks = np.frombuffer(raw, dtype="<f8", count=n_blk, offset=off).reshape(topo.n_blocks, N).copy()
    bits = np.frombuffer(raw, dtype=np.int8, count=K * topo.n_bits, offset=off + 8 * n_blk)
    frame = ReceivedFrame(cfg, int(seed), blocks, bits.reshape(K, topo.n_bits).copy(), waves, bool(orth))
    return topo, frame

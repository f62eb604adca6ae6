from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from liftedmac.config import CouplingSpec, SystemConfig
from liftedmac.errors import CostGuardError, IncompleteInputError, InvalidConfigError
from liftedmac.graph import (
    LiftedTopology,
    _dfs_cycles,
    build_topology,
    count_short_cycles,
    generate_frame,
    load_frame,
    modulate,
    save_frame,
)
from liftedmac.rng import RngStream


def _cfg(K=3, N=8, M=2, L=4, noise=0.0, coupling=None):
    return SystemConfig(K, N, M, L, noise, coupling or CouplingSpec())


@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 6), st.integers(0, 10_000))
def test_uncoupled_degrees_are_exact(K, M, L, seed):
    topo = build_topology(_cfg(K=K, M=M, L=L), RngStream(seed))
    assert topo.edge_block.shape == (K, L, M)
    assert np.all(topo.block_degrees() == K * M)
    A = topo.incidence()
    assert np.all(A.sum(axis=1) == M)


def test_identity_topology():
    topo = build_topology(_cfg(K=2, M=1, L=1), RngStream(0))
    assert np.all(topo.edge_block == 0)
    assert topo.fragment_map(1, 0) == [(0, 1)]


@pytest.mark.parametrize("coupling", [CouplingSpec("window", W=1, chain_length=8),
                                      CouplingSpec("simple", a=0.25, chain_length=6, anchored_prefix=1)])
def test_coupled_fragments_stay_in_window(coupling):
    cfg = _cfg(K=2, M=4, L=8, coupling=coupling)
    topo = build_topology(cfg, RngStream(3))
    src = topo.bit_position()[None, :, None]
    dst = topo.edge_block // cfg.L
    lo = min(o for o, _ in coupling.offsets())
    hi = max(o for o, _ in coupling.offsets())
    off = dst - src
    interior = (src + lo >= 0) & (src + hi < cfg.positions)
    interior = np.broadcast_to(interior, off.shape)
    assert off[interior].min() >= lo and off[interior].max() <= hi
    assert topo.anchored[: cfg.L].all() == (coupling.anchored_prefix > 0)


def test_window_fractions_balanced():
    cfg = _cfg(K=1, M=6, L=10, coupling=CouplingSpec("window", W=1, chain_length=9))
    P = build_topology(cfg, RngStream(1)).position_fractions()
    # Interior positions split their fragments evenly over three neighbours.
    for s in range(1, 8):
        assert np.allclose(P[s, s - 1:s + 2], 1 / 3)


def test_cycles_on_complete_bipartite_graphs():
    A3 = np.ones((3, 3), dtype=np.int64)
    A4 = np.ones((4, 4), dtype=np.int64)
    assert _dfs_cycles(A3, 4) == 9
    assert _dfs_cycles(A3, 6) == 6
    assert _dfs_cycles(A3, 8) == 0
    assert _dfs_cycles(A4, 4) == 36
    assert _dfs_cycles(A4, 6) == 96
    assert _dfs_cycles(A4, 8) == 72


def test_tree_has_no_cycles():
    eb = np.array([[[0, 1], [1, 2], [2, 3]]])
    topo = LiftedTopology(1, 2, 4, 1, eb, np.zeros(3, dtype=bool))
    assert count_short_cycles(topo, 8) == {2: 0, 4: 0, 6: 0, 8: 0}


def test_parallel_fragments_counted():
    # A doubled edge is a 2-cycle; walking it twice is not a 4-cycle.
    eb = np.array([[[0, 1], [0, 1], [0, 0]]])
    topo = LiftedTopology(1, 2, 2, 1, eb, np.zeros(3, dtype=bool))
    assert count_short_cycles(topo, 6) == {2: 1, 4: 1, 6: 0}


@settings(max_examples=15)
@given(st.integers(0, 1000))
def test_dfs_matches_closed_form(seed):
    topo = build_topology(_cfg(K=2, M=2, L=3), RngStream(seed))
    A = topo.incidence()
    assert _dfs_cycles(A, 4) == count_short_cycles(topo, 4)[4]


def test_single_block_is_dense_in_cycles():
    topo = build_topology(_cfg(K=3, M=2, L=1), RngStream(0))
    assert count_short_cycles(topo, 4)[2] == 3
    topo = build_topology(_cfg(K=3, M=1, L=1), RngStream(0))
    assert count_short_cycles(topo, 4)[4] == 0
    topo = build_topology(_cfg(K=3, M=2, L=2), RngStream(0))
    assert count_short_cycles(topo, 4)[4] > 0


def test_four_cycles_per_bit_scale_inverse_in_lifting():
    def per_bit(L):
        vals = []
        for s in range(100):
            topo = build_topology(_cfg(K=4, M=4, L=L), RngStream(s))
            vals.append(count_short_cycles(topo, 4)[4] / (4 * L))
        return np.mean(vals)

    ratio = per_bit(64) / per_bit(32)
    assert 0.25 <= ratio <= 0.75


def test_cycle_length_guard():
    topo = build_topology(_cfg(), RngStream(0))
    with pytest.raises(CostGuardError):
        count_short_cycles(topo, 10)


def test_block_assignment_is_uniform_permutation():
    pats = {p: i for i, p in enumerate(itertools.permutations(range(4)))}
    counts = np.zeros(24)
    cfg = _cfg(K=1, M=1, L=4)
    for s in range(10_000):
        counts[pats[tuple(build_topology(cfg, RngStream(s)).edge_block[0, :, 0])]] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


def test_noiseless_single_fragment():
    cfg = _cfg(K=1, N=5, M=1, L=1)
    topo, frame = generate_frame(cfg, 9)
    a = frame.waveforms[0, 0, 0]
    assert np.allclose(frame.blocks[0], frame.true_bits[0, 0] * a)
    assert np.linalg.norm(a) == pytest.approx(1.0)


def test_received_energy_matches_load():
    cfg = _cfg(K=16, N=8, M=4, L=64)
    _, frame = generate_frame(cfg, 2)
    energy = np.mean(np.sum(frame.blocks ** 2, axis=1)) / cfg.N
    assert energy == pytest.approx(cfg.alpha, rel=0.05)


def test_orthogonal_fragments_and_bit_energy():
    cfg = _cfg(K=2, N=6, M=3, L=1)
    topo, frame = generate_frame(cfg, 4, orthogonal_fragments=True)
    w = frame.waveforms / math.sqrt(cfg.M)
    for k in range(cfg.K):
        G = w[k, 0] @ w[k, 0].T
        assert np.allclose(G, np.eye(cfg.M) / cfg.M, atol=1e-12)
        assert np.trace(G) == pytest.approx(1.0)


def test_noise_variance_of_blocks():
    cfg = _cfg(K=1, N=50, M=1, L=200, noise=0.3)
    _, frame = generate_frame(cfg, 5, bits=np.ones((1, 200), dtype=np.int8))
    topo = build_topology(cfg, RngStream(5, 0))
    clean = np.zeros_like(frame.blocks)
    clean[topo.edge_block[0, :, 0]] = frame.waveforms[0, :, 0]
    resid = frame.blocks - clean
    assert resid.var() == pytest.approx(0.3, rel=0.05)


def test_frame_roundtrip(tmp_path):
    cfg = _cfg(K=3, N=8, M=2, L=4, noise=0.1,
               coupling=CouplingSpec("window", W=1, chain_length=5, anchored_prefix=1))
    topo, frame = generate_frame(cfg, 17)
    path = tmp_path / "f.bin"
    save_frame(frame, path)
    topo2, frame2 = load_frame(path)
    assert frame2.cfg == cfg
    assert np.array_equal(topo2.edge_block, topo.edge_block)
    assert np.array_equal(frame2.blocks, frame.blocks)
    assert np.array_equal(frame2.true_bits, frame.true_bits)
    assert np.array_equal(frame2.waveforms, frame.waveforms)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(IncompleteInputError):
        load_frame(path)


def test_unseeded_frame_cannot_be_saved(tmp_path):
    cfg = _cfg()
    topo = build_topology(cfg, RngStream(0))
    frame = modulate(topo, cfg, np.ones((cfg.K, topo.n_bits)), RngStream(1))
    with pytest.raises(InvalidConfigError):
        save_frame(frame, tmp_path / "x.bin")


def test_bad_bits_rejected():
    cfg = _cfg()
    topo = build_topology(cfg, RngStream(0))
    with pytest.raises(IncompleteInputError):
        modulate(topo, cfg, np.ones((cfg.K, topo.n_bits - 1)), RngStream(1))
    bad = np.ones((cfg.K, topo.n_bits))
    bad[0, 0] = 0
    with pytest.raises(IncompleteInputError):
        modulate(topo, cfg, bad, RngStream(1))


def test_anchored_bits_forced_positive():
    cfg = _cfg(coupling=CouplingSpec("simple", a=0.5, chain_length=3, anchored_prefix=1))
    topo = build_topology(cfg, RngStream(0))
    frame = modulate(topo, cfg, -np.ones((cfg.K, topo.n_bits)), RngStream(1))
    assert np.all(frame.true_bits[:, topo.anchored] == 1)
    assert np.all(frame.true_bits[:, ~topo.anchored] == -1)

import copy
import math

import numba
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from torimem.dynamics import (
    DynamicsConfig, Simulation, _advance, attempt_move, run_sweeps, table_for, trajectory_rng,
)
from torimem.lattice import SystemState, apply_flip, build_geometry, recompute_from_scratch
from torimem.potential import CouplingParams, _delta_energy, pair_energy_delta


def test_config_validation():
    with pytest.raises(ValueError):
        DynamicsConfig(T=0)
    with pytest.raises(ValueError):
        DynamicsConfig(T=1, mode="quantum")
    with pytest.raises(ValueError):
        DynamicsConfig(T=1, max_time=0.5)


def test_toric_boson_requires_linear_dispersion():
    with pytest.raises(ValueError):
        table_for(8, CouplingParams(z=3), "toric-boson")
    assert table_for(8, CouplingParams(z=3), "custom-z").z == 3
    assert table_for(8, CouplingParams(), "bare") is None


def test_zero_temperature_limit_never_creates():
    g = build_geometry(6)
    s = SystemState.empty(g)
    cfg = DynamicsConfig(T=1e-3, mode="bare")
    sim = Simulation(s, None, CouplingParams(), cfg)
    _, acc = sim.advance(100_000)
    assert acc == 0 and s.n_defects == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 8), st.integers(0, 2**32 - 1), st.integers(0, 20),
       st.sampled_from(["bare", "toric-boson"]), st.floats(0.05, 3.0))
def test_metropolis_rule_replayed(L, seed, n_pre, mode, T):
    """Each attempt equals the rule applied by hand to a shadow copy of the stream."""
    p = CouplingParams(Delta=0.5)
    g = build_geometry(L)
    table = table_for(L, p, mode)
    rng = np.random.default_rng(seed)
    s = SystemState.empty(g)
    for _ in range(n_pre):
        apply_flip(s, int(rng.integers(g.n_edges)), int(rng.integers(2)))
    s.energy[0] = recompute_from_scratch(s, table, p)[2]
    cfg = DynamicsConfig(T=T, mode=mode)
    stream = trajectory_rng(seed)
    for _ in range(25):
        shadow = copy.deepcopy(stream)
        j = int(shadow.random() * 2 * g.n_edges)
        kind, e = divmod(j, g.n_edges)
        dE = pair_energy_delta(s, table, e, kind, p)
        expect = dE <= 0 or shadow.random() < math.exp(-dE / T)
        before = s.copy()
        _, accepted = attempt_move(s, table, cfg, stream, params=p)
        assert accepted == expect
        if accepted:
            apply_flip(before, e, kind)
        assert s.same_chains(before)
        assert stream.bit_generator.state == shadow.bit_generator.state


@numba.njit
def _cycle_trials(n, L, edge_sites, site_x, site_y, cut_mask, beta, delta, rng, shadow, e_fixed, start_with_pair):
    """Propose/accept counts of the fixed move (x-error on ``e_fixed``) from a fixed start state."""
    n_edges = edge_sites.shape[1]
    n_sites = L * L
    chains = np.zeros((2, n_edges), np.uint8)
    occ = np.full((2, n_sites), -1, np.int64)
    def_site = np.zeros(2 * n_sites, np.int64)
    def_kind = np.zeros(2 * n_sites, np.int64)
    counts = np.zeros(2, np.int64)
    winding = np.zeros(4, np.uint8)
    energy = np.zeros(1)
    info = np.full(8, -1, np.int64)
    series = np.zeros((0, 4))
    proposed = 0
    accepted = 0
    for _ in range(n):
        chains[:] = 0
        occ[:] = -1
        counts[:] = 0
        winding[:] = 0
        if start_with_pair:
            chains[0, e_fixed] = 1
            a = edge_sites[0, e_fixed, 0]
            b = edge_sites[0, e_fixed, 1]
            occ[0, a] = 0
            occ[0, b] = 1
            def_site[0] = a
            def_site[1] = b
            def_kind[0] = 0
            def_kind[1] = 0
            counts[0] = 2
        j = int(shadow.random() * 2 * n_edges)
        kind = 0 if j < n_edges else 1
        e = j - kind * n_edges
        dE, _ = _delta_energy(kind, e, L, edge_sites, site_x, site_y, occ, def_site, def_kind,
                              counts[0] + counts[1], np.zeros((1, 1)), np.zeros((1, 1)), False, delta)
        if dE > 0:
            shadow.random()
        before = chains[0, e_fixed]
        _advance(L, edge_sites, site_x, site_y, cut_mask, np.zeros((1, 1)), np.zeros((1, 1)), False,
                 delta, beta, chains, occ, def_site, def_kind, counts, winding, energy,
                 rng, 1, 0, False, False, 0, info, series, 0)
        if kind == 0 and e == e_fixed:
            proposed += 1
            if chains[0, e_fixed] != before:
                accepted += 1
    return proposed, accepted


def test_detailed_balance_two_state_cycle():
    """Forward/backward acceptance of one pair creation at T = Delta is exp(-2 Delta / T)."""
    L, delta = 2, 1.0
    T = delta
    g = build_geometry(L)
    e_fixed = g.edge_index(1, 0, 1)
    n_edges_choices = 2 * g.n_edges
    trials = 10**6 * n_edges_choices
    out = {}
    for start_with_pair in (False, True):
        rng = trajectory_rng(7, int(start_with_pair))
        shadow = trajectory_rng(7, int(start_with_pair))
        out[start_with_pair] = _cycle_trials(trials, L, g.edge_sites, g.site_x, g.site_y, g.cut_mask,
                                             1.0 / T, delta, rng, shadow, e_fixed, start_with_pair)
    (nf, af), (nb, ab) = out[False], out[True]
    assert nf > 9 * 10**5 and nb > 9 * 10**5
    pf, pb = af / nf, ab / nb
    assert pb == 1.0  # downhill moves are always accepted
    target = math.exp(-2 * delta / T)
    sigma = math.sqrt(target * (1 - target) / nf)
    assert abs(pf / pb - target) < 3 * sigma


def test_zero_cost_hops_always_accepted():
    """Bare mode, one isolated pair, T -> 0: exactly the moves touching the pair are accepted."""
    L = 8
    g = build_geometry(L)
    s = SystemState.empty(g)
    apply_flip(s, g.edge_index(2, 2, 1), 0)
    apply_flip(s, g.edge_index(3, 2, 1), 0)  # plaquettes (1,2) and (3,2)
    cfg = DynamicsConfig(T=1e-4, mode="bare")
    stream = trajectory_rng(3)
    hops = 0
    for _ in range(4000):
        shadow = copy.deepcopy(stream)
        j = int(shadow.random() * 2 * g.n_edges)
        kind, e = divmod(j, g.n_edges)
        dE = pair_energy_delta(s, None, e, kind, CouplingParams())
        _, acc = attempt_move(s, None, cfg, stream)
        if dE == 0:
            hops += 1
            assert acc
        else:
            assert (dE < 0) == acc
        if s.n_defects == 0:
            break
    assert hops > 10


def test_run_sweeps_rejects_zero():
    g = build_geometry(3)
    with pytest.raises(ValueError):
        run_sweeps(SystemState.empty(g), None, DynamicsConfig(T=1.0, mode="bare"), 0)


def test_run_sweeps_attempt_count_and_observers():
    g = build_geometry(4)
    s = SystemState.empty(g)
    seen = []
    series = run_sweeps(s, None, DynamicsConfig(T=0.5, mode="bare"), 10, [lambda t, st: seen.append(t)],
                        every=3)
    assert seen == [3.0, 6.0, 9.0, 10.0]
    assert np.array_equal(series[:, 0], np.arange(1, 11))
    assert series[-1, 1] == s.defect_count_p and series[-1, 2] == s.defect_count_s


@pytest.mark.parametrize("mode", ["bare", "toric-boson"])
def test_identical_seeds_identical_trajectories(mode):
    p = CouplingParams(Delta=0.3)
    runs = []
    for _ in range(2):
        g = build_geometry(6)
        s = SystemState.empty(g)
        ser = run_sweeps(s, table_for(6, p, mode), DynamicsConfig(T=0.4, mode=mode, seed=11), 200, params=p)
        runs.append((s.chains.copy(), ser))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert np.array_equal(runs[0][1], runs[1][1])
    g = build_geometry(6)
    s = SystemState.empty(g)
    other = run_sweeps(s, table_for(6, p, mode), DynamicsConfig(T=0.4, mode=mode, seed=12), 200, params=p)
    assert not np.array_equal(other, runs[0][1])


def test_trajectory_streams_depend_only_on_seed_and_key():
    a = trajectory_rng(5, 1, 2).random(4)
    assert np.array_equal(a, trajectory_rng(5, 1, 2).random(4))
    assert not np.array_equal(a, trajectory_rng(5, 2, 1).random(4))
    assert not np.array_equal(a, trajectory_rng(6, 1, 2).random(4))


def test_energy_drift_after_a_million_accepted_moves():
    L = 8
    p = CouplingParams(Delta=0.5, g_omega=1.4)
    table = table_for(L, p, "toric-boson")
    g = build_geometry(L)
    s = SystemState.empty(g)
    sim = Simulation(s, table, p, DynamicsConfig(T=1.5, mode="toric-boson", seed=4))
    accepted = 0
    while accepted < 10**6:
        accepted += sim.advance(500_000)[1]
    exact = recompute_from_scratch(s, table, p)[2]
    assert s.n_defects > 0
    assert abs(s.cached_energy - exact) < 1e-7


def test_cached_energy_tracks_recompute_in_small_runs():
    L = 4
    p = CouplingParams(Delta=0.8)
    table = table_for(L, p, "toric-boson")
    g = build_geometry(L)
    s = SystemState.empty(g)
    sim = Simulation(s, table, p, DynamicsConfig(T=0.7, seed=9))
    for _ in range(200):
        sim.advance(7)
        exact = recompute_from_scratch(s, table, p)[2]
        assert s.cached_energy == pytest.approx(exact, rel=1e-9, abs=1e-12)


def test_hop_only_dynamics_conserves_defects():
    L = 8
    p = CouplingParams()
    g = build_geometry(L)
    s = SystemState.empty(g)
    apply_flip(s, 0, 0)
    apply_flip(s, 5, 1)
    cfg = DynamicsConfig(T=5.0, conserve_defects=True)
    run_sweeps(s, table_for(L, p, "toric-boson"), cfg, 300, params=p)
    assert s.defect_count_p == 2 and s.defect_count_s == 2


def test_ergodicity_spot_check_L3():
    """From the empty state every even plaquette and star pattern is visited."""
    g = build_geometry(3)
    s = SystemState.empty(g)
    seen_p, seen_s = set(), set()

    def record(_t, st):
        seen_p.add(st.plaquette_defects.tobytes())
        seen_s.add(st.star_defects.tobytes())
    run_sweeps(s, None, DynamicsConfig(T=3.0, mode="bare", seed=1), 20_000, [record])
    assert len(seen_p) == 2**8 and len(seen_s) == 2**8


def test_ergodicity_constructive_path_L3():
    """Any even defect pattern with trivial class is reachable by single flips (shortest-path pairing)."""
    g = build_geometry(3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        target = rng.integers(0, 2, size=g.n_sites).astype(np.uint8)
        if target.sum() % 2:
            target[0] ^= 1
        s = SystemState.empty(g)
        sites = list(np.flatnonzero(target))
        for a, b in zip(sites[::2], sites[1::2]):
            # walk a plaquette defect from a to b one dual step at a time
            (ax, ay), (bx, by) = g.site_coords(a), g.site_coords(b)
            x, y = ax, ay
            while (x, y) != (bx, by):
                if x != bx:
                    apply_flip(s, g.edge_index(x + 1, y, 1), 0)  # crosses to (x+1, y)
                    x = (x + 1) % 3
                else:
                    apply_flip(s, g.edge_index(x, y + 1, 0), 0)
                    y = (y + 1) % 3
        assert np.array_equal(s.plaquette_defects, target)


def test_equilibrium_all_256_chain_states_L2():
    """Visit frequencies of the 2^8 x-chain configurations match Boltzmann weights (chi-square)."""
    L, delta, T = 2, 1.0, 1.0
    g = build_geometry(L)
    s = SystemState.empty(g)
    counts = np.zeros(256)
    weights = 1 << np.arange(8)

    def record(_t, st):
        counts[int(st.xchain @ weights)] += 1
    run_sweeps(s, None, DynamicsConfig(T=T, mode="bare", seed=2), 60_000, [record], every=3)
    chains = (np.arange(256)[:, None] >> np.arange(8)) & 1
    defects = (chains[:, g.site_edges[0]].sum(axis=2) % 2).sum(axis=1)
    expected_p = np.exp(-delta * defects / T)
    expected_p /= expected_p.sum()
    _, pval = stats.chisquare(counts, expected_p * counts.sum())
    assert pval > 1e-3

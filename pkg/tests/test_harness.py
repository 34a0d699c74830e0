import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torimem.dynamics import DynamicsConfig, greedy_correction_parity, table_for
from torimem.harness import (
    InsufficientData, TrajectoryRecord, bare_energy_distribution, bare_exact_density,
    bare_sector_distribution, bootstrap_median, enumerate_bare_sector, equilibrium_density,
    integrated_autocorr_time, lifetime_ensemble, measure_lifetime, min_image_distance,
    pair_confinement_experiment, pair_mean_separation_exact, run_tasks, LifetimeTask, scaling_fit,
    single_pair_winding_excursions, summarize,
)
from torimem.lattice import SystemState, apply_flip, build_geometry
from torimem.potential import CouplingParams, compute_table

P = CouplingParams()


def fake_records(times_by_L, T=0.1):
    out = []
    for L, times in times_by_L.items():
        for i, t in enumerate(times):
            out.append(TrajectoryRecord(L=L, params=P, mode="bare", T=T, seed=0, key=(i,), max_time=1e9,
                                        readout="vacuum", failure_time=t, failure_sector=None if t is None
                                        else "x_h", excursion_time=None, excursion_max_defects=None))
    return out


# --- scaling fits ------------------------------------------------------------


def test_exact_power_law_slope():
    fit = scaling_fit(fake_records({L: [float(L) ** 3] * 20 for L in (8, 12, 16, 24)}))
    assert fit.slope == pytest.approx(3.0, abs=1e-9)
    assert fit.ci_low == pytest.approx(3.0, abs=1e-9) and fit.ci_high == pytest.approx(3.0, abs=1e-9)
    assert fit.censored_fraction == 0.0


def test_constant_lifetime_slope_zero_within_ci():
    rng = np.random.default_rng(0)
    fit = scaling_fit(fake_records({L: list(rng.exponential(5.0, 60)) for L in (8, 16, 32)}))
    assert fit.ci_low <= 0.0 <= fit.ci_high


def test_insufficient_sizes():
    with pytest.raises(InsufficientData):
        scaling_fit(fake_records({8: [1.0] * 30, 16: [2.0] * 30}))


def test_insufficient_uncensored():
    with pytest.raises(InsufficientData):
        scaling_fit(fake_records({8: [1.0] * 19 + [None] * 10, 16: [2.0] * 30, 32: [3.0] * 30}))


def test_mixed_temperatures_rejected():
    recs = fake_records({8: [1.0] * 20}, T=0.1) + fake_records({16: [1.0] * 20, 32: [1.0] * 20}, T=0.2)
    with pytest.raises(ValueError):
        scaling_fit(recs)


def test_censored_majority_point_excluded_but_reported():
    recs = fake_records({8: [8.0] * 25, 12: [12.0] * 25, 16: [16.0] * 25,
                         24: [24.0] * 20 + [None] * 30})
    fit = scaling_fit(recs)
    assert fit.slope == pytest.approx(1.0, abs=1e-9)
    assert [p.censored_fraction for p in fit.points] == [0, 0, 0, 0.6]
    assert math.isinf(fit.points[-1].median)


def test_bootstrap_median_brackets():
    med, lo, hi = bootstrap_median(np.arange(1.0, 102.0))
    assert med == 51.0 and lo < med < hi


# --- lifetimes ---------------------------------------------------------------


def test_zero_temperature_censored():
    rec = measure_lifetime(6, P, DynamicsConfig(T=1e-3, mode="bare", max_time=200))
    assert rec.censored and rec.failure_sector is None and rec.failure_time is None


def test_record_invariants_and_json():
    rec = measure_lifetime(4, CouplingParams(Delta=1.0), DynamicsConfig(T=0.4, mode="bare", max_time=5000),
                           key=(1,), record_every=10)
    assert not rec.censored
    assert rec.failure_time <= rec.max_time
    assert rec.failure_sector in ("x_h", "x_v", "z_h", "z_v")
    assert 0 <= rec.excursion_time <= rec.failure_time
    assert rec.excursion_max_defects >= 2
    js = rec.to_json()
    assert "wall_time" not in js and js["censored"] is False
    assert len(rec.series) >= 1


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6), st.floats(2.0, 60.0))
def test_censoring_is_monotone(seed, short):
    """A shorter horizon only censors more; surviving failure times are unchanged."""
    p = CouplingParams(Delta=1.0)
    long_cfg = DynamicsConfig(T=0.35, mode="bare", seed=seed, max_time=200.0)
    short_cfg = dataclasses.replace(long_cfg, max_time=short)
    for key in range(4):
        a = measure_lifetime(4, p, long_cfg, key=(key,))
        b = measure_lifetime(4, p, short_cfg, key=(key,))
        if b.censored:
            assert a.censored or a.failure_time > short - 1e-9
        else:
            assert a.failure_time == b.failure_time and a.failure_sector == b.failure_sector


def test_workers_do_not_change_results():
    p = CouplingParams(Delta=1.0)
    cfg = DynamicsConfig(T=0.4, mode="bare", seed=3, max_time=300)
    tasks = [LifetimeTask(4, p, cfg, (0, i)) for i in range(6)]
    serial = [r.to_json() for r in run_tasks(tasks, 1)]
    parallel = [r.to_json() for r in run_tasks(tasks, 2)]
    assert serial == parallel


def test_summarize_groups_by_size():
    pts = summarize(fake_records({8: [1.0, 2.0, 3.0], 16: [None, 5.0, 6.0]}))
    assert [(p.L, p.n) for p in pts] == [(8, 3), (16, 3)]
    assert pts[0].median == 2.0 and pts[1].median == 6.0
    assert pts[1].censored_fraction == pytest.approx(1 / 3)


def test_toric_boson_outlives_bare_paired():
    p = CouplingParams(Delta=0.07)
    T = 0.6 * p.t_star
    meds = {}
    for mode in ("bare", "toric-boson"):
        recs = lifetime_ensemble(8, p, DynamicsConfig(T=T, mode=mode, seed=5, max_time=1e5), 30,
                                 readout="greedy", probe_every=0.25)
        meds[mode] = summarize(recs)[0].median
    assert meds["toric-boson"] >= meds["bare"]


# --- greedy decoder ----------------------------------------------------------


@pytest.mark.parametrize("length,fails", [(1, False), (3, False), (5, True), (7, True)])
def test_greedy_decoder_row_chain(length, fails):
    """A string of x-errors crossing the cut is undone the short way round."""
    L = 8
    g = build_geometry(L)
    s = SystemState.empty(g)
    for x in range(length):
        apply_flip(s, g.edge_index((x - 2) % L, 3, 1), 0)
    sites = s.def_site[:s.n_defects].copy()
    p0, p1 = greedy_correction_parity(0, L, g.cut_mask, sites)
    assert ((s.winding[0] ^ p0) == 1) == fails
    assert s.winding[1] ^ p1 == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0, 1]))
def test_greedy_decoder_fixes_sparse_single_errors(seed, kind):
    L = 12
    g = build_geometry(L)
    rng = np.random.default_rng(seed)
    s = SystemState.empty(g)
    picked = []
    for _ in range(200):
        if len(picked) == 4:
            break
        e = int(rng.integers(g.n_edges))
        x, y, _ = g.edge_coords(e)
        if all(min(abs(x - a) % L, L - abs(x - a) % L) + min(abs(y - b) % L, L - abs(y - b) % L) > 5
               for a, b in picked):
            picked.append((x, y))
            apply_flip(s, e, kind)
    sites = np.array([site for k, site in s.defects() if k == kind], dtype=np.int64)
    p0, p1 = greedy_correction_parity(kind, L, g.cut_mask, sites)
    assert (s.winding[2 * kind] ^ p0, s.winding[2 * kind + 1] ^ p1) == (0, 0)


# --- equilibrium -------------------------------------------------------------


@pytest.mark.parametrize("T", [0.5, 1.0, 2.0])
def test_closed_form_matches_enumeration_L2(T):
    assert np.allclose(bare_sector_distribution(2, 1.0, T), enumerate_bare_sector(2, 1.0, T), atol=1e-14)


def test_energy_distribution_normalized():
    d = bare_energy_distribution(2, 1.0, 1.0)
    assert set(d) == {0, 2, 4, 6, 8}
    assert sum(d.values()) == pytest.approx(1.0)


def test_density_L2_matches_exact():
    est = equilibrium_density(2, CouplingParams(Delta=1.0), DynamicsConfig(T=1.0, mode="bare", seed=1),
                              burn_in=100, n_measure=100_000)
    assert abs(est.density - bare_exact_density(2, 1.0, 1.0)) < 3 * est.error


def test_density_large_L_near_independent_plaquettes():
    Delta, T = 1.0, 0.25
    est = equilibrium_density(32, CouplingParams(Delta=Delta), DynamicsConfig(T=T, mode="bare", seed=2),
                              burn_in=200, n_measure=2000)
    indep = math.exp(-Delta / T) / (1 + math.exp(-Delta / T))
    assert est.density == pytest.approx(indep, rel=0.10)
    assert bare_exact_density(32, Delta, T) == pytest.approx(indep, rel=1e-6)


def test_star_density_L8_quarter_gap():
    Delta, T = 1.0, 0.25
    est = equilibrium_density(8, CouplingParams(Delta=Delta), DynamicsConfig(T=T, mode="bare", seed=3),
                              burn_in=200, n_measure=10_000)
    assert est.star_density == pytest.approx(bare_exact_density(8, Delta, T), rel=0.10)


def test_density_warns_on_short_window(monkeypatch):
    import torimem.harness as harness
    monkeypatch.setattr(harness, "integrated_autocorr_time", lambda x: 0.2 * len(x))
    with pytest.warns(RuntimeWarning, match="autocorrelation"):
        equilibrium_density(4, CouplingParams(), DynamicsConfig(T=0.5, mode="bare"), burn_in=0, n_measure=50)


def test_toric_boson_density_below_bare():
    p = CouplingParams(Delta=0.1)
    T = 0.7 * p.t_star
    bare = equilibrium_density(12, p, DynamicsConfig(T=T, mode="bare", seed=4), burn_in=300, n_measure=3000)
    tb = equilibrium_density(12, p, DynamicsConfig(T=T, mode="toric-boson", seed=4), burn_in=300,
                             n_measure=3000)
    assert tb.density + 3 * tb.error < bare.density - 3 * bare.error


def test_autocorr_time_white_noise_and_ar1():
    rng = np.random.default_rng(0)
    assert integrated_autocorr_time(rng.normal(size=20_000)) == pytest.approx(0.5, abs=0.1)
    phi = 0.8
    x = np.zeros(50_000)
    for i in range(1, len(x)):
        x[i] = phi * x[i - 1] + rng.normal()
    assert integrated_autocorr_time(x) == pytest.approx(0.5 * (1 + phi) / (1 - phi), rel=0.15)


# --- confinement -------------------------------------------------------------


def test_min_image_distance():
    d = min_image_distance(6)
    assert d[0, 0] == 0 and d[5, 0] == 1 and d[3, 3] == pytest.approx(math.hypot(3, 3))


def test_exact_separation_limits():
    t = compute_table(16, P)
    r = min_image_distance(16)
    assert pair_mean_separation_exact(t, 1e-4) == pytest.approx(1.0, abs=1e-6)
    assert pair_mean_separation_exact(t, 1e6) == pytest.approx(r[r > 0].mean(), rel=1e-4)


def test_confinement_experiment_mc_matches_exact_small():
    pts = pair_confinement_experiment([8], [P.t_star], P, mc_L=[8], mc_sweeps=20_000, seed=1)
    (pt,) = pts
    assert abs(pt.mean_r_mc - pt.mean_r_exact) < 4 * pt.mc_error


# --- single pair oracle ------------------------------------------------------


def test_single_pair_oracle_windings_are_long_at_larger_L():
    small = np.median(single_pair_winding_excursions(4, 100, seed=1))
    large = np.median(single_pair_winding_excursions(8, 100, seed=1))
    assert large > 2 * small

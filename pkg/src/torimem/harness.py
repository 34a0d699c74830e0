"""Experiment drivers: memory lifetimes, equilibrium densities, pair confinement, scaling fits."""
from __future__ import annotations

import dataclasses
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .dynamics import (
    _F_ATTEMPT, _F_BIT, _F_EXC_MAX, _F_EXC_START,
    DynamicsConfig, Simulation, run_sweeps, table_for, trajectory_rng,
)
from .lattice import WINDING_NAMES, SystemState, apply_flip, build_geometry, recompute_from_scratch
from .potential import CouplingParams, PotentialTable

log = logging.getLogger(__name__)

READOUTS = ("vacuum", "greedy")


class InsufficientData(ValueError):
    """Too few lattice sizes or uncensored trajectories for a fit."""


@dataclass
class TrajectoryRecord:
    L: int
    params: CouplingParams
    mode: str
    T: float
    seed: int
    key: tuple[int, ...]
    max_time: float
    readout: str
    failure_time: float | None  # sweeps; None when censored
    failure_sector: str | None
    excursion_time: float | None  # sweeps since the failing sector last left the vacuum
    excursion_max_defects: int | None
    series: list[tuple[float, int, float]] = field(default_factory=list)  # (sweep, N_d, energy)
    wall_time: float = 0.0

    @property
    def censored(self) -> bool:
        return self.failure_time is None

    def to_json(self) -> dict:
        """JSON-ready dict; wall time is left out so records are reproducible byte for byte."""
        return {
            "L": self.L,
            "T": self.T,
            "mode": self.mode,
            "readout": self.readout,
            "seed": self.seed,
            "key": list(self.key),
            "max_time": self.max_time,
            "censored": self.censored,
            "failure_time": self.failure_time,
            "failure_sector": self.failure_sector,
            "excursion_time": self.excursion_time,
            "excursion_max_defects": self.excursion_max_defects,
            "params": dataclasses.asdict(self.params),
            "series": [list(row) for row in self.series],
        }


def measure_lifetime(L: int, params: CouplingParams, config: DynamicsConfig, seed: int | None = None,
                     *, key: Sequence[int] = (), readout: str = "vacuum", probe_every: float = 1.0,
                     record_every: float | None = None) -> TrajectoryRecord:
    """First time a logical parity is flipped, starting from the ground state.

    ``readout="vacuum"`` checks the winding parities at every instant a sector
    becomes defect-free (exact, no decoder).  ``readout="greedy"`` also
    decodes every ``probe_every`` sweeps with greedy nearest-pair matching, which
    is needed when defect-free instants are rare (large L, high T).
    """
    if readout not in READOUTS:
        raise ValueError(f"readout must be one of {READOUTS}, got {readout!r}")
    t0 = time.perf_counter()
    seed = config.seed if seed is None else int(seed)
    geom = build_geometry(L)
    table = table_for(L, params, config.mode)
    state = SystemState.empty(geom)
    sim = Simulation(state, table, params, config, trajectory_rng(seed, *key))
    per = sim.attempts_per_sweep
    total = int(math.ceil(config.max_time * per))
    probe = int(round(probe_every * per)) if readout == "greedy" else 0
    chunk = total if record_every is None else max(1, int(round(record_every * per)))
    series = []
    while sim.attempts < total and sim.info[_F_ATTEMPT] < 0:
        sim.advance(min(chunk, total - sim.attempts), check_failure=True, probe_every=probe)
        if record_every is not None:
            series.append((sim.time, state.n_defects, state.cached_energy))
    info = sim.info
    failed = info[_F_ATTEMPT] >= 0
    return TrajectoryRecord(
        L=L, params=params, mode=config.mode, T=config.T, seed=seed, key=tuple(key),
        max_time=config.max_time, readout=readout,
        failure_time=info[_F_ATTEMPT] / per if failed else None,
        failure_sector=WINDING_NAMES[info[_F_BIT]] if failed else None,
        excursion_time=(info[_F_ATTEMPT] - info[_F_EXC_START]) / per if failed else None,
        excursion_max_defects=int(info[_F_EXC_MAX]) if failed else None,
        series=series,
        wall_time=time.perf_counter() - t0,
    )


# --- ensembles -------------------------------------------------------------


@dataclass(frozen=True)
class LifetimeTask:
    L: int
    params: CouplingParams
    config: DynamicsConfig
    key: tuple[int, ...]
    readout: str = "vacuum"
    record_every: float | None = None
    probe_every: float = 1.0


def _run_task(task: LifetimeTask) -> TrajectoryRecord:
    return measure_lifetime(task.L, task.params, task.config, key=task.key,
                            readout=task.readout, record_every=task.record_every,
                            probe_every=task.probe_every)


def run_tasks(tasks: Sequence[LifetimeTask], workers: int = 1) -> list[TrajectoryRecord]:
    """Run independent trajectories; output order follows ``tasks`` whatever the worker count."""
    if workers <= 1 or len(tasks) <= 1:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def lifetime_ensemble(L: int, params: CouplingParams, config: DynamicsConfig, n_traj: int, *,
                      point: int = 0, readout: str = "vacuum", probe_every: float = 1.0,
                      workers: int = 1) -> list[TrajectoryRecord]:
    """``n_traj`` trajectories keyed ``(point, i)`` under ``config.seed``."""
    tasks = [LifetimeTask(L, params, config, (point, i), readout, probe_every=probe_every)
             for i in range(n_traj)]
    return run_tasks(tasks, workers)


# --- lifetime statistics ---------------------------------------------------


def _times(records: Iterable[TrajectoryRecord], attr: str = "failure_time") -> np.ndarray:
    return np.array([np.inf if getattr(r, attr) is None else getattr(r, attr) for r in records])


def bootstrap_median(times: np.ndarray, n_boot: int = 2000, level: float = 0.95,
                     seed: int = 0) -> tuple[float, float, float]:
    """Median and percentile bootstrap CI; censored entries are ``inf``."""
    times = np.asarray(times, dtype=float)
    med = float(np.median(times))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(times), size=(n_boot, len(times)))
    meds = np.median(times[idx], axis=1)
    alpha = (1.0 - level) / 2.0
    # no interpolation, so censored (inf) medians never turn into nan
    lo, hi = np.quantile(meds, [alpha, 1.0 - alpha], method="inverted_cdf")
    return med, float(lo), float(hi)


@dataclass
class LifetimePoint:
    L: int
    T: float
    n: int
    median: float
    ci_low: float
    ci_high: float
    censored_fraction: float


def summarize(records: Sequence[TrajectoryRecord], attr: str = "failure_time",
              n_boot: int = 2000) -> list[LifetimePoint]:
    groups: dict[tuple[int, float], list[TrajectoryRecord]] = {}
    for r in records:
        groups.setdefault((r.L, r.T), []).append(r)
    out = []
    for (L, T), rs in sorted(groups.items()):
        t = _times(rs, attr)
        med, lo, hi = bootstrap_median(t, n_boot=n_boot)
        out.append(LifetimePoint(L, T, len(t), med, lo, hi, float(np.mean(np.isinf(t)))))
    return out


@dataclass
class ScalingFit:
    points: list[LifetimePoint]
    slope: float
    slope_stderr: float
    ci_low: float
    ci_high: float
    fraction_nonpositive: float  # bootstrap mass at slope <= 0
    censored_fraction: float

    def to_json(self) -> dict:
        return {
            "points": [dataclasses.asdict(p) for p in self.points],
            "slope": self.slope,
            "slope_stderr": self.slope_stderr,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "fraction_nonpositive": self.fraction_nonpositive,
            "censored_fraction": self.censored_fraction,
        }


def scaling_fit(records: Sequence[TrajectoryRecord], *, min_sizes: int = 3, min_uncensored: int = 20,
                n_boot: int = 2000, seed: int = 0) -> ScalingFit:
    """Least-squares exponent of median lifetime vs L on log-log axes, with bootstrap CI.

    Only sizes whose median is uncensored enter the fit.  Raises
    :class:`InsufficientData` below ``min_sizes`` sizes or ``min_uncensored``
    uncensored trajectories per size.
    """
    temps = {r.T for r in records}
    if len(temps) > 1:
        raise ValueError(f"records mix temperatures {sorted(temps)}; fit one temperature at a time")
    by_L: dict[int, np.ndarray] = {}
    for r in records:
        by_L.setdefault(r.L, [])
        by_L[r.L].append(np.inf if r.failure_time is None else r.failure_time)
    by_L = {L: np.asarray(t, dtype=float) for L, t in sorted(by_L.items())}
    if len(by_L) < min_sizes:
        raise InsufficientData(f"need >= {min_sizes} distinct L, got {len(by_L)}")
    for L, t in by_L.items():
        if np.isfinite(t).sum() < min_uncensored:
            raise InsufficientData(f"L={L}: {int(np.isfinite(t).sum())} uncensored trajectories, "
                                   f"need >= {min_uncensored}")
    T = temps.pop()
    points = []
    for L, t in by_L.items():
        med, lo, hi = bootstrap_median(t, n_boot=n_boot, seed=seed)
        points.append(LifetimePoint(L, T, len(t), med, lo, hi, float(np.mean(np.isinf(t)))))
    usable = [p for p in points if np.isfinite(p.median)]
    if len(usable) < min_sizes:
        raise InsufficientData(f"only {len(usable)} sizes have an uncensored median")
    Ls = np.array([p.L for p in usable], dtype=float)
    x = np.log(Ls)
    slope = float(np.polyfit(x, np.log([p.median for p in usable]), 1)[0])

    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        meds = []
        for L in Ls:
            t = by_L[int(L)]
            meds.append(np.median(t[rng.integers(0, len(t), len(t))]))
        meds = np.asarray(meds)
        boots[b] = np.polyfit(x, np.log(meds), 1)[0] if np.isfinite(meds).all() else np.nan
    ok = boots[np.isfinite(boots)]
    lo, hi = np.quantile(ok, [0.025, 0.975]) if len(ok) else (np.nan, np.nan)
    cens = float(np.mean(np.concatenate([np.isinf(t) for t in by_L.values()])))
    return ScalingFit(points, slope, float(np.std(ok)) if len(ok) else np.nan, float(lo), float(hi),
                      float(np.mean(ok <= 0)) if len(ok) else np.nan, cens)


# --- equilibrium -----------------------------------------------------------


def integrated_autocorr_time(x: np.ndarray, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2 or np.var(x) == 0:
        return 0.5
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    acf = np.fft.irfft(f * np.conjugate(f))[:n]
    acf /= acf[0]
    taus = 2.0 * np.cumsum(acf) - 1.0
    window = np.arange(n) >= c * taus
    m = int(np.argmax(window)) if window.any() else n - 1
    return float(max(0.5 * taus[m], 0.5))


@dataclass
class DensityEstimate:
    density: float  # defects per stabilizer
    error: float
    tau_int: float  # sweeps
    plaquette_density: float
    star_density: float
    n_samples: int


def equilibrium_density(L: int, params: CouplingParams, config: DynamicsConfig, *, burn_in: int = 1000,
                        n_measure: int = 10_000, seed: int | None = None,
                        key: Sequence[int] = ()) -> DensityEstimate:
    """Time-averaged defect density per stabilizer with an autocorrelation-aware error bar."""
    geom = build_geometry(L)
    state = SystemState.empty(geom)
    table = table_for(L, params, config.mode)
    rng = trajectory_rng(config.seed if seed is None else seed, *key)
    if burn_in > 0:
        run_sweeps(state, table, config, burn_in, params=params, rng=rng)
    series = run_sweeps(state, table, config, n_measure, params=params, rng=rng)
    n_sites = geom.n_sites
    rho = (series[:, 1] + series[:, 2]) / (2 * n_sites)
    tau = integrated_autocorr_time(rho)
    if tau > n_measure / 10:
        warnings.warn(f"autocorrelation time {tau:.1f} exceeds a tenth of the {n_measure}-sweep window",
                      RuntimeWarning, stacklevel=2)
    err = float(np.std(rho) * math.sqrt(2 * tau / n_measure))
    return DensityEstimate(float(rho.mean()), err, tau, float(series[:, 1].mean() / n_sites),
                           float(series[:, 2].mean() / n_sites), n_measure)


def bare_sector_distribution(L: int, Delta: float, T: float) -> np.ndarray:
    """P(k defects in one sector) for the bare model, k = 0..L^2.

    Every even defect pattern is reached by the same number of chains, so the
    weights are C(n, k) exp(-k Delta / T) restricted to even k.
    """
    n = L * L
    k = np.arange(n + 1)
    logw = stats.binom.logpmf(k, n, 0.5) - k * Delta / T
    logw[k % 2 == 1] = -np.inf
    w = np.exp(logw - logw.max())
    return w / w.sum()


def enumerate_bare_sector(L: int, Delta: float, T: float) -> np.ndarray:
    """Same distribution as :func:`bare_sector_distribution` by brute force over 2^(2 L^2) chains."""
    geom = build_geometry(L)
    n_e = geom.n_edges
    if n_e > 20:
        raise ValueError("brute-force enumeration only for tiny lattices")
    site_edges = geom.site_edges[0]
    chains = (np.arange(2**n_e)[:, None] >> np.arange(n_e)[None, :]) & 1
    defects = (chains[:, site_edges].sum(axis=2) % 2).sum(axis=1)
    w = np.exp(-Delta * defects / T)
    out = np.bincount(defects, weights=w, minlength=L * L + 1)
    return out / out.sum()


def bare_energy_distribution(L: int, Delta: float, T: float) -> dict[int, float]:
    """Exact P(N_d) for both sectors together (energy = Delta * N_d)."""
    p = bare_sector_distribution(L, Delta, T)
    joint = np.convolve(p, p)
    return {int(k): float(v) for k, v in enumerate(joint) if v > 0}


def bare_exact_density(L: int, Delta: float, T: float) -> float:
    p = bare_sector_distribution(L, Delta, T)
    return float((np.arange(len(p)) * p).sum() / (L * L))


# --- two-particle confinement ----------------------------------------------


def min_image_distance(L: int) -> np.ndarray:
    d = np.arange(L)
    d = np.minimum(d, L - d).astype(float)
    return np.hypot(d[:, None], d[None, :])


def pair_mean_separation_exact(table: PotentialTable, T: float) -> float:
    """<r> for two same-type defects from the exact partition sum over displacements r != 0."""
    r = min_image_distance(table.L)
    mask = r > 0
    e = table.values[mask]
    w = np.exp(-(e - e.min()) / T)
    return float((w * r[mask]).sum() / w.sum())


@dataclass
class SeparationEstimate:
    mean: float
    error: float
    tau_int: float
    n_sweeps: int


def pair_mean_separation_mc(L: int, params: CouplingParams, T: float, *, n_sweeps: int = 50_000,
                            burn_in: int = 2_000, seed: int = 0,
                            key: Sequence[int] = ()) -> SeparationEstimate:
    """<r> from hop-only Metropolis dynamics of one plaquette pair."""
    geom = build_geometry(L)
    table = table_for(L, params, "toric-boson" if params.z == 1 else "custom-z")
    state = SystemState.empty(geom)
    apply_flip(state, geom.edge_index(0, 0, 1), 0)
    state.energy[0] = recompute_from_scratch(state, table, params)[2]
    config = DynamicsConfig(T=T, mode="toric-boson", seed=seed, conserve_defects=True)
    rng = trajectory_rng(seed, *key)
    dist = min_image_distance(L)
    samples = []

    def observe(_t, st):
        a, b = st.def_site[0], st.def_site[1]
        samples.append(dist[(a % L - b % L) % L, (a // L - b // L) % L])

    run_sweeps(state, table, config, burn_in, params=params, rng=rng)
    run_sweeps(state, table, config, n_sweeps, [observe], params=params, rng=rng)
    r = np.asarray(samples)
    tau = integrated_autocorr_time(r)
    return SeparationEstimate(float(r.mean()), float(r.std() * math.sqrt(2 * tau / len(r))), tau, n_sweeps)


@dataclass
class ConfinementPoint:
    L: int
    T: float
    mean_r_exact: float
    mean_r_mc: float | None = None
    mc_error: float | None = None


def pair_confinement_experiment(L_list: Sequence[int], T_list: Sequence[float], params: CouplingParams, *,
                                mc_L: Sequence[int] = (), mc_sweeps: int = 50_000,
                                seed: int = 0) -> list[ConfinementPoint]:
    """Mean pair separation vs (L, T); exact everywhere, plus MC for sizes in ``mc_L``."""
    out = []
    for i, L in enumerate(L_list):
        table = table_for(L, params, "toric-boson" if params.z == 1 else "custom-z")
        for j, T in enumerate(T_list):
            pt = ConfinementPoint(L, T, pair_mean_separation_exact(table, T))
            if L in mc_L:
                est = pair_mean_separation_mc(L, params, T, n_sweeps=mc_sweeps, seed=seed + 1000 * i + j)
                pt.mean_r_mc, pt.mc_error = est.mean, est.error
            out.append(pt)
    return out


# --- single-pair random-walk oracle ----------------------------------------


def single_pair_winding_excursions(L: int, n_wind: int, seed: int = 0, max_tries: int = 10**7) -> np.ndarray:
    """Durations (sweeps) of winding excursions of one free plaquette pair.

    Two walkers on the L x L plaquette torus under the same attempt clock as
    the lattice dynamics (``4 L^2`` attempts per sweep, each hitting a given
    x-type edge with probability ``1 / (4 L^2)``).  Hops are always accepted
    in the bare model; meeting across the shared edge annihilates the pair.
    Only excursions that end with an odd winding are returned.  Written
    against plain coordinates, independent of the lattice/kernel code.
    """
    rng = np.random.default_rng(seed)
    per = 4 * L * L
    steps = ((1, 0), (-1, 0), (0, 1), (0, -1))
    out: list[float] = []
    for _ in range(max_tries):
        # creation: uniformly random edge; its two plaquettes are the walkers
        x, y = int(rng.integers(L)), int(rng.integers(L))
        if rng.random() < 0.5:  # vertical edge at (x, y): plaquettes (x-1, y), (x, y)
            pos = [[(x - 1) % L, y], [x, y]]
            wx, wy = (1 if x == 0 else 0), 0
        else:  # horizontal edge at (x, y): plaquettes (x, y-1), (x, y)
            pos = [[x, (y - 1) % L], [x, y]]
            wx, wy = 0, (1 if y == 0 else 0)
        t = 0
        while True:
            # 8 (walker, direction) moves, 7 distinct edges when adjacent
            moves = []
            shared = None
            for w in (0, 1):
                for dx, dy in steps:
                    nx, ny = (pos[w][0] + dx) % L, (pos[w][1] + dy) % L
                    if [nx, ny] == pos[1 - w]:
                        if shared is None:
                            shared = (w, dx, dy)
                            moves.append((w, dx, dy))
                        continue
                    moves.append((w, dx, dy))
            t += int(rng.geometric(len(moves) / per))
            w, dx, dy = moves[int(rng.integers(len(moves)))]
            ox, oy = pos[w]
            nx, ny = (ox + dx) % L, (oy + dy) % L
            if dx and ((ox == L - 1 and dx == 1) or (ox == 0 and dx == -1)):
                wx ^= 1
            if dy and ((oy == L - 1 and dy == 1) or (oy == 0 and dy == -1)):
                wy ^= 1
            if [nx, ny] == pos[1 - w]:
                break
            pos[w] = [nx, ny]
        if wx or wy:
            out.append(t / per)
            if len(out) >= n_wind:
                return np.asarray(out)
    raise RuntimeError("too few winding excursions")

"""Single-spin-flip Metropolis dynamics at temperature T.

One attempt picks an (edge, error kind) pair uniformly out of ``2 * N_edges``
and accepts with probability ``min(1, exp(-dE / T))``.  One sweep is
``2 * N_edges`` attempts; every time in this package is measured in sweeps.

Randomness comes from a ``numpy.random.Generator`` (PCG64) that the compiled
kernel advances in place, so a trajectory is a pure function of its seed.
Per-trajectory streams are derived with :func:`trajectory_rng`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np

from .lattice import SystemState
from .potential import _EMPTY, CouplingParams, PotentialTable, _delta_energy, cached_table
from .lattice import _flip

MODES = ("bare", "toric-boson", "custom-z")

# failure-info slots written by the kernel
_F_ATTEMPT, _F_BIT, _F_EXC_START, _F_EXC_MAX = 0, 1, 2, 3
_EXC0, _EXC1, _MAX0, _MAX1 = 4, 5, 6, 7  # per sector: excursion start, max defects since
_INFO_LEN = 8


@dataclass(frozen=True)
class DynamicsConfig:
    T: float
    mode: str = "toric-boson"
    seed: int = 0
    max_time: float = 1000.0  # sweeps
    conserve_defects: bool = False  # hop-only moves

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"temperature must be positive, got {self.T!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.max_time >= 1:
            raise ValueError(f"max_time must be >= 1 sweep, got {self.max_time!r}")


def trajectory_rng(master_seed: int, *key: int) -> np.random.Generator:
    """PCG64 stream for one trajectory.

    The stream is ``SeedSequence(master_seed, spawn_key=key)``, i.e. numpy's
    hash-based mixing of the master seed with the trajectory key.  It depends
    only on ``(master_seed, key)``, never on which worker runs it.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def table_for(L: int, params: CouplingParams, mode: str) -> PotentialTable | None:
    """Pair table used by ``mode``; ``None`` for the bare toric code."""
    if mode == "bare":
        return None
    if mode == "toric-boson" and params.z != 1:
        raise ValueError("toric-boson mode uses linear dispersion; set mode = custom-z for z != 1")
    return cached_table(int(L), params)


# --- compiled kernel -------------------------------------------------------


@numba.njit(cache=True)
def _min_image(d, L):
    d = d % L
    if d > L // 2:
        d -= L
    return d


@numba.njit(cache=True)
def _step_edge(kind, x, y, axis, sgn, L):
    """Edge crossed when a defect of ``kind`` steps from (x, y) along ``axis``."""
    n = L * L
    if kind == 0:  # plaquettes: dual steps cross the shared edge
        if axis == 0:
            xx = (x + 1) % L if sgn > 0 else x
            return n + y * L + xx
        yy = (y + 1) % L if sgn > 0 else y
        return yy * L + x
    if axis == 0:  # stars: primal steps run along the edge
        xx = x if sgn > 0 else (x - 1) % L
        return y * L + xx
    yy = y if sgn > 0 else (y - 1) % L
    return n + yy * L + x


@numba.njit(cache=True)
def greedy_correction_parity(kind, L, cut_mask, sites):
    """Winding parities of a greedy nearest-pair matching of ``sites``.

    Pairs are taken in order of increasing torus Manhattan distance and joined
    by an L-shaped shortest path (x first, then y).  Returns the two cut
    parities of the correction chain for the sector of ``kind``.
    """
    m = sites.shape[0]
    npairs = m * (m - 1) // 2
    dist = np.empty(npairs, dtype=np.int64)
    pi = np.empty(npairs, dtype=np.int64)
    pj = np.empty(npairs, dtype=np.int64)
    t = 0
    for i in range(m):
        for j in range(i + 1, m):
            dx = _min_image(sites[j] % L - sites[i] % L, L)
            dy = _min_image(sites[j] // L - sites[i] // L, L)
            # tie-break on index keeps the matching deterministic
            dist[t] = (abs(dx) + abs(dy)) * npairs + t
            pi[t] = i
            pj[t] = j
            t += 1
    order = np.argsort(dist)
    used = np.zeros(m, dtype=np.uint8)
    b = 2 * kind
    p0 = 0
    p1 = 0
    for q in order:
        i = pi[q]
        j = pj[q]
        if used[i] or used[j]:
            continue
        used[i] = 1
        used[j] = 1
        x = sites[i] % L
        y = sites[i] // L
        dx = _min_image(sites[j] % L - x, L)
        dy = _min_image(sites[j] // L - y, L)
        sx = 1 if dx > 0 else -1
        for _ in range(abs(dx)):
            e = _step_edge(kind, x, y, 0, sx, L)
            p0 ^= cut_mask[b, e]
            p1 ^= cut_mask[b + 1, e]
            x = (x + sx) % L
        sy = 1 if dy > 0 else -1
        for _ in range(abs(dy)):
            e = _step_edge(kind, x, y, 1, sy, L)
            p0 ^= cut_mask[b, e]
            p1 ^= cut_mask[b + 1, e]
            y = (y + sy) % L
    return p0, p1


@numba.njit(cache=True)
def _greedy_failure(kind, L, cut_mask, occ, def_site, def_kind, counts, winding):
    n = counts[0] + counts[1]
    sites = np.empty(counts[kind], dtype=np.int64)
    t = 0
    for i in range(n):
        if def_kind[i] == kind:
            sites[t] = def_site[i]
            t += 1
    p0, p1 = greedy_correction_parity(kind, L, cut_mask, sites)
    w0 = winding[2 * kind] ^ p0
    w1 = winding[2 * kind + 1] ^ p1
    if w0:
        return 2 * kind
    if w1:
        return 2 * kind + 1
    return -1


@numba.njit(cache=True)
def _advance(L, edge_sites, site_x, site_y, cut_mask, u, ucross, interacting, delta, beta,
             chains, occ, def_site, def_kind, counts, winding, energy,
             rng, n_attempts, attempt0, conserve, check_failure, probe_every,
             info, series, rec_stride):
    """Run up to ``n_attempts`` attempts; returns (attempts done, accepted).

    With ``check_failure`` the run stops at the first defect-free instant of a
    sector whose winding is nontrivial; ``probe_every > 0`` additionally
    decodes both sectors greedily every ``probe_every`` attempts.
    Series rows (attempt, N_p, N_s, energy) are written every ``rec_stride``
    global attempts while rows remain.
    """
    n_edges = edge_sites.shape[1]
    n_choices = 2 * n_edges
    accepted = 0
    n_rec = series.shape[0]
    rec = 0
    # next multiples of the strides, tracked without integer division in the loop
    next_probe = (attempt0 // probe_every + 1) * probe_every if probe_every > 0 else 0
    next_rec = (attempt0 // rec_stride + 1) * rec_stride if rec_stride > 0 else 0
    for i in range(n_attempts):
        glob = attempt0 + i + 1
        # floor(U * n) is uniform to ~1e-12 for these n and 10x cheaper than integers()
        j = int(rng.random() * n_choices)
        kind = 0 if j < n_edges else 1
        e = j - kind * n_edges
        n_def = counts[0] + counts[1]
        dE, dN = _delta_energy(kind, e, L, edge_sites, site_x, site_y, occ, def_site, def_kind,
                               n_def, u, ucross, interacting, delta)
        ok = True
        if conserve and dN != 0:
            ok = False
        elif dE > 0.0:
            ok = rng.random() < math.exp(-beta * dE)
        if ok:
            accepted += 1
            c0 = counts[kind]
            _flip(kind, e, edge_sites, cut_mask, chains, occ, def_site, def_kind, counts, winding)
            energy[0] += dE
            c = counts[kind]
            if c0 == 0:
                # sector leaves the vacuum: a new excursion starts
                info[4 + kind] = glob
                info[6 + kind] = c
            elif c > info[6 + kind]:
                info[6 + kind] = c
            if c == 0 and check_failure and (winding[2 * kind] or winding[2 * kind + 1]):
                info[_F_ATTEMPT] = glob
                info[_F_BIT] = 2 * kind if winding[2 * kind] else 2 * kind + 1
                info[_F_EXC_START] = info[4 + kind]
                info[_F_EXC_MAX] = info[6 + kind]
                return i + 1, accepted
        if check_failure and probe_every > 0 and glob >= next_probe:
            next_probe += probe_every
            for k in range(2):
                if counts[k] > 0:
                    bit = _greedy_failure(k, L, cut_mask, occ, def_site, def_kind, counts, winding)
                    if bit >= 0:
                        info[_F_ATTEMPT] = glob
                        info[_F_BIT] = bit
                        info[_F_EXC_START] = info[4 + k]
                        info[_F_EXC_MAX] = info[6 + k]
                        return i + 1, accepted
        if rec_stride > 0 and rec < n_rec and glob >= next_rec:
            next_rec += rec_stride
            series[rec, 0] = glob
            series[rec, 1] = counts[0]
            series[rec, 2] = counts[1]
            series[rec, 3] = energy[0]
            rec += 1
    return n_attempts, accepted


_NO_SERIES = np.zeros((0, 4))


class Simulation:
    """Binds a state, its table and an RNG stream to the compiled kernel."""

    def __init__(self, state: SystemState, table: PotentialTable | None, params: CouplingParams,
                 config: DynamicsConfig, rng: np.random.Generator | None = None):
        self.state = state
        self.table = table
        self.params = params
        self.config = config
        self.rng = rng if rng is not None else trajectory_rng(config.seed)
        self.attempts = 0
        self.info = np.zeros(_INFO_LEN, dtype=np.int64)
        self.info[_F_ATTEMPT] = -1
        self.info[_F_BIT] = -1
        self._u = _EMPTY if table is None else table.values
        self._uc = _EMPTY if table is None else table.cross

    @property
    def attempts_per_sweep(self) -> int:
        return 2 * self.state.geometry.n_edges

    @property
    def time(self) -> float:
        return self.attempts / self.attempts_per_sweep

    def advance(self, n_attempts: int, *, check_failure=False, probe_every=0,
                series=None, rec_stride=0) -> tuple[int, int]:
        s = self.state
        g = s.geometry
        done, acc = _advance(
            g.L, g.edge_sites, g.site_x, g.site_y, g.cut_mask, self._u, self._uc, self.table is not None,
            float(self.params.Delta), 1.0 / self.config.T,
            s.chains, s.occ, s.def_site, s.def_kind, s.counts, s.winding, s.energy,
            self.rng, int(n_attempts), self.attempts, self.config.conserve_defects,
            bool(check_failure), int(probe_every), self.info,
            _NO_SERIES if series is None else series, int(rec_stride),
        )
        self.attempts += done
        return done, acc


def attempt_move(state: SystemState, table: PotentialTable | None, config: DynamicsConfig,
                 rng: np.random.Generator, params: CouplingParams | None = None) -> tuple[SystemState, bool]:
    """One Metropolis attempt; mutates ``state`` on acceptance."""
    sim = Simulation(state, table, params or CouplingParams(), config, rng)
    _, acc = sim.advance(1)
    return state, bool(acc)


Observer = Callable[[float, SystemState], None]


def run_sweeps(state: SystemState, table: PotentialTable | None, config: DynamicsConfig, n_sweeps: int,
               observers: Sequence[Observer] = (), *, every: int = 1,
               params: CouplingParams | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Run ``n_sweeps`` sweeps, calling each observer as ``obs(time, state)`` every ``every`` sweeps.

    Returns the per-sweep series ``(sweep, N_p, N_s, energy)``.
    """
    if int(n_sweeps) != n_sweeps or n_sweeps < 1:
        raise ValueError(f"n_sweeps must be a positive integer, got {n_sweeps!r}")
    if every < 1:
        raise ValueError("observer interval must be >= 1 sweep")
    sim = Simulation(state, table, params or CouplingParams(), config,
                     rng if rng is not None else trajectory_rng(config.seed))
    per = sim.attempts_per_sweep
    series = np.zeros((int(n_sweeps), 4))
    done = 0
    while done < n_sweeps:
        chunk = min(every, n_sweeps - done) if observers else n_sweeps - done
        sim.advance(chunk * per, series=series[done:done + chunk], rec_stride=per)
        done += chunk
        for obs in observers:
            obs(sim.time, state)
    series[:, 0] /= per
    return series

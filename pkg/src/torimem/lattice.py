"""L x L periodic square lattice: edges, stars, plaquettes, error chains and homology.

Conventions
-----------
Edges are indexed ``e = o * L**2 + y * L + x`` with ``o = 0`` for the horizontal
edge ``(x, y) -> (x + 1, y)`` and ``o = 1`` for the vertical edge
``(x, y) -> (x, y + 1)``.  Vertices (stars) and faces (plaquettes) share the
site index ``s = y * L + x``; plaquette ``(x, y)`` is the face whose lower-left
corner is vertex ``(x, y)``.

An x-error (sigma^x) on an edge toggles the two plaquettes containing it, a
z-error (sigma^z) toggles its two end stars.  Sector 0 holds x-chains and
plaquette defects, sector 1 holds z-chains and star defects.

Winding parities are stored as four bits ``(x_h, x_v, z_h, z_v)``: the parity
of the x-chain (z-chain) on the cut that detects a horizontal (vertical)
non-contractible loop.  Cuts sit on the ``x = 0`` and ``y = 0`` lines.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

X_ERROR = 0
Z_ERROR = 1
KINDS = {"x": X_ERROR, "z": Z_ERROR}

WINDING_NAMES = ("x_h", "x_v", "z_h", "z_v")


class DefectsPresent(RuntimeError):
    """Homology was queried for a sector that still contains defects."""


@dataclass(frozen=True, eq=False)
class LatticeGeometry:
    L: int
    edge_sites: np.ndarray = field(repr=False)  # (2, N_edges, 2): [kind, edge] -> two sites
    site_edges: np.ndarray = field(repr=False)  # (2, L*L, 4): [kind, site] -> boundary edges
    cut_mask: np.ndarray = field(repr=False)  # (4, N_edges) uint8, one row per winding bit
    site_x: np.ndarray = field(repr=False)
    site_y: np.ndarray = field(repr=False)

    @property
    def n_edges(self) -> int:
        return 2 * self.L * self.L

    @property
    def n_sites(self) -> int:
        return self.L * self.L

    def edge_index(self, x: int, y: int, orientation: int) -> int:
        L = self.L
        return orientation * L * L + (y % L) * L + (x % L)

    def edge_coords(self, e: int) -> tuple[int, int, int]:
        L = self.L
        o, rem = divmod(int(e), L * L)
        y, x = divmod(rem, L)
        return x, y, o

    def site_index(self, x: int, y: int) -> int:
        return (y % self.L) * self.L + (x % self.L)

    def site_coords(self, s: int) -> tuple[int, int]:
        y, x = divmod(int(s), self.L)
        return x, y

    def cut_edges(self, bit: int) -> np.ndarray:
        return np.flatnonzero(self.cut_mask[bit])

    def plaquette_boundary(self, x: int, y: int) -> list[int]:
        h, v = 0, 1
        return [
            self.edge_index(x, y, h),
            self.edge_index(x, y + 1, h),
            self.edge_index(x, y, v),
            self.edge_index(x + 1, y, v),
        ]

    def star_boundary(self, x: int, y: int) -> list[int]:
        h, v = 0, 1
        return [
            self.edge_index(x, y, h),
            self.edge_index(x - 1, y, h),
            self.edge_index(x, y, v),
            self.edge_index(x, y - 1, v),
        ]


def build_geometry(L: int) -> LatticeGeometry:
    """Index maps and homology cuts for the L x L torus (``L >= 2``)."""
    if int(L) != L or L < 2:
        raise ValueError(f"lattice size must be an integer >= 2, got {L!r}")
    L = int(L)
    n = L * L
    edge_sites = np.empty((2, 2 * n, 2), dtype=np.int64)
    cut_mask = np.zeros((4, 2 * n), dtype=np.uint8)
    for y in range(L):
        for x in range(L):
            h = y * L + x
            v = n + h
            # plaquettes touched by an x-error
            edge_sites[X_ERROR, h] = (y * L + x, ((y - 1) % L) * L + x)
            edge_sites[X_ERROR, v] = (y * L + x, y * L + (x - 1) % L)
            # stars touched by a z-error
            edge_sites[Z_ERROR, h] = (y * L + x, y * L + (x + 1) % L)
            edge_sites[Z_ERROR, v] = (y * L + x, ((y + 1) % L) * L + x)
            if x == 0:
                cut_mask[0, v] = 1  # x-chain, horizontal winding
                cut_mask[2, h] = 1  # z-chain, horizontal winding
            if y == 0:
                cut_mask[1, h] = 1  # x-chain, vertical winding
                cut_mask[3, v] = 1  # z-chain, vertical winding

    site_edges = np.empty((2, n, 4), dtype=np.int64)
    fill = np.zeros((2, n), dtype=np.int64)
    for kind in (X_ERROR, Z_ERROR):
        for e in range(2 * n):
            for s in edge_sites[kind, e]:
                site_edges[kind, s, fill[kind, s]] = e
                fill[kind, s] += 1
    assert (fill == 4).all()
    site_x = np.arange(n, dtype=np.int64) % L
    site_y = np.arange(n, dtype=np.int64) // L
    for arr in (edge_sites, site_edges, cut_mask, site_x, site_y):
        arr.setflags(write=False)
    return LatticeGeometry(L, edge_sites, site_edges, cut_mask, site_x, site_y)


@dataclass(eq=False)
class SystemState:
    """Error chains plus the defect bookkeeping derived from them.

    ``occ[k, s]`` is the position of defect ``(k, s)`` in the dense defect
    list (``-1`` when empty).  ``def_site``/``def_kind`` hold that list; its
    length is ``counts.sum()``.  ``energy`` is a one-element array so compiled
    kernels can update it in place.
    """

    geometry: LatticeGeometry
    chains: np.ndarray
    occ: np.ndarray
    def_site: np.ndarray
    def_kind: np.ndarray
    counts: np.ndarray
    winding: np.ndarray
    energy: np.ndarray

    @classmethod
    def empty(cls, geometry: LatticeGeometry) -> "SystemState":
        n = geometry.n_sites
        return cls(
            geometry=geometry,
            chains=np.zeros((2, geometry.n_edges), dtype=np.uint8),
            occ=np.full((2, n), -1, dtype=np.int64),
            def_site=np.zeros(2 * n, dtype=np.int64),
            def_kind=np.zeros(2 * n, dtype=np.int64),
            counts=np.zeros(2, dtype=np.int64),
            winding=np.zeros(4, dtype=np.uint8),
            energy=np.zeros(1, dtype=np.float64),
        )

    def copy(self) -> "SystemState":
        return SystemState(
            self.geometry,
            *(a.copy() for a in (self.chains, self.occ, self.def_site, self.def_kind,
                                 self.counts, self.winding, self.energy)),
        )

    @property
    def xchain(self) -> np.ndarray:
        return self.chains[X_ERROR]

    @property
    def zchain(self) -> np.ndarray:
        return self.chains[Z_ERROR]

    @property
    def plaquette_defects(self) -> np.ndarray:
        return (self.occ[X_ERROR] >= 0).astype(np.uint8)

    @property
    def star_defects(self) -> np.ndarray:
        return (self.occ[Z_ERROR] >= 0).astype(np.uint8)

    @property
    def defect_count_p(self) -> int:
        return int(self.counts[X_ERROR])

    @property
    def defect_count_s(self) -> int:
        return int(self.counts[Z_ERROR])

    @property
    def n_defects(self) -> int:
        return int(self.counts.sum())

    @property
    def cached_energy(self) -> float:
        return float(self.energy[0])

    def defects(self) -> list[tuple[int, int]]:
        """(kind, site) pairs in list order."""
        n = self.n_defects
        return [(int(k), int(s)) for k, s in zip(self.def_kind[:n], self.def_site[:n])]

    def same_chains(self, other: "SystemState") -> bool:
        return bool(np.array_equal(self.chains, other.chains))


class HomologyClass(NamedTuple):
    x_h: int
    x_v: int
    z_h: int
    z_v: int

    @property
    def trivial(self) -> bool:
        return not any(self)


# --- compiled primitives ---------------------------------------------------


@numba.njit(cache=True)
def _toggle_site(kind, s, occ, def_site, def_kind, counts):
    slot = occ[kind, s]
    n = counts[0] + counts[1]
    if slot < 0:
        def_site[n] = s
        def_kind[n] = kind
        occ[kind, s] = n
        counts[kind] += 1
    else:
        last = n - 1
        ls = def_site[last]
        lk = def_kind[last]
        def_site[slot] = ls
        def_kind[slot] = lk
        occ[lk, ls] = slot
        occ[kind, s] = -1
        counts[kind] -= 1


@numba.njit(cache=True)
def _flip(kind, e, edge_sites, cut_mask, chains, occ, def_site, def_kind, counts, winding):
    chains[kind, e] ^= 1
    _toggle_site(kind, edge_sites[kind, e, 0], occ, def_site, def_kind, counts)
    _toggle_site(kind, edge_sites[kind, e, 1], occ, def_site, def_kind, counts)
    b = 2 * kind
    winding[b] ^= cut_mask[b, e]
    winding[b + 1] ^= cut_mask[b + 1, e]


# --- public operations -----------------------------------------------------


def apply_flip(state: SystemState, edge: int, kind: int | str) -> SystemState:
    """Apply one error to ``edge`` in place and return the state.

    Only chains, defects and windings are touched; ``cached_energy`` belongs to
    the dynamics (see :func:`torimem.potential.pair_energy_delta`).
    """
    k = KINDS[kind] if isinstance(kind, str) else int(kind)
    g = state.geometry
    if not 0 <= edge < g.n_edges:
        raise IndexError(f"edge {edge} out of range for L={g.L}")
    _flip(k, int(edge), g.edge_sites, g.cut_mask, state.chains, state.occ,
          state.def_site, state.def_kind, state.counts, state.winding)
    return state


def chain_defects(geometry: LatticeGeometry, chain: np.ndarray, kind: int) -> np.ndarray:
    """Defect field (per site) of an error chain, from scratch."""
    chain = np.asarray(chain, dtype=np.int64)
    return (chain[geometry.site_edges[kind]].sum(axis=1) % 2).astype(np.uint8)


def chain_winding(geometry: LatticeGeometry, chain: np.ndarray, kind: int) -> tuple[int, int]:
    chain = np.asarray(chain, dtype=np.int64)
    b = 2 * kind
    return (int(chain @ geometry.cut_mask[b] % 2), int(chain @ geometry.cut_mask[b + 1] % 2))


def homology_class(state: SystemState, sectors: tuple[int, ...] = (X_ERROR, Z_ERROR)) -> HomologyClass:
    """Winding parities of the error chains.

    Only meaningful for defect-free sectors; asking about a sector with
    defects raises :class:`DefectsPresent`.  Bits of sectors not in
    ``sectors`` are reported as 0.
    """
    bits = [0, 0, 0, 0]
    for k in sectors:
        if state.counts[k]:
            raise DefectsPresent(
                f"sector {'xz'[k]} has {int(state.counts[k])} defects; homology is undefined"
            )
        bits[2 * k] = int(state.winding[2 * k])
        bits[2 * k + 1] = int(state.winding[2 * k + 1])
    return HomologyClass(*bits)


def state_from_chains(geometry: LatticeGeometry, xchain=None, zchain=None) -> SystemState:
    """Build a state by flipping every set edge of the given chains (energy left at 0)."""
    state = SystemState.empty(geometry)
    for k, chain in ((X_ERROR, xchain), (Z_ERROR, zchain)):
        if chain is None:
            continue
        for e in np.flatnonzero(np.asarray(chain)):
            apply_flip(state, int(e), k)
    return state


def recompute_from_scratch(state: SystemState, table=None, params=None):
    """Defect fields and total energy, ignoring every cache.

    Returns ``(plaquette_defects, star_defects, energy)`` where the energy is
    ``Delta * N_d + sum over defect pairs of u(r)``.  ``table=None`` means the
    bare model (no pair interaction); ``params=None`` means ``Delta = 1``.
    """
    g = state.geometry
    p = chain_defects(g, state.chains[X_ERROR], X_ERROR)
    s = chain_defects(g, state.chains[Z_ERROR], Z_ERROR)
    delta = 1.0 if params is None else params.Delta
    energy = delta * float(p.sum() + s.sum())
    if table is not None:
        L = g.L
        ps, ss = np.flatnonzero(p), np.flatnonzero(s)
        for a, b, tab, same in ((ps, ps, table.values, True), (ss, ss, table.values, True),
                                (ps, ss, table.cross, False)):
            if len(a) == 0 or len(b) == 0:
                continue
            dx = (a[:, None] % L - b[None, :] % L) % L
            dy = (a[:, None] // L - b[None, :] // L) % L
            pair = tab[dx, dy]
            energy += float(np.triu(pair, 1).sum() if same else pair.sum())
    return p, s, energy

"""Phonon-mediated defect-defect potential on the discrete torus.

The pair kernel is the periodic lattice Green's function

    u_raw(r) = -(g_omega^2 / V) * sum_{k != 0} exp(i k.r) / omega_k^2,
    omega_k^2 = v_omega^2 * [(2 - 2 cos k_x) + (2 - 2 cos k_y)]^z,

with ``V = L**2`` and ``k = 2 pi n / L``.  The simulated table is
``u = u_raw - u_raw(1, 0)`` so that nearest neighbours cost nothing and
``u(r) ~ c ln r`` with ``c = g_omega^2 / (2 pi v_omega^2)`` for ``z = 1``.

The in-plane sector (couplings g_Omega, v_Omega) only shifts every pair by a
constant and adds a contact term; with g_Omega tuned those pieces reduce to a
per-defect chemical potential that is compensated exactly, so the dynamics
uses ``H_eff = Delta * N_d + sum_pairs u(r)``.  :func:`verify_decomposition`
checks that bookkeeping against the Fourier-space form of the energy.
"""
from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .lattice import SystemState


@dataclass(frozen=True)
class CouplingParams:
    """Model couplings in lattice units (``a = 1``, ``k_B = 1``).

    ``xi_L=None`` means "use the system size"; ``g_Omega=None`` means "use the
    tuned value" for whatever L the params are evaluated at.
    """

    Delta: float = 1.0
    g_omega: float = 1.0
    v_omega: float = 1.0
    g_Omega: float | None = None
    v_Omega: float = 1.0
    xi_L: float | None = None
    a: float = 1.0
    z: int = 1

    def __post_init__(self):
        for name in ("Delta", "g_omega", "v_omega", "v_Omega", "a"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a positive finite number, got {val!r}")
        if self.g_Omega is not None and not (math.isfinite(self.g_Omega) and self.g_Omega >= 0):
            raise ValueError(f"g_Omega must be nonnegative, got {self.g_Omega!r}")
        if self.xi_L is not None and not (math.isfinite(self.xi_L) and self.xi_L > 0):
            raise ValueError(f"xi_L must be positive, got {self.xi_L!r}")
        if int(self.z) != self.z or self.z < 1:
            raise ValueError(f"dispersion exponent z must be an integer >= 1, got {self.z!r}")

    @property
    def G(self) -> float:
        """Newton constant 1 / (2 pi v_omega^2)."""
        return 1.0 / (2.0 * math.pi * self.v_omega**2)

    @property
    def m(self) -> float:
        return self.g_omega

    @property
    def c(self) -> float:
        """Log prefactor g_omega^2 / (2 pi v_omega^2) (= G m^2)."""
        return self.g_omega**2 / (2.0 * math.pi * self.v_omega**2)

    @property
    def t_star(self) -> float:
        """Two-particle confinement temperature c / 2."""
        return 0.5 * self.c

    def xi(self, L: int) -> float:
        return float(L) if self.xi_L is None else float(self.xi_L)

    def g_Omega_at(self, L: int) -> float:
        return tuned_g_Omega(self, L) if self.g_Omega is None else float(self.g_Omega)


@dataclass(frozen=True, eq=False)
class PotentialTable:
    """``values[dx % L, dy % L]`` is the pair energy at displacement (dx, dy)."""

    L: int
    values: np.ndarray = field(repr=False)
    raw_zero_mode_constant: float
    c: float
    z: int = 1
    cross: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.cross is None:
            object.__setattr__(self, "cross", smeared_cross_table(self.values))

    def __call__(self, dx: int, dy: int) -> float:
        return float(self.values[dx % self.L, dy % self.L])

    @property
    def raw(self) -> np.ndarray:
        """Unnormalized u_raw; sums to zero over the torus."""
        return self.values + self.raw_zero_mode_constant

    def dump_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dx", "dy", "u"])
            for dx in range(self.L):
                for dy in range(self.L):
                    w.writerow([dx, dy, repr(float(self.values[dx, dy]))])
        return path


def smeared_cross_table(values: np.ndarray) -> np.ndarray:
    """Plaquette-star pair energy with the plaquette smeared over its 4 corners.

    ``cross[dx, dy]`` is for a plaquette with index ``(px, py)`` and a star at
    ``(px - dx, py - dy)``; the plaquette centre sits half a cell up-right of
    its index, so the nearest pair has ``cross[0, 0]``.
    """
    cross = 0.25 * (values + np.roll(values, -1, axis=0) + np.roll(values, -1, axis=1)
                    + np.roll(np.roll(values, -1, axis=0), -1, axis=1))
    cross.setflags(write=False)
    return cross


def laplacian_eigenvalues(L: int) -> np.ndarray:
    """(2 - 2 cos k_x) + (2 - 2 cos k_y) on the L x L momentum grid, [n_x, n_y]."""
    k = 2.0 * np.pi * np.arange(L) / L
    one = 2.0 - 2.0 * np.cos(k)
    return one[:, None] + one[None, :]


def _inverse_dispersion(L: int, params: CouplingParams) -> np.ndarray:
    lam = laplacian_eigenvalues(L)
    lam[0, 0] = 1.0
    inv = 1.0 / (params.v_omega**2 * lam ** int(params.z))
    inv[0, 0] = 0.0  # k = 0 excluded
    return inv


def compute_table(L: int, params: CouplingParams) -> PotentialTable:
    if int(L) != L or L < 2:
        raise ValueError(f"lattice size must be an integer >= 2, got {L!r}")
    L = int(L)
    inv = _inverse_dispersion(L, params)
    # ifft2 carries the 1/V and the +ik.r sign
    raw = -(params.g_omega**2) * np.fft.ifft2(inv).real
    # FFT rounding breaks the lattice symmetries at 1e-17; read every entry
    # from its canonical representative (|dx| <= |dy| <= L/2) so they hold exactly
    fold = np.minimum(np.arange(L), L - np.arange(L))
    fx, fy = np.meshgrid(fold, fold, indexing="ij")
    raw = raw[np.minimum(fx, fy), np.maximum(fx, fy)]
    shift = float(raw[1 % L, 0])
    values = raw - shift
    values.setflags(write=False)
    return PotentialTable(L, values, shift, params.c, int(params.z))


@functools.lru_cache(maxsize=64)
def cached_table(L: int, params: CouplingParams) -> PotentialTable:
    """Memoized :func:`compute_table`; tables are immutable so sharing is safe."""
    return compute_table(L, params)


def tuned_g_Omega(params: CouplingParams, L: int) -> float:
    """In-plane coupling that cancels the constant pair shift.

    g_Omega^2 / v_Omega^2 = (g_omega^2 / v_omega^2) (L^2 / 2 pi) ln(xi_L / a)
    """
    xi = params.xi(L)
    if xi < params.a:
        raise ValueError(f"xi_L ({xi}) must exceed the lattice constant ({params.a})")
    ratio = (params.g_omega / params.v_omega) ** 2 * (L * L / (2.0 * math.pi)) * math.log(xi / params.a)
    return params.v_Omega * math.sqrt(ratio)


def chemical_compensation(params: CouplingParams, L: int) -> float:
    """Per-defect chemical potential left by the tuned in-plane sector.

    (g_omega^2 / v_omega^2) (1 / 4 pi) V ln(xi_L / a) * delta_reg(0), with the
    contact term regularized to one defect per cell, ``delta_reg(0) = 1 / a^2``.
    A pair carries twice this amount.
    """
    xi = params.xi(L)
    if xi < params.a:
        raise ValueError(f"xi_L ({xi}) must exceed the lattice constant ({params.a})")
    delta0 = 1.0 / params.a**2
    return (params.g_omega / params.v_omega) ** 2 / (4.0 * math.pi) * (L * L) * math.log(xi / params.a) * delta0


@dataclass(frozen=True)
class Decomposition:
    direct: float
    table: float
    self_energy: float  # per defect, removed from both sides
    pair_shift: float  # constant added to every non-coincident pair beyond the table
    discrepancy: float  # relative

    def __iter__(self):
        return iter((self.direct, self.table))


def _direct_k_energy(positions: np.ndarray, L: int, params: CouplingParams, g_Omega: float) -> float:
    """-(1/V) sum_{k != 0} |rho(k)|^2 [g^2 / 2 omega^2 + g_O^2 |k|^2 / 2 Omega^2], by explicit sums."""
    k = 2.0 * np.pi * np.arange(L) / L
    kx, ky = np.meshgrid(k, k, indexing="ij")
    phase = kx[..., None] * positions[:, 0] + ky[..., None] * positions[:, 1]
    rho_re = np.cos(phase).sum(axis=-1)
    rho_im = np.sin(phase).sum(axis=-1)
    rho2 = rho_re**2 + rho_im**2
    lam = laplacian_eigenvalues(L)
    mask = np.ones((L, L), dtype=bool)
    mask[0, 0] = False
    omega2 = params.v_omega**2 * lam[mask] ** int(params.z)
    Omega2 = params.v_Omega**2 * lam[mask]
    kernel = params.g_omega**2 / (2.0 * omega2) + g_Omega**2 * lam[mask] / (2.0 * Omega2)
    return float(-(rho2[mask] * kernel).sum() / (L * L))


def verify_decomposition(positions, L: int, params: CouplingParams) -> Decomposition:
    """Compare the Fourier-space defect energy with the pairwise table form.

    ``positions`` are integer grid points (duplicates allowed: coincident
    star/plaquette defects).  Both numbers exclude the identical per-defect
    self-energy ``(u_raw(0) + V_Omega(0)) / 2``.
    """
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2) % L
    n = len(pos)
    table = compute_table(L, params)
    gO = params.g_Omega_at(L)
    gO2 = (gO / params.v_Omega) ** 2
    V = L * L
    raw = table.raw
    # in-plane kernel in real space: -(gO^2/vO^2) (delta_{r,0} - 1/V)
    omega_self = -gO2 * (1.0 - 1.0 / V)
    self_energy = 0.5 * (raw[0, 0] + omega_self)
    pair_shift = table.raw_zero_mode_constant + gO2 / V
    if n == 0:
        return Decomposition(0.0, 0.0, self_energy, pair_shift, 0.0)

    direct = _direct_k_energy(pos, L, params, gO) - n * self_energy

    tab = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = pos[i] - pos[j]
            tab += table.values[dx % L, dy % L] + pair_shift
            if dx % L == 0 and dy % L == 0:
                tab -= gO2
    scale = max(abs(direct), abs(tab), abs(n * self_energy), 1e-300)
    return Decomposition(direct, tab, self_energy, pair_shift, abs(direct - tab) / scale)


def effective_xi(table: PotentialTable, params: CouplingParams) -> float:
    """xi_L at which the tuned in-plane shift cancels the lattice pair constant exactly."""
    return params.a * math.exp(-table.raw_zero_mode_constant / params.c)


# --- incremental energy ----------------------------------------------------

_EMPTY = np.zeros((1, 1))


@numba.njit(cache=True)
def _wrap(d, L):
    return d + L if d < 0 else d


@numba.njit(cache=True)
def _delta_energy(kind, e, L, edge_sites, site_x, site_y, occ, def_site, def_kind, n_def,
                  u, ucross, interacting, delta):
    a = edge_sites[kind, e, 0]
    b = edge_sites[kind, e, 1]
    ia = occ[kind, a]
    ib = occ[kind, b]
    sa = 1 if ia < 0 else -1
    sb = 1 if ib < 0 else -1
    dE = delta * (sa + sb)
    if not interacting:
        return dE, sa + sb
    ax = site_x[a]
    ay = site_y[a]
    bx = site_x[b]
    by = site_y[b]
    Sa = 0.0
    Sb = 0.0
    for i in range(n_def):
        if i == ia or i == ib:
            continue
        s = def_site[i]
        ox = site_x[s]
        oy = site_y[s]
        if def_kind[i] == kind:
            Sa += u[_wrap(ax - ox, L), _wrap(ay - oy, L)]
            Sb += u[_wrap(bx - ox, L), _wrap(by - oy, L)]
        elif kind == 0:
            Sa += ucross[_wrap(ax - ox, L), _wrap(ay - oy, L)]
            Sb += ucross[_wrap(bx - ox, L), _wrap(by - oy, L)]
        else:
            Sa += ucross[_wrap(ox - ax, L), _wrap(oy - ay, L)]
            Sb += ucross[_wrap(ox - bx, L), _wrap(oy - by, L)]
    dE += sa * Sa + sb * Sb + 0.5 * (sa + sb) * u[_wrap(ax - bx, L), _wrap(ay - by, L)]
    return dE, sa + sb


def pair_energy_delta(state: SystemState, table: PotentialTable | None, edge: int, kind: int,
                      params: CouplingParams) -> float:
    """Energy change of flipping ``edge`` with an error of ``kind`` (state untouched)."""
    g = state.geometry
    u = _EMPTY if table is None else table.values
    uc = _EMPTY if table is None else table.cross
    dE, _ = _delta_energy(int(kind), int(edge), g.L, g.edge_sites, g.site_x, g.site_y,
                          state.occ, state.def_site,
                          state.def_kind, state.n_defects, u, uc, table is not None, float(params.Delta))
    return float(dE)

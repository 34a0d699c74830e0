"""Thermal stability of a toric-code memory whose defects interact through a logarithmic potential."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .dynamics import DynamicsConfig, Simulation, attempt_move, run_sweeps, trajectory_rng
from .harness import (
    InsufficientData, ScalingFit, TrajectoryRecord, equilibrium_density, lifetime_ensemble,
    measure_lifetime, pair_confinement_experiment, scaling_fit,
)
from .lattice import (
    DefectsPresent, HomologyClass, LatticeGeometry, SystemState, apply_flip, build_geometry,
    homology_class, recompute_from_scratch,
)
from .potential import (
    CouplingParams, PotentialTable, compute_table, pair_energy_delta, tuned_g_Omega, verify_decomposition,
)

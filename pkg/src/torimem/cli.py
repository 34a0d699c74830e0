"""``torimem <config-file> [--workers N] [--out DIR] [--seed S]``

Exit status: 0 success, 1 verification failed, 2 config error,
3 insufficient data for a fit, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, config_dict, parse_config, serialize_config
from .dynamics import DynamicsConfig, table_for, trajectory_rng
from .harness import (
    InsufficientData, LifetimeTask, equilibrium_density, pair_mean_separation_exact,
    pair_mean_separation_mc, run_tasks, scaling_fit, summarize,
)
from .potential import verify_decomposition

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA, EXIT_IO = 0, 1, 2, 3, 4
DECOMPOSITION_TOL = 1e-8


def _clean(value: Any) -> Any:
    """Make a value strict-JSON safe (non-finite floats become null)."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, (np.floating, np.integer)):
        return _clean(value.item())
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def _jsonl(path: Path, rows: Sequence[dict]) -> None:
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(_clean(row), sort_keys=True, allow_nan=False) + "\n")


def _csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _dyn(cfg: ExperimentConfig, T: float, **kw) -> DynamicsConfig:
    return DynamicsConfig(T=T, mode=cfg.mode, seed=cfg.seed, max_time=cfg.max_time, **kw)


# --- experiment kinds --------------------------------------------------------


def _lifetime_scaling(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    params = cfg.params
    tasks = []
    for j, T in enumerate(cfg.temperatures):
        for i, L in enumerate(cfg.L):
            point = j * len(cfg.L) + i
            tasks += [LifetimeTask(L, params, _dyn(cfg, T), (point, k), cfg.readout,
                                   probe_every=cfg.probe_every) for k in range(cfg.trajectories)]
    records = run_tasks(tasks, workers)
    _jsonl(out / "records.jsonl", [r.to_json() for r in records])
    points = summarize(records)
    _csv(out / "summary.csv", ["L", "T", "median", "CI_low", "CI_high", "censored_fraction", "n"],
         [(p.L, p.T, p.median, p.ci_low, p.ci_high, p.censored_fraction, p.n) for p in points])
    fits, status = [], EXIT_OK
    for T in cfg.temperatures:
        group = [r for r in records if r.T == T]
        try:
            fit = scaling_fit(group, seed=cfg.seed)
        except InsufficientData as exc:
            print(f"T={T!r}: insufficient data for a scaling fit: {exc}", file=sys.stderr)
            fits.append({"T": T, "error": str(exc)})
            status = EXIT_DATA
            continue
        fits.append({"T": T, **fit.to_json()})
        print(f"T={T:.6g}: slope {fit.slope:.4g} [{fit.ci_low:.4g}, {fit.ci_high:.4g}], "
              f"censored {fit.censored_fraction:.3f}")
    _jsonl(out / "fits.jsonl", fits)
    return status


def _density_point(arg):
    cfg, L, T, point = arg
    est = equilibrium_density(L, cfg.params, _dyn(cfg, T), burn_in=cfg.burn_in,
                              n_measure=cfg.n_sweeps, key=(point,))
    indep = math.exp(-cfg.Delta / T) / (1.0 + math.exp(-cfg.Delta / T))
    return {"L": L, "T": T, "mode": cfg.mode, **dataclasses.asdict(est), "independent_plaquette": indep}


def _density_vs_T(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    items = [(cfg, L, T, j * len(cfg.L) + i)
             for j, T in enumerate(cfg.temperatures) for i, L in enumerate(cfg.L)]
    rows = _pool_map(_density_point, items, workers)
    _jsonl(out / "records.jsonl", rows)
    keys = ["L", "T", "density", "error", "tau_int", "independent_plaquette"]
    _csv(out / "summary.csv", keys, [[r[k] for k in keys] for r in rows])
    return EXIT_OK


def _confinement_point(arg):
    cfg, L, T, point = arg
    row = {"L": L, "T": T, "T_over_t_star": T / cfg.params.t_star,
           "mean_r_exact": pair_mean_separation_exact(table_for(L, cfg.params, _pair_mode(cfg)), T),
           "mean_r_mc": None, "mc_error": None, "tau_int": None}
    if L in cfg.mc_L:
        est = pair_mean_separation_mc(L, cfg.params, T, n_sweeps=cfg.n_sweeps, burn_in=cfg.burn_in,
                                      seed=cfg.seed, key=(point,))
        row.update(mean_r_mc=est.mean, mc_error=est.error, tau_int=est.tau_int)
    return row


def _pair_mode(cfg: ExperimentConfig) -> str:
    return "toric-boson" if cfg.z == 1 else "custom-z"


def _pair_confinement(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    items = [(cfg, L, T, j * len(cfg.L) + i)
             for j, T in enumerate(cfg.temperatures) for i, L in enumerate(cfg.L)]
    rows = _pool_map(_confinement_point, items, workers)
    _jsonl(out / "records.jsonl", rows)
    keys = ["L", "T", "mean_r_exact", "mean_r_mc", "mc_error"]
    _csv(out / "summary.csv", keys, [[r[k] for k in keys] for r in rows])
    growth = []
    Lmin, Lmax = min(cfg.L), max(cfg.L)
    if Lmax > Lmin:
        for T in cfg.temperatures:
            r = {row["L"]: row["mean_r_exact"] for row in rows if row["T"] == T}
            growth.append({"T": T, "L_ratio": Lmax / Lmin, "mean_r_ratio": r[Lmax] / r[Lmin]})
    _jsonl(out / "fits.jsonl", growth)
    return EXIT_OK


def _table_dump(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    for L in cfg.L:
        path = table_for(L, cfg.params, _pair_mode(cfg)).dump_csv(out / f"table_L{L}.csv")
        print(f"wrote {path}")
    return EXIT_OK


def _verify_decomposition(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    rows = []
    for L in cfg.L:
        for k in range(cfg.configurations):
            rng = trajectory_rng(cfg.seed, L, k)
            pos = rng.integers(0, L, size=(cfg.defects, 2))
            dec = verify_decomposition(pos, L, cfg.params)
            rows.append({"L": L, "index": k, "defects": cfg.defects, "direct": dec.direct,
                         "table": dec.table, "discrepancy": dec.discrepancy})
    _jsonl(out / "records.jsonl", rows)
    worst = max(r["discrepancy"] for r in rows)
    print(f"max relative discrepancy {worst:.3e}")
    return EXIT_OK if worst < DECOMPOSITION_TOL else EXIT_VERIFY


RUNNERS = {
    "lifetime-scaling": _lifetime_scaling,
    "density-vs-T": _density_vs_T,
    "pair-confinement": _pair_confinement,
    "table-dump": _table_dump,
    "verify-decomposition": _verify_decomposition,
}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> int:
    """Run ``cfg`` into ``cfg.out``; returns the exit status.

    Result files depend only on the config; wall time and timestamps go to
    ``manifest.json`` alone.
    """
    workers = cfg.workers if workers is None else workers
    out = Path(cfg.out)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))
    status = RUNNERS[cfg.kind](cfg, out, workers)
    manifest = {
        "config": config_dict(cfg),
        "seed": cfg.seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "workers": workers,
        "started": started.isoformat(),
        "wall_time": time.perf_counter() - t0,
        "exit_status": status,
    }
    (out / "manifest.json").write_text(json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n")
    return status


def _workers_from_env() -> int | None:
    raw = os.environ.get("TORIMEM_WORKERS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TORIMEM_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"TORIMEM_WORKERS must be >= 1, got {n}")
    return n


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="torimem", description="Toric-code memory lifetime experiments.")
    ap.add_argument("config", help="flat 'key = value' experiment file")
    ap.add_argument("--workers", type=int, help="worker processes (default: $TORIMEM_WORKERS, then config)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    args = ap.parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"torimem: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text)
        overrides = {}
        if args.out is not None:
            overrides["out"] = args.out
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError(f"--seed must be nonnegative, got {args.seed}")
            overrides["seed"] = args.seed
        workers = args.workers if args.workers is not None else _workers_from_env()
        if workers is not None:
            if workers < 1:
                raise ConfigError(f"--workers must be >= 1, got {workers}")
            overrides["workers"] = workers
        cfg = dataclasses.replace(cfg, **overrides)
    except ConfigError as exc:
        print(f"torimem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run_experiment(cfg)
    except OSError as exc:
        print(f"torimem: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

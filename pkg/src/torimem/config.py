"""Flat ``key = value`` experiment configuration.

One assignment per line, ``#`` starts a comment, lists are comma separated.
Every key has a default except ``kind``, ``L`` and (for the dynamical kinds)
``T``.  Parsing materializes all defaults, so ``serialize_config`` echoes the
complete run description and ``parse_config(serialize_config(c)) == c``.

Keys
----
kind            lifetime-scaling | density-vs-T | pair-confinement | table-dump | verify-decomposition
L               lattice sizes, e.g. ``8, 16, 32``
T               temperatures, in units of ``T_unit``
T_unit          absolute | t_star | delta  (default absolute)
Delta, g_omega, v_omega, v_Omega, a, z       couplings
g_Omega         number or ``tuned``  (default tuned)
xi_L            number or ``L``  (default L, the system size)
mode            bare | toric-boson | custom-z  (default toric-boson)
trajectories    trajectories per (L, T) point  (default 50)
max_time        lifetime censoring horizon in sweeps  (default 10000)
readout         vacuum | greedy  (default vacuum)
probe_every     greedy decoding interval in sweeps  (default 1)
seed            master seed  (default 0)
workers         worker processes  (default 1)
out             output directory  (default results)
burn_in         equilibration sweeps for density and MC runs  (default 1000)
n_sweeps        measurement sweeps for density and MC runs  (default 10000)
mc_L            sizes that also get hop-only MC in pair-confinement  (default none)
configurations  random defect sets per size in verify-decomposition  (default 100)
defects         defects per random set in verify-decomposition  (default 6)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Any, Callable

from .dynamics import MODES
from .harness import READOUTS
from .potential import CouplingParams

KINDS = ("lifetime-scaling", "density-vs-T", "pair-confinement", "table-dump", "verify-decomposition")
T_UNITS = ("absolute", "t_star", "delta")
NEEDS_T = ("lifetime-scaling", "density-vs-T", "pair-confinement")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownKey(ConfigError):
    pass


class ConfigTypeError(ConfigError, TypeError):
    pass


class RangeError(ConfigError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    L: tuple[int, ...]
    T: tuple[float, ...] = ()
    T_unit: str = "absolute"
    Delta: float = 1.0
    g_omega: float = 1.0
    v_omega: float = 1.0
    g_Omega: float | None = None
    v_Omega: float = 1.0
    xi_L: float | None = None
    a: float = 1.0
    z: int = 1
    mode: str = "toric-boson"
    trajectories: int = 50
    max_time: float = 10_000.0
    readout: str = "vacuum"
    probe_every: float = 1.0
    seed: int = 0
    workers: int = 1
    out: str = "results"
    burn_in: int = 1000
    n_sweeps: int = 10_000
    mc_L: tuple[int, ...] = ()
    configurations: int = 100
    defects: int = 6

    @property
    def params(self) -> CouplingParams:
        return CouplingParams(Delta=self.Delta, g_omega=self.g_omega, v_omega=self.v_omega,
                              g_Omega=self.g_Omega, v_Omega=self.v_Omega, xi_L=self.xi_L,
                              a=self.a, z=self.z)

    @property
    def temperatures(self) -> tuple[float, ...]:
        """``T`` converted to absolute units."""
        scale = {"absolute": 1.0, "t_star": self.params.t_star, "delta": self.Delta}[self.T_unit]
        return tuple(t * scale for t in self.T)


# --- value codecs ------------------------------------------------------------


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise TypeError(f"expected an integer, got {text!r}") from None


def _float(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise TypeError(f"expected a number, got {text!r}") from None
    if not math.isfinite(val):
        raise TypeError(f"expected a finite number, got {text!r}")
    return val


def _list(item: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        parts = [p.strip() for p in text.split(",")]
        if parts == [""]:
            return ()
        return tuple(item(p) for p in parts)
    return parse


def _optional(word: str) -> Callable[[str], float | None]:
    def parse(text: str) -> float | None:
        return None if text == word else _float(text)
    return parse


def _text(text: str) -> str:
    return text


_PARSERS: dict[str, Callable[[str], Any]] = {
    "kind": _text, "L": _list(_int), "T": _list(_float), "T_unit": _text,
    "Delta": _float, "g_omega": _float, "v_omega": _float, "g_Omega": _optional("tuned"),
    "v_Omega": _float, "xi_L": _optional("L"), "a": _float, "z": _int,
    "mode": _text, "trajectories": _int, "max_time": _float, "readout": _text,
    "probe_every": _float, "seed": _int, "workers": _int, "out": _text,
    "burn_in": _int, "n_sweeps": _int, "mc_L": _list(_int), "configurations": _int, "defects": _int,
}
_NONE_WORDS = {"g_Omega": "tuned", "xi_L": "L"}


def _format(name: str, value: Any) -> str:
    if value is None:
        return _NONE_WORDS[name]
    if isinstance(value, tuple):
        return ", ".join(_format(name, v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# --- validation --------------------------------------------------------------


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


_CHECKS: dict[str, tuple[Callable[[Any], bool], str]] = {
    "kind": (lambda v: v in KINDS, f"one of {', '.join(KINDS)}"),
    "L": (lambda v: len(v) > 0 and all(x >= 2 for x in v), "a nonempty list of sizes >= 2"),
    "T": (lambda v: all(x > 0 for x in v), "positive temperatures"),
    "T_unit": (lambda v: v in T_UNITS, f"one of {', '.join(T_UNITS)}"),
    "Delta": (_positive, "positive"),
    "g_omega": (_positive, "positive"),
    "v_omega": (_positive, "positive"),
    "g_Omega": (lambda v: v is None or v >= 0, "nonnegative or 'tuned'"),
    "v_Omega": (_positive, "positive"),
    "xi_L": (lambda v: v is None or v > 0, "positive or 'L'"),
    "a": (_positive, "positive"),
    "z": (lambda v: v >= 1, "an integer >= 1"),
    "mode": (lambda v: v in MODES, f"one of {', '.join(MODES)}"),
    "trajectories": (lambda v: v >= 1, ">= 1"),
    "max_time": (_positive, "positive"),
    "readout": (lambda v: v in READOUTS, f"one of {', '.join(READOUTS)}"),
    "probe_every": (_positive, "positive"),
    "seed": (_nonneg, "nonnegative"),
    "workers": (lambda v: v >= 1, ">= 1"),
    "out": (lambda v: len(v) > 0, "a nonempty path"),
    "burn_in": (_nonneg, "nonnegative"),
    "n_sweeps": (lambda v: v >= 1, ">= 1"),
    "mc_L": (lambda v: all(x >= 2 for x in v), "sizes >= 2"),
    "configurations": (lambda v: v >= 1, ">= 1"),
    "defects": (lambda v: v >= 0, "nonnegative"),
}


def _check_combined(cfg: ExperimentConfig, lines: dict[str, int]) -> None:
    if cfg.kind in NEEDS_T and not cfg.T:
        raise ConfigError(f"kind {cfg.kind} needs a nonempty T list", lines.get("T"))
    if cfg.mode == "toric-boson" and cfg.z != 1:
        raise RangeError("toric-boson mode needs z = 1 (use custom-z)", lines.get("z", lines.get("mode")))
    if cfg.xi_L is not None and cfg.xi_L < cfg.a:
        raise RangeError("xi_L must be at least the lattice spacing a", lines.get("xi_L"))
    if cfg.kind == "verify-decomposition":
        too_many = [L for L in cfg.L if cfg.defects > 2 * L * L]
        if too_many:
            raise RangeError(f"defects exceeds 2 L^2 for L = {too_many[0]}", lines.get("defects"))


# --- public API --------------------------------------------------------------


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; errors carry the 1-based line number."""
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise UnknownKey(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno)
        try:
            parsed = _PARSERS[key](value)
        except TypeError as exc:
            raise ConfigTypeError(f"{key}: {exc}", lineno) from None
        ok, expected = _CHECKS[key]
        if not ok(parsed):
            raise RangeError(f"{key} must be {expected}, got {value!r}", lineno)
        values[key] = parsed
        lines[key] = lineno
    for required in ("kind", "L"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")
    cfg = ExperimentConfig(**values)
    _check_combined(cfg, lines)
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Every key, one per line, in declaration order."""
    return "".join(f"{f.name} = {_format(f.name, getattr(cfg, f.name))}\n" for f in fields(cfg))


def config_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return {f.name: (list(v) if isinstance(v := getattr(cfg, f.name), tuple) else v) for f in fields(cfg)}

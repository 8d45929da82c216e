"""Experiment configuration: a TOML file parsed into frozen dataclasses.

Every validation failure raises :class:`ConfigError` carrying the dotted path
of the offending field, e.g. ``model.g.step``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .fock import MAX_ORBITALS, Sector
from .observables import INFINITE, LOWEST_MANIFOLD, Temperature, parse_temperature

KINDS = ("spectrum", "occupations", "cdf", "dynamics")
SOLVER_METHODS = ("auto", "dense", "lanczos")
PROPAGATORS = ("auto", "spectral", "krylov")
DEFAULT_G_GRID = {"start": 0.0, "stop": 20.0, "step": 0.5}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def _finite(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    return float(value)


def _int(value, path: str, lo: int | None = None, hi: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}")
    if hi is not None and value > hi:
        raise ConfigError(path, f"must be <= {hi}")
    return value


def _table(raw: dict, key: str, path: str, required: bool = False) -> dict:
    val = raw.get(key)
    if val is None:
        if required:
            raise ConfigError(f"{path}{key}", "missing section")
        return {}
    if not isinstance(val, dict):
        raise ConfigError(f"{path}{key}", "expected a table")
    return val


def _reject_unknown(raw: dict, allowed, path: str) -> None:
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{path}{key}", "unknown field")


def parse_grid(value, path: str) -> tuple[float, ...]:
    """A list of numbers, or a {start, stop, step} table (stop inclusive)."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (_finite(value, path),)
    if isinstance(value, list):
        if not value:
            raise ConfigError(path, "empty list")
        return tuple(_finite(v, f"{path}[{i}]") for i, v in enumerate(value))
    if isinstance(value, dict):
        _reject_unknown(value, ("start", "stop", "step"), f"{path}.")
        for key in ("start", "stop", "step"):
            if key not in value:
                raise ConfigError(f"{path}.{key}", "missing")
        start = _finite(value["start"], f"{path}.start")
        stop = _finite(value["stop"], f"{path}.stop")
        step = _finite(value["step"], f"{path}.step")
        if step <= 0:
            raise ConfigError(f"{path}.step", "must be positive")
        if stop < start:
            raise ConfigError(path, "empty range (stop < start)")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        # start + i*step, not a running sum, so values do not drift
        return tuple(float(start + i * step) for i in range(count))
    raise ConfigError(path, f"expected a number, list or range table, got {value!r}")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "auto"
    k: int = 20
    tol: float = 1e-9
    block_size: int = 4
    max_matvecs: int = 50_000


@dataclass(frozen=True)
class EnsembleConfig:
    temperatures: tuple[Temperature, ...] = (0.0,)
    states: str | tuple[int, ...] = LOWEST_MANIFOLD
    cdf_spin: str = "down"


@dataclass(frozen=True)
class DynamicsConfig:
    g: float
    delta_after: float
    initial_state: int
    times: tuple[float, ...]
    propagator: str = "auto"
    tol: float = 1e-10


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    n_orb: int
    n_up: int
    n_down: int
    g_values: tuple[float, ...] = ()
    delta: float = 0.0
    lam: float = 0.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    dynamics: DynamicsConfig | None = None
    out: str | None = None

    @property
    def sector(self) -> Sector:
        return Sector(self.n_orb, self.n_up, self.n_down)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["ensemble"]["temperatures"] = [
            "inf" if t is INFINITE else t for t in self.ensemble.temperatures]
        return d


def _parse_solver(raw: dict) -> SolverConfig:
    _reject_unknown(raw, ("method", "k", "tol", "block_size", "max_matvecs"), "solver.")
    method = raw.get("method", "auto")
    if method not in SOLVER_METHODS:
        raise ConfigError("solver.method", f"must be one of {SOLVER_METHODS}")
    tol = _finite(raw.get("tol", 1e-9), "solver.tol")
    if tol <= 0:
        raise ConfigError("solver.tol", "must be positive")
    return SolverConfig(
        method=method,
        k=_int(raw.get("k", 20), "solver.k", lo=1),
        tol=tol,
        block_size=_int(raw.get("block_size", 4), "solver.block_size", lo=1),
        max_matvecs=_int(raw.get("max_matvecs", 50_000), "solver.max_matvecs", lo=1),
    )


def _parse_ensemble(raw: dict) -> EnsembleConfig:
    _reject_unknown(raw, ("temperatures", "states", "cdf_spin"), "ensemble.")
    temps_raw = raw.get("temperatures", [0.0])
    if isinstance(temps_raw, dict):
        temps_raw = list(parse_grid(temps_raw, "ensemble.temperatures"))
    elif not isinstance(temps_raw, list):
        temps_raw = [temps_raw]
    if not temps_raw:
        raise ConfigError("ensemble.temperatures", "empty list")
    temps = []
    for i, t in enumerate(temps_raw):
        path = f"ensemble.temperatures[{i}]"
        try:
            val = parse_temperature(t)
        except (TypeError, ValueError):
            raise ConfigError(path, f"not a temperature: {t!r}") from None
        if val is not INFINITE and (not math.isfinite(val) or val < 0):
            raise ConfigError(path, "must be >= 0, or \"inf\"")
        temps.append(val)
    states = raw.get("states", LOWEST_MANIFOLD)
    if isinstance(states, list):
        if not states:
            raise ConfigError("ensemble.states", "empty list")
        states = tuple(_int(s, f"ensemble.states[{i}]", lo=0) for i, s in enumerate(states))
    elif states != LOWEST_MANIFOLD:
        raise ConfigError("ensemble.states", f"expected \"{LOWEST_MANIFOLD}\" or a list of indices")
    spin = raw.get("cdf_spin", "down")
    if spin not in ("up", "down"):
        raise ConfigError("ensemble.cdf_spin", "must be \"up\" or \"down\"")
    return EnsembleConfig(tuple(temps), states, spin)


def _parse_dynamics(raw: dict) -> DynamicsConfig:
    _reject_unknown(raw, ("g", "delta_after", "initial_state", "times", "propagator", "tol"), "dynamics.")
    for key in ("g", "delta_after", "initial_state", "times"):
        if key not in raw:
            raise ConfigError(f"dynamics.{key}", "missing")
    times = parse_grid(raw["times"], "dynamics.times")
    if min(times) < 0:
        raise ConfigError("dynamics.times", "times must be non-negative")
    prop = raw.get("propagator", "auto")
    if prop not in PROPAGATORS:
        raise ConfigError("dynamics.propagator", f"must be one of {PROPAGATORS}")
    tol = _finite(raw.get("tol", 1e-10), "dynamics.tol")
    if tol <= 0:
        raise ConfigError("dynamics.tol", "must be positive")
    return DynamicsConfig(
        g=_finite(raw["g"], "dynamics.g"),
        delta_after=_finite(raw["delta_after"], "dynamics.delta_after"),
        initial_state=_int(raw["initial_state"], "dynamics.initial_state", lo=0),
        times=times,
        propagator=prop,
        tol=tol,
    )


def parse_config(raw: dict, kind: str | None = None) -> ExperimentConfig:
    """Validate a parsed TOML tree.  ``kind`` (from the subcommand) must match
    the file's ``kind`` when both are given."""
    _reject_unknown(raw, ("kind", "out", "sector", "model", "solver", "ensemble", "dynamics"), "")
    file_kind = raw.get("kind")
    if file_kind is not None and file_kind not in KINDS:
        raise ConfigError("kind", f"must be one of {KINDS}")
    if kind is not None and file_kind is not None and kind != file_kind:
        raise ConfigError("kind", f"file declares {file_kind!r} but the command is {kind!r}")
    kind = kind or file_kind
    if kind is None:
        raise ConfigError("kind", "missing")

    sec = _table(raw, "sector", "", required=True)
    _reject_unknown(sec, ("n_orb", "n_up", "n_down"), "sector.")
    for key in ("n_orb", "n_up", "n_down"):
        if key not in sec:
            raise ConfigError(f"sector.{key}", "missing")
    n_orb = _int(sec["n_orb"], "sector.n_orb", lo=1, hi=MAX_ORBITALS)
    n_up = _int(sec["n_up"], "sector.n_up", lo=0, hi=n_orb)
    n_down = _int(sec["n_down"], "sector.n_down", lo=0, hi=n_orb)
    if n_up + n_down == 0:
        raise ConfigError("sector", "no particles")

    model = _table(raw, "model", "")
    _reject_unknown(model, ("g", "delta", "lambda"), "model.")
    g_values = parse_grid(model.get("g", DEFAULT_G_GRID), "model.g")
    delta = _finite(model.get("delta", 0.0), "model.delta")
    lam = _finite(model.get("lambda", 0.0), "model.lambda")

    solver = _parse_solver(_table(raw, "solver", ""))
    ensemble = _parse_ensemble(_table(raw, "ensemble", ""))
    dynamics = None
    if kind == "dynamics":
        dynamics = _parse_dynamics(_table(raw, "dynamics", "", required=True))
        if "g" in model:
            raise ConfigError("model.g", "dynamics takes its coupling from dynamics.g")
        g_values = (dynamics.g,)
    elif "dynamics" in raw:
        raise ConfigError("dynamics", f"only valid for kind \"dynamics\", not {kind!r}")

    out = raw.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out", "expected a path string")
    return ExperimentConfig(kind, n_orb, n_up, n_down, g_values, delta, lam,
                            solver, ensemble, dynamics, out)


def load_config(path: str | Path, kind: str | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"TOML syntax error in {path}: {exc}") from None
    return parse_config(raw, kind)


def temperature_label(t: Temperature) -> str:
    return "inf" if t is INFINITE else format(float(t), ".17g")

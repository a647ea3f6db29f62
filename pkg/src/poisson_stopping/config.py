"""Run configuration: YAML in, fully resolved dataclasses out.

Every section is optional and unknown keys are errors. Defaults resolved at
parse time (``s_max``, simulation drift, boundary tolerance) are written
back into the config, so the document stored in run metadata parses to an
identical ``RunConfig``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import yaml

from .market import MarketParams
from .pde import GridSpec
from .simulation import SimConfig


class ConfigError(ValueError):
    def __init__(self, message: str, violations: list[str] | None = None, line: int | None = None):
        super().__init__(message)
        self.violations = violations or []
        self.line = line


@dataclass(frozen=True)
class Tolerances:
    policy_tol: float = 1e-10
    max_iter: int = 50
    boundary_tol: float | None = None
    convection: str = "upwind"


@dataclass(frozen=True)
class RunConfig:
    market: MarketParams = field(default_factory=MarketParams)
    grid: GridSpec = field(default_factory=GridSpec)
    sim: SimConfig = field(default_factory=SimConfig)
    sweep: tuple[float, ...] | None = None
    outputs: str = "out"
    tolerances: Tolerances = field(default_factory=Tolerances)


_MARKET_KEYS = {
    "sigma": float, "eta": float, "r_low": float, "r_high": float, "mu1_low": float,
    "mu1_high": float, "lambda": float, "k": int, "T": float, "s0": float,
}
_GRID_KEYS = {"ns": int, "nt": int, "s_max": float}
_SIM_KEYS = {"n_paths": int, "seed": int, "dt_sim": float, "drift": float, "arrival_measure": str}
_TOL_KEYS = {"policy_tol": float, "max_iter": int, "boundary_tol": float, "convection": str}
_TOP_KEYS = {"market", "grid", "sim", "sweep", "outputs", "tolerances"}


def _coerce(section: str, key: str, value, kind, errors: list[str]):
    if value is None:
        return None
    try:
        if kind is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(value) if isinstance(value, int) else int(float(value))
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        errors.append(f"{section}.{key}: expected {kind.__name__}, got {value!r}")
        return None


def _section(doc: dict, name: str, schema: dict, errors: list[str]) -> dict:
    raw = doc.get(name) or {}
    if not isinstance(raw, dict):
        errors.append(f"{name}: expected a mapping")
        return {}
    out = {}
    for key, value in raw.items():
        if key not in schema:
            errors.append(f"unknown key {name}.{key}")
            continue
        v = _coerce(name, key, value, schema[key], errors)
        if v is not None:
            out[key] = v
    return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML (or JSON) run configuration."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"parse error at line {line}: {exc}", line=line) from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    errors = [f"unknown key {key}" for key in doc if key not in _TOP_KEYS]

    m = _section(doc, "market", _MARKET_KEYS, errors)
    if "lambda" in m:
        m["lam"] = m.pop("lambda")
    market = MarketParams(**m)
    errors += [f"market: {v}" for v in market.structural_violations()]

    g = _section(doc, "grid", _GRID_KEYS, errors)
    grid = GridSpec(**g)
    if not market.structural_violations():
        grid = grid.resolved(market)
        errors += [f"grid: {v}" for v in grid.violations(market)]

    s = _section(doc, "sim", _SIM_KEYS, errors)
    sim = SimConfig(**s)
    if sim.drift is None:
        sim = replace(sim, drift=market.r_low)
    if market.T > 0:
        errors += [f"sim: {v}" for v in sim.violations(market.T)]

    t = _section(doc, "tolerances", _TOL_KEYS, errors)
    tol = Tolerances(**t)
    if tol.boundary_tol is None:
        tol = replace(tol, boundary_tol=1e-6 * market.max_strike)
    if not tol.policy_tol > 0:
        errors.append("tolerances: policy_tol > 0")
    if tol.max_iter < 1:
        errors.append("tolerances: max_iter >= 1")
    if not tol.boundary_tol > 0:
        errors.append("tolerances: boundary_tol > 0")
    if tol.convection not in ("upwind", "central"):
        errors.append("tolerances: convection in {upwind, central}")

    sweep = doc.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, list):
            errors.append("sweep: expected a list of lambda values")
            sweep = None
        else:
            sweep = tuple(_coerce("sweep", str(i), v, float, errors) for i, v in enumerate(sweep))
            if any(v is None or not v > 0 for v in sweep):
                errors.append("sweep: every lambda > 0")

    outputs = doc.get("outputs", "out")
    if not isinstance(outputs, str):
        errors.append("outputs: expected a directory path")

    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors), violations=errors)
    return RunConfig(market, grid, sim, sweep, outputs, tol)


def to_document(config: RunConfig) -> dict:
    m = config.market.as_dict()
    m["lambda"] = m.pop("lam")
    return {
        "market": m,
        "grid": config.grid.as_dict(),
        "sim": config.sim.as_dict(),
        "sweep": None if config.sweep is None else list(config.sweep),
        "outputs": config.outputs,
        "tolerances": {
            "policy_tol": config.tolerances.policy_tol,
            "max_iter": config.tolerances.max_iter,
            "boundary_tol": config.tolerances.boundary_tol,
            "convection": config.tolerances.convection,
        },
    }


def config_from_metadata(text: str) -> RunConfig:
    """Rebuild the RunConfig stored in a run's metadata document."""
    meta = json.loads(text)
    return parse_config(json.dumps(meta["config"]))

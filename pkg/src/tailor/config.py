"""Scenario configuration files (JSON) and built-in presets."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError

from .distributions import FAMILIES, ServiceDistribution, make_distribution
from .grids import DEFAULT_DT, DEFAULT_N_LOG, Grids, grids_for
from .simulator import SimConfig


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExponentialSpec(_Strict):
    family: Literal["exponential"]
    rate: PositiveFloat


class LomaxSpec(_Strict):
    family: Literal["lomax"]
    scale: PositiveFloat
    shape: Annotated[float, Field(gt=2)]


class LogNormalSpec(_Strict):
    family: Literal["lognormal"]
    mu: float
    sigma2: PositiveFloat


DistributionSpec = Annotated[
    Union[ExponentialSpec, LomaxSpec, LogNormalSpec], Field(discriminator="family")
]


class GridSpec(_Strict):
    dt: PositiveFloat = DEFAULT_DT
    y_cut: Optional[PositiveFloat] = None
    theta_fine: Optional[PositiveFloat] = None
    theta_max: Optional[PositiveFloat] = None
    tail_eps: Optional[Annotated[float, Field(gt=0, lt=1)]] = None
    n_log: PositiveInt = DEFAULT_N_LOG
    far_field_slope: Optional[PositiveFloat] = None


class SolverSpec(_Strict):
    eps_v: Optional[PositiveFloat] = None
    eps_rho: PositiveFloat = 1e-8
    max_iter: PositiveInt = 200


class SimSpec(_Strict):
    cycles: PositiveInt = 1_010_101
    warmup_cycles: Optional[Annotated[int, Field(ge=0)]] = None
    batches: Annotated[int, Field(ge=10)] = 50
    seed: Annotated[int, Field(ge=0, lt=2**64)] = 2024
    max_preemptions_per_chain: PositiveInt = 1_000_000


class ScenarioConfig(_Strict):
    name: str
    distribution: DistributionSpec
    kappa_s: PositiveFloat
    kappa_p: PositiveFloat
    grid: GridSpec = GridSpec()
    solver: SolverSpec = SolverSpec()
    sim: SimSpec = SimSpec()


class ScenarioSet(_Strict):
    scenarios: list[ScenarioConfig]


@dataclass
class Scenario:
    """A validated scenario with its distribution and grids built."""

    name: str
    dist: ServiceDistribution
    kappa_s: float
    kappa_p: float
    grids: Grids
    eps_v: float | None
    eps_rho: float
    max_iter: int
    sim: SimConfig


def build(cfg: ScenarioConfig, dist: ServiceDistribution | None = None) -> Scenario:
    """Materialize ``cfg``; ``dist`` overrides the configured distribution."""
    if dist is None:
        d = cfg.distribution.model_dump()
        dist = make_distribution(d.pop("family"), **d)
    g = cfg.grid
    try:
        grids = grids_for(dist, dt=g.dt, y_cut=g.y_cut, theta_fine=g.theta_fine,
                          theta_max=g.theta_max, tail_eps=g.tail_eps, n_log=g.n_log,
                          slope=g.far_field_slope)
        sim = SimConfig(cycles=cfg.sim.cycles, warmup_cycles=cfg.sim.warmup_cycles,
                        batches=cfg.sim.batches, seed=cfg.sim.seed,
                        max_preemptions_per_chain=cfg.sim.max_preemptions_per_chain)
    except ValueError as exc:
        raise ConfigError(f"{cfg.name}: {exc}") from exc
    return Scenario(cfg.name, dist, cfg.kappa_s, cfg.kappa_p, grids,
                    cfg.solver.eps_v, cfg.solver.eps_rho, cfg.solver.max_iter, sim)


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if "distribution" in err["loc"] and err["type"].startswith("union_tag"):
            msg += f" (supported families: {', '.join(sorted(FAMILIES))})"
        lines.append(f"{path}: {msg}")
    return "; ".join(lines)


def parse_scenario(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def parse_scenario_set(data) -> list[ScenarioConfig]:
    if isinstance(data, list):
        data = {"scenarios": data}
    try:
        return ScenarioSet.model_validate(data).scenarios
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def read_json(path) -> object:
    """Load a JSON file; OSError propagates, malformed JSON is a ConfigError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def load_scenario(path) -> ScenarioConfig:
    return parse_scenario(read_json(path))


def load_scenario_set(path) -> list[ScenarioConfig]:
    return parse_scenario_set(read_json(path))


# Four benchmark scenarios with kappa_s = 1.
TABLE1 = [
    {"name": "YP_kp1", "distribution": {"family": "lomax", "scale": 1.0, "shape": 2.1},
     "kappa_s": 1.0, "kappa_p": 1.0},
    {"name": "YP_kp5", "distribution": {"family": "lomax", "scale": 1.0, "shape": 2.1},
     "kappa_s": 1.0, "kappa_p": 5.0},
    {"name": "YL1_kp1", "distribution": {"family": "lognormal", "mu": -1.31, "sigma2": 4.0},
     "kappa_s": 1.0, "kappa_p": 1.0},
    {"name": "YL2_kp1", "distribution": {"family": "lognormal", "mu": -2.31, "sigma2": 6.0},
     "kappa_s": 1.0, "kappa_p": 1.0},
]

# Published averages for the same scenarios: (TAILOR, AoI-NP, ZW-NP).
TABLE1_REPORTED = {
    "YP_kp1": (2.06, 3.73, 6.35),
    "YP_kp5": (2.35, 3.73, 6.35),
    "YL1_kp1": (1.99, 16.0, 56.8),
    "YL2_kp1": (1.77, 53.5, 524.0),
}


def table1_scenarios() -> list[ScenarioConfig]:
    return parse_scenario_set(TABLE1)

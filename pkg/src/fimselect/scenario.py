"""Scenario configuration, candidate-pool construction and builtin examples.

A scenario file is YAML (JSON also parses) with a strict schema; unknown
keys are rejected. See ``docs/scenario_schema.md`` for field reference.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, GeometryError
from .fim import atom_from_measurement
from .params import GaussianPrior, ParamLayout, ParamVector, AgentPath, prior_information
from .select import CandidatePool
from .sensors import (
    CameraSensor,
    DopplerSensor,
    FixedOrientation,
    HeadingOrientation,
    LookAtOrientation,
    MeasurementSpec,
    ToaSensor,
    doppler_sigma_from_ppb,
    intrinsics,
    measurement_jacobian,
)

logger = logging.getLogger(__name__)

BUILTIN_TAGS = ("example1", "example2", "example3", "cooperative")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Schedule(_Strict):
    count: int = Field(ge=1)
    spacing: Literal["uniform"] = "uniform"


class Orientation(_Strict):
    mode: Literal["look_at", "heading", "fixed"]
    point: Optional[list[float]] = None
    matrix: Optional[list[list[float]]] = None
    up: list[float] = [0.0, 0.0, 1.0]

    @model_validator(mode="after")
    def _needs(self):
        if self.mode == "look_at" and (self.point is None or len(self.point) != 3):
            raise ValueError("look_at orientation needs a 3-element 'point'")
        if self.mode == "fixed" and self.matrix is None:
            raise ValueError("fixed orientation needs a 3x3 'matrix'")
        return self


class ToaConfig(_Strict):
    type: Literal["toa"]
    id: str
    sigma: float = Field(gt=0, description="std. dev. of range-scaled arrival time, m")
    symbol_base: int = 0
    schedule: Optional[Schedule] = None


class DopplerConfig(_Strict):
    type: Literal["doppler"]
    id: str
    sigma: Optional[float] = Field(default=None, gt=0, description="m/s")
    sigma_ppb: Optional[float] = Field(default=None, gt=0)
    carrier_hz: float = Field(default=1e9, gt=0)
    schedule: Optional[Schedule] = None

    @model_validator(mode="after")
    def _one_sigma(self):
        if (self.sigma is None) == (self.sigma_ppb is None):
            raise ValueError("doppler sensor needs exactly one of 'sigma' or 'sigma_ppb'")
        return self

    def sigma_mps(self) -> float:
        if self.sigma is not None:
            return self.sigma
        return doppler_sigma_from_ppb(self.sigma_ppb, self.carrier_hz)


class CameraConfig(_Strict):
    type: Literal["camera"]
    id: str
    focal: list[float] = Field(min_length=2, max_length=2)
    skew: float = 0.0
    center: list[float] = Field(default=[0.0, 0.0], min_length=2, max_length=2)
    pixel_sigma: Optional[float] = Field(default=None, gt=0)
    pixel_cov: Optional[list[list[float]]] = None
    orientation: Orientation
    schedule: Optional[Schedule] = None

    @model_validator(mode="after")
    def _one_noise(self):
        if (self.pixel_sigma is None) == (self.pixel_cov is None):
            raise ValueError("camera needs exactly one of 'pixel_sigma' or 'pixel_cov'")
        return self

    def covariance(self) -> np.ndarray:
        if self.pixel_cov is not None:
            return np.asarray(self.pixel_cov, dtype=float)
        return self.pixel_sigma**2 * np.eye(2)


SensorConfig = Annotated[Union[ToaConfig, DopplerConfig, CameraConfig], Field(discriminator="type")]


class AgentConfig(_Strict):
    id: str
    budget: int = Field(ge=0)
    waypoints: list[list[float]]
    sensors: list[SensorConfig]


class PriorConfig(_Strict):
    mean: list[float]
    diag: Optional[list[float]] = None
    covariance: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _one_cov(self):
        if (self.diag is None) == (self.covariance is None):
            raise ValueError("prior needs exactly one of 'diag' (variances) or 'covariance'")
        return self


class Scenario(_Strict):
    window: list[float] = Field(min_length=2, max_length=2)
    prior: PriorConfig
    agents: list[AgentConfig] = []
    schedule: Schedule
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self):
        if not self.window[1] > self.window[0]:
            raise ValueError("window end must be after window start")
        ids = [s.id for a in self.agents for s in a.sensors]
        if len(set(ids)) != len(ids):
            raise ValueError("sensor ids must be unique across the scenario")
        agent_ids = [a.id for a in self.agents]
        if len(set(agent_ids)) != len(agent_ids):
            raise ValueError("agent ids must be unique")
        return self

    @property
    def t_start(self) -> float:
        return float(self.window[0])

    @property
    def t_end(self) -> float:
        return float(self.window[1])

    def config_hash(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_scenario(source: Union[str, Path, dict]) -> Scenario:
    """Parse a scenario from a dict, a YAML/JSON file, or ``builtin:<tag>``."""
    if isinstance(source, dict):
        data = source
    else:
        text = str(source)
        if text.startswith("builtin:"):
            return builtin_scenario(text.split(":", 1)[1])
        try:
            data = yaml.safe_load(Path(text).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read scenario {text!r}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"scenario {text!r} is not valid YAML: {exc}") from None
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(x) for x in first["loc"])
        raise ConfigError(f"scenario schema error at {loc or '<root>'}: {first['msg']}") from None


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.model_dump(mode="json", exclude_none=True), sort_keys=False)


@dataclass
class Agent:
    agent_id: str
    path: AgentPath
    sensors: list
    budget: int
    specs: list


@dataclass
class Model:
    """Numerical objects expanded from a :class:`Scenario`."""

    layout: ParamLayout
    prior: GaussianPrior
    agents: list
    t_start: float
    t_end: float


def _layout(scenario: Scenario) -> ParamLayout:
    blocks = [(s.id, s.type) for a in scenario.agents for s in a.sensors if s.type in ("toa", "doppler")]
    return ParamLayout(tuple(blocks))


def _orientation(cfg: Orientation, path: AgentPath):
    if cfg.mode == "look_at":
        return LookAtOrientation(path, cfg.point, cfg.up)
    if cfg.mode == "heading":
        return HeadingOrientation(path, cfg.up)
    return FixedOrientation(cfg.matrix)


def _sensor(cfg, path: AgentPath):
    if cfg.type == "toa":
        return ToaSensor(cfg.id, path, cfg.sigma, cfg.symbol_base)
    if cfg.type == "doppler":
        return DopplerSensor(cfg.id, path, cfg.sigma_mps())
    A = intrinsics(cfg.focal[0], cfg.focal[1], cfg.skew, cfg.center[0], cfg.center[1])
    return CameraSensor(cfg.id, path, _orientation(cfg.orientation, path), A, cfg.covariance())


def build_model(scenario: Scenario) -> Model:
    layout = _layout(scenario)
    p = layout.total_dim
    pc = scenario.prior
    if len(pc.mean) != p:
        raise ConfigError(f"prior mean has {len(pc.mean)} entries, parameter layout needs {p}")
    if pc.diag is not None:
        if len(pc.diag) != p:
            raise ConfigError(f"prior diag has {len(pc.diag)} entries, parameter layout needs {p}")
        cov = np.diag(np.asarray(pc.diag, dtype=float))
    else:
        cov = np.asarray(pc.covariance, dtype=float)
    prior = GaussianPrior(ParamVector(layout, pc.mean), cov)

    agents = []
    for ac in scenario.agents:
        path = AgentPath.from_waypoints(ac.waypoints)
        sensors, specs = [], []
        for sc in ac.sensors:
            sensor = _sensor(sc, path)
            sensors.append(sensor)
            schedule = sc.schedule or scenario.schedule
            times = np.linspace(scenario.t_start, scenario.t_end, schedule.count)
            base_symbol = getattr(sensor, "symbol_base", 0)
            specs.extend(
                MeasurementSpec(sensor, float(t), scenario.t_start, base_symbol + j) for j, t in enumerate(times)
            )
        agents.append(Agent(ac.id, path, sensors, ac.budget, specs))
    return Model(layout, prior, agents, scenario.t_start, scenario.t_end)


def build_pools(scenario: Union[Scenario, Model]):
    """Expand a scenario into ``(layout, pools, q0)``.

    Atoms are linearized at the prior mean and numbered consecutively across
    agents in declaration order. Measurements with singular geometry at the
    prior mean are dropped and counted in ``pool.dropped``.
    """
    model = scenario if isinstance(scenario, Model) else build_model(scenario)
    theta_ref = model.prior.mean
    q0 = prior_information(model.prior)
    pools = []
    next_id = 0
    for agent in model.agents:
        atoms, dropped = [], 0
        for spec in agent.specs:
            try:
                measurement_jacobian(theta_ref, spec)
            except GeometryError as exc:
                logger.warning("agent %s: dropping measurement (%s)", agent.agent_id, exc)
                dropped += 1
                continue
            atoms.append(atom_from_measurement(spec, theta_ref, next_id, agent_id=agent.agent_id))
            next_id += 1
        if agent.specs and not atoms:
            raise ConfigError(f"agent {agent.agent_id!r}: every scheduled measurement has invalid geometry")
        pools.append(CandidatePool(agent.agent_id, atoms, agent.budget, dropped))
    return model.layout, pools, q0


# ---------------------------------------------------------------- builtins

#: frozen agent path for the single-agent examples: a long straight approach,
#: then a heading change that carries the agent past the target
EXAMPLE_WAYPOINTS = [
    [0.0, -20.0, -600.0, 20.0],
    [7.5, -20.0, -120.0, 20.0],
    [9.0, -80.0, -50.0, 20.0],
    [10.0, -60.0, -15.0, 20.0],
]
WINDOW = [0.0, 10.0]  # s
TARGET = [0.0, 0.0, 0.0]
POSITION_SIGMA = 10.0  # m
# A stationary target: velocity and curvature priors are set so that each
# term moves the target by at most 1e-3 of the position scale over the window.
PINNED_DISPLACEMENT = 1e-3 * POSITION_SIGMA  # m
VELOCITY_SIGMA = PINNED_DISPLACEMENT / (WINDOW[1] - WINDOW[0])  # m/s
CURVATURE_SIGMA = 2.0 * PINNED_DISPLACEMENT / (WINDOW[1] - WINDOW[0]) ** 2  # m/s^2
CARRIER_OFFSET_SIGMA = 30.0  # m/s, i.e. ~100 Hz at 1 GHz
CAMERA_FOCAL = 50.0  # px
PIXEL_SIGMA = 0.8  # px
DOPPLER_PPB = 33.0
CARRIER_HZ = 1e9
N_MEASUREMENTS = 1000


def _camera(sensor_id: str) -> dict:
    return {
        "type": "camera",
        "id": sensor_id,
        "focal": [CAMERA_FOCAL, CAMERA_FOCAL],
        "skew": 0.0,
        "center": [0.0, 0.0],
        "pixel_sigma": PIXEL_SIGMA,
        "orientation": {"mode": "look_at", "point": list(TARGET)},
    }


def _doppler(sensor_id: str) -> dict:
    return {"type": "doppler", "id": sensor_id, "sigma_ppb": DOPPLER_PPB, "carrier_hz": CARRIER_HZ}


def _mirror(waypoints):
    return [[t, -x, y, z] for t, x, y, z in waypoints]


def builtin_scenario(tag: str) -> Scenario:
    """Deterministic scenario for one of the builtin examples."""
    if tag not in BUILTIN_TAGS:
        raise ConfigError(f"unknown builtin {tag!r}; choose from {', '.join(BUILTIN_TAGS)}")
    motion_var = [POSITION_SIGMA**2] * 3 + [VELOCITY_SIGMA**2] * 3 + [CURVATURE_SIGMA**2] * 3
    if tag == "example1":
        agents = [{"id": "agent1", "budget": 10, "waypoints": EXAMPLE_WAYPOINTS, "sensors": [_camera("cam1")]}]
    elif tag == "example2":
        agents = [
            {
                "id": "agent1",
                "budget": 10,
                "waypoints": EXAMPLE_WAYPOINTS,
                "sensors": [_camera("cam1"), _doppler("rf1")],
            }
        ]
    else:
        agents = [
            {
                "id": f"agent{i}",
                "budget": 10,
                "waypoints": wp,
                "sensors": [_camera(f"cam{i}"), _doppler(f"rf{i}")],
            }
            for i, wp in ((1, EXAMPLE_WAYPOINTS), (2, _mirror(EXAMPLE_WAYPOINTS)))
        ]
    n_rf = sum(1 for a in agents for s in a["sensors"] if s["type"] == "doppler")
    data = {
        "window": list(WINDOW),
        "prior": {
            "mean": list(TARGET) + [0.0] * 6 + [0.0] * n_rf,
            "diag": motion_var + [CARRIER_OFFSET_SIGMA**2] * n_rf,
        },
        "agents": copy.deepcopy(agents),
        "schedule": {"count": N_MEASUREMENTS, "spacing": "uniform"},
        "seed": 0,
    }
    return Scenario.model_validate(data)

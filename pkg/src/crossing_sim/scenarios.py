"""Scenario builders for the two-agent interactions and a text config round-trip.

Geometry: every path is a straight line through the crossing point at the
origin. Pedestrians walk along +y from negative y (the PP partner walks along
+x from negative x); vehicles drive along -x from positive x.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .agent_model import SquashConfig, UtilityParams
from .engine import AccumulatorConfig, WorldConfig
from .errors import ConfigurationError
from .kinematics import AgentState, time_to_crossing_point

VEHICLE_SPEED = 13.9
ASSERT_VEHICLE_SPEED = 50.0 / 3.6
ASSERT_PED_SPEED = 1.4
PP_D0 = 7.0
GOAL_BEYOND = 5.0
ENCOUNTER_WINDOW = 1.0

# Pedestrian-vehicle calibration: agents collide below 1 m but predict a
# collision course below 2 m, and single collision costs saturate at 3.25.
PV_COLLISION_DISTANCE = 1.0
PV_TOLERANCE = 2.0
PV_SQUASH = SquashConfig(c_max=3.25, tau_floor=0.01)
CD_PED_KDV = 0.45

VEHICLE_PARAMS = UtilityParams(k_g=1.0, k_dv=1.0 / (2.0 * VEHICLE_SPEED), agent_kind="vehicle")
# Free speed 14.0 m/s: just above the initial 13.9 m/s.
ASSERTIVE_VEHICLE_KDV = 0.0357
ASSERT_K_C = 1.0
ASSERT_K_SC = 2.0

TAGS = ("PP", "CD", "CD_STOCH", "CR", "CR_ASSERT", "CUSTOM")

CD_STARTS = tuple(float(x) for x in range(20, 101, 5))
CR_STARTS = tuple(float(x) for x in range(10, 101, 10))
CD_STOCH_GAPS = (2.29, 4.58, 6.87)
STOCH_ACCUMULATOR = AccumulatorConfig(sigma=0.2, threshold=0.5, T=0.5)


@dataclass(frozen=True)
class AgentSpec:
    name: str
    position: tuple[float, float]
    speed: float
    heading: tuple[float, float]
    goal: tuple[float, float]
    params: UtilityParams
    stochastic: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.speed) and self.speed >= 0):
            raise ConfigurationError(f"{self.name}: initial speed must be finite and >= 0")
        if abs(math.hypot(*self.heading) - 1.0) > 1e-9:
            raise ConfigurationError(f"{self.name}: heading must be a unit vector")

    @property
    def kind(self) -> str:
        return self.params.agent_kind

    @property
    def state(self) -> AgentState:
        return AgentState(self.position, self.speed, 0.0, self.heading)

    def progress_to(self, point: tuple[float, float]) -> float:
        """Signed distance along the heading from the start to ``point``."""
        return (point[0] - self.position[0]) * self.heading[0] + (
            point[1] - self.position[1]
        ) * self.heading[1]

    def on_path(self, point: tuple[float, float], tol: float = 1e-9) -> bool:
        rx, ry = point[0] - self.position[0], point[1] - self.position[1]
        return abs(rx * self.heading[1] - ry * self.heading[0]) <= tol


@dataclass(frozen=True)
class ScenarioSpec:
    tag: str
    agents: tuple[AgentSpec, ...]
    crossing: tuple[float, float] = (0.0, 0.0)
    world: WorldConfig = field(default_factory=WorldConfig)
    squash: SquashConfig = field(default_factory=SquashConfig)

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ConfigurationError(f"unknown scenario tag {self.tag!r}")
        if len({a.name for a in self.agents}) != len(self.agents):
            raise ConfigurationError("agent names must be unique")
        for a in self.agents:
            if not a.on_path(self.crossing):
                raise ConfigurationError(f"crossing point is not on {a.name}'s path")

    def agent(self, name: str) -> AgentSpec:
        for a in self.agents:
            if a.name == name:
                return a
        raise KeyError(name)

    def arrival_times(self) -> list[float | None]:
        return [time_to_crossing_point(a.state, self.crossing) for a in self.agents]

    def with_world(self, **changes) -> "ScenarioSpec":
        return replace(self, world=replace(self.world, **changes))


def _ped(name, y0, speed, params, stochastic=False, axis="y"):
    if axis == "y":
        pos, heading, goal = (0.0, y0), (0.0, 1.0), (0.0, GOAL_BEYOND)
    else:
        pos, heading, goal = (y0, 0.0), (1.0, 0.0), (GOAL_BEYOND, 0.0)
    return AgentSpec(name, pos, speed, heading, goal, params, stochastic)


def _vehicle(x0, speed, params):
    return AgentSpec("vehicle", (x0, 0.0), speed, (-1.0, 0.0), (-GOAL_BEYOND, 0.0), params)


def pedestrian_params(k_c: float, k_dv: float = 0.38, k_g: float = 1.0) -> UtilityParams:
    return UtilityParams(k_g=k_g, k_dv=k_dv, k_da=0.0, collision_weight=k_c)


def vehicle_params(k_sc: float, k_dv: float = VEHICLE_PARAMS.k_dv) -> UtilityParams:
    return replace(VEHICLE_PARAMS, k_dv=k_dv, collision_weight=k_sc)


def build_pp(
    speed_a: float,
    speed_b: float,
    k_dv: float = 0.38,
    k_c: float = 1.0,
    d0: float = PP_D0,
    world: WorldConfig | None = None,
) -> ScenarioSpec:
    """Two identical pedestrians on perpendicular paths, each ``d0`` from the crossing.

    Agent A walks along +x, agent B along +y. The run starts at the moment
    they see each other, so both decide from t = 0.
    """
    if speed_a < 0 or speed_b < 0:
        raise ConfigurationError("PP speeds must be >= 0")
    if d0 <= 0:
        raise ConfigurationError("d0 must be positive")
    p = pedestrian_params(k_c, k_dv)
    a = _ped("A", -d0, speed_a, p, axis="x")
    b = _ped("B", -d0, speed_b, p, axis="y")
    return ScenarioSpec("PP", (a, b), world=world or WorldConfig())


def _pv_world(world: WorldConfig | None) -> WorldConfig:
    return world or WorldConfig(d_c=PV_COLLISION_DISTANCE, d_tol=PV_TOLERANCE)


def build_cd(
    vehicle_start_x: float,
    k_c: float,
    k_sc: float,
    ped_k_dv: float = CD_PED_KDV,
    vehicle_speed: float = VEHICLE_SPEED,
    world: WorldConfig | None = None,
    squash: SquashConfig = PV_SQUASH,
) -> ScenarioSpec:
    """Standing pedestrian 2.5 m before the road; free-flow vehicle approaching."""
    if vehicle_start_x <= 0:
        raise ConfigurationError("vehicle must start on the positive x axis")
    ped = _ped("pedestrian", -2.5, 0.0, pedestrian_params(k_c, ped_k_dv))
    veh = _vehicle(vehicle_start_x, vehicle_speed, vehicle_params(k_sc))
    return ScenarioSpec("CD", (ped, veh), world=_pv_world(world), squash=squash)


def build_cd_stochastic(
    gap: float,
    k_sc: float = 0.0,
    k_c: float = 1.0,
    ped_k_dv: float = 0.38,
    vehicle_speed: float = VEHICLE_SPEED,
    world: WorldConfig | None = None,
    squash: SquashConfig = PV_SQUASH,
) -> ScenarioSpec:
    """CD geometry with the vehicle placed ``gap`` seconds away; the pedestrian accumulates evidence."""
    if gap <= 0:
        raise ConfigurationError("gap must be positive")
    ped = _ped("pedestrian", -2.5, 0.0, pedestrian_params(k_c, ped_k_dv), stochastic=True)
    veh = _vehicle(vehicle_speed * gap, vehicle_speed, vehicle_params(k_sc))
    return ScenarioSpec("CD_STOCH", (ped, veh), world=_pv_world(world), squash=squash)


def build_cr(
    vehicle_start_x: float,
    k_c: float,
    k_sc: float,
    ped_speed: float = 1.1,
    ped_start: float = 5.0,
    ped_k_dv: float | None = None,
    vehicle_speed: float = VEHICLE_SPEED,
    vehicle_k_dv: float | None = None,
    world: WorldConfig | None = None,
    squash: SquashConfig = PV_SQUASH,
) -> ScenarioSpec:
    """Walking pedestrian and free-speed vehicle on a collision-range approach.

    By default each agent's k_dv is chosen so that its initial speed is its
    free speed.
    """
    if vehicle_start_x <= 0 or ped_start <= 0:
        raise ConfigurationError("agents must start before the crossing")
    if ped_k_dv is None:
        ped_k_dv = 1.0 / (2.0 * ped_speed)
    if vehicle_k_dv is None:
        vehicle_k_dv = 1.0 / (2.0 * vehicle_speed)
    ped = _ped("pedestrian", -ped_start, ped_speed, pedestrian_params(k_c, ped_k_dv))
    veh = _vehicle(vehicle_start_x, vehicle_speed, vehicle_params(k_sc, vehicle_k_dv))
    return ScenarioSpec("CR", (ped, veh), world=_pv_world(world), squash=squash)


def assert_grid(n: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Pedestrian start y and vehicle start x grids (evenly spaced, inclusive)."""
    return np.linspace(-10.0, -5.0, n), np.linspace(10.0, 79.0, n)


def is_encounter(ped_y: float, veh_x: float, ped_speed: float = ASSERT_PED_SPEED,
                 vehicle_speed: float = ASSERT_VEHICLE_SPEED,
                 window: float = ENCOUNTER_WINDOW) -> bool:
    return abs(-ped_y / ped_speed - veh_x / vehicle_speed) < window


def build_cr_assert(
    k_c: float,
    k_sc: float,
    vehicle_k_dv: float = ASSERTIVE_VEHICLE_KDV,
    n: int = 60,
    ped_speed: float = ASSERT_PED_SPEED,
    vehicle_speed: float = ASSERT_VEHICLE_SPEED,
    world: WorldConfig | None = None,
    squash: SquashConfig = PV_SQUASH,
) -> list[ScenarioSpec]:
    """All encounter pairs of the assertion grid, ordered pedestrian-major.

    The pedestrian's k_dv makes its initial speed its free speed. The vehicle
    keeps its initial speed but is given ``vehicle_k_dv``, which sets its free
    speed above the initial one.
    """
    ys, xs = assert_grid(n)
    ped_kdv = 1.0 / (2.0 * ped_speed)
    out = []
    for y in ys:
        for x in xs:
            if not is_encounter(y, x, ped_speed, vehicle_speed):
                continue
            ped = _ped("pedestrian", float(y), ped_speed, pedestrian_params(k_c, ped_kdv))
            veh = _vehicle(float(x), vehicle_speed, vehicle_params(k_sc, vehicle_k_dv))
            out.append(ScenarioSpec("CR_ASSERT", (ped, veh), world=_pv_world(world), squash=squash))
    return out


# --- config files ------------------------------------------------------------

_WORLD_KEYS = {f.name for f in fields(WorldConfig)}
_SQUASH_KEYS = {f.name for f in fields(SquashConfig)}
_AGENT_KEYS = {"kind", "x", "y", "speed", "heading_x", "heading_y", "goal_x", "goal_y",
               "k_g", "k_dv", "k_da", "collision_weight", "stochastic"}


def to_config(spec: ScenarioSpec) -> str:
    cp = configparser.ConfigParser()
    cp["scenario"] = {"tag": spec.tag, "crossing_x": repr(spec.crossing[0]),
                      "crossing_y": repr(spec.crossing[1])}
    cp["world"] = {
        k: repr(getattr(spec.world, k)) for k in sorted(_WORLD_KEYS)
        if getattr(spec.world, k) is not None
    }
    cp["squash"] = {k: repr(getattr(spec.squash, k)) for k in sorted(_SQUASH_KEYS)}
    for a in spec.agents:
        cp[f"agent.{a.name}"] = {
            "kind": a.kind,
            "x": repr(a.position[0]), "y": repr(a.position[1]),
            "speed": repr(a.speed),
            "heading_x": repr(a.heading[0]), "heading_y": repr(a.heading[1]),
            "goal_x": repr(a.goal[0]), "goal_y": repr(a.goal[1]),
            "k_g": repr(a.params.k_g), "k_dv": repr(a.params.k_dv),
            "k_da": repr(a.params.k_da), "collision_weight": repr(a.params.collision_weight),
            "stochastic": str(a.stochastic).lower(),
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _check_keys(section: str, got, allowed):
    unknown = set(got) - allowed
    if unknown:
        raise ConfigurationError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")


def _float(section, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigurationError(f"[{section}] {key}: not a number: {raw!r}") from None


def from_config(text: str) -> ScenarioSpec:
    """Parse a scenario config. Unknown sections or keys are errors."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    for sec in cp.sections():
        if sec not in ("scenario", "world", "squash") and not sec.startswith("agent."):
            raise ConfigurationError(f"unknown section [{sec}]")
    if "scenario" not in cp:
        raise ConfigurationError("missing [scenario] section")
    sc = cp["scenario"]
    _check_keys("scenario", sc, {"tag", "crossing_x", "crossing_y"})
    world = {}
    if "world" in cp:
        _check_keys("world", cp["world"], _WORLD_KEYS)
        world = {k: _float("world", k, v) for k, v in cp["world"].items()}
    squash = {}
    if "squash" in cp:
        _check_keys("squash", cp["squash"], _SQUASH_KEYS)
        squash = {k: _float("squash", k, v) for k, v in cp["squash"].items()}
    agents = []
    for sec in cp.sections():
        if not sec.startswith("agent."):
            continue
        s = cp[sec]
        _check_keys(sec, s, _AGENT_KEYS)
        g = lambda k, d=None: _float(sec, k, s[k]) if k in s else d  # noqa: E731
        params = UtilityParams(
            k_g=g("k_g", 1.0), k_dv=g("k_dv", 0.38), k_da=g("k_da", 0.0),
            collision_weight=g("collision_weight", 0.0),
            agent_kind=s.get("kind", "pedestrian"),
        )
        agents.append(AgentSpec(
            name=sec[len("agent."):],
            position=(g("x", 0.0), g("y", 0.0)),
            speed=g("speed", 0.0),
            heading=(g("heading_x", 1.0), g("heading_y", 0.0)),
            goal=(g("goal_x", 0.0), g("goal_y", 0.0)),
            params=params,
            stochastic=s.getboolean("stochastic", fallback=False),
        ))
    if not agents:
        raise ConfigurationError("config defines no agents")
    return ScenarioSpec(
        tag=sc.get("tag", "CUSTOM"),
        agents=tuple(agents),
        crossing=(_float("scenario", "crossing_x", sc.get("crossing_x", "0")),
                  _float("scenario", "crossing_y", sc.get("crossing_y", "0"))),
        world=WorldConfig(**world),
        squash=SquashConfig(**squash),
    )


def load_config(path: str | Path) -> ScenarioSpec:
    return from_config(Path(path).read_text())


def save_config(spec: ScenarioSpec, path: str | Path) -> None:
    Path(path).write_text(to_config(spec))


def apply_overrides(spec: ScenarioSpec, overrides: dict[str, str]) -> ScenarioSpec:
    """Apply ``section.key=value`` style overrides through the config round-trip.

    Keys are ``world.<field>``, ``scenario.<field>`` or ``agent.<name>.<field>``.
    """
    cp = configparser.ConfigParser()
    cp.read_string(to_config(spec))
    for dotted, value in overrides.items():
        section, _, key = dotted.rpartition(".")
        if not section or section not in cp:
            raise ConfigurationError(f"unknown override target {dotted!r}")
        if key not in cp[section] and not (section == "world" and key in _WORLD_KEYS):
            raise ConfigurationError(f"unknown key {key!r} in [{section}]")
        cp[section][key] = value
    buf = io.StringIO()
    cp.write(buf)
    return from_config(buf.getvalue())

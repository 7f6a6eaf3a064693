"""Utility of a predicted agent state.

U = k_g * v - k_dv * v**2 - k_da * a**2 - sum(C_i)

with a collision cost C_i that is k_c / tau for pedestrians and
k_sc * (v / (2 tau))**2 (squared stopping deceleration) for vehicles.
"""
from __future__ import annotations

import math

from dataclasses import dataclass
from typing import Iterable, Literal

from numba import njit

from .errors import UnboundedFreeSpeedError
from .kinematics import AgentState, CollisionAssessment

PEDESTRIAN = 0
VEHICLE = 1
KIND_CODES = {"pedestrian": PEDESTRIAN, "vehicle": VEHICLE}

AgentKind = Literal["pedestrian", "vehicle"]


@dataclass(frozen=True)
class UtilityParams:
    k_g: float = 1.0
    k_dv: float = 0.38
    k_da: float = 0.0
    collision_weight: float = 0.0
    agent_kind: AgentKind = "pedestrian"

    def __post_init__(self):
        if self.agent_kind not in KIND_CODES:
            raise ValueError(f"unknown agent kind {self.agent_kind!r}")
        for name in ("k_g", "k_dv", "k_da", "collision_weight"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    @property
    def k_c(self) -> float | None:
        return self.collision_weight if self.agent_kind == "pedestrian" else None

    @property
    def k_sc(self) -> float | None:
        return self.collision_weight if self.agent_kind == "vehicle" else None

    def scaled(self, factor: float) -> "UtilityParams":
        return UtilityParams(
            self.k_g * factor,
            self.k_dv * factor,
            self.k_da * factor,
            self.collision_weight * factor,
            self.agent_kind,
        )


@dataclass(frozen=True)
class SquashConfig:
    """Saturation of single collision costs: c_max * x / (c_max + x), tau >= tau_floor."""

    c_max: float = 1e3
    tau_floor: float = 0.01

    def __post_init__(self):
        if self.c_max <= 0 or self.tau_floor <= 0:
            raise ValueError("c_max and tau_floor must be positive")


def free_speed(params: UtilityParams) -> float:
    if params.k_dv == 0:
        raise UnboundedFreeSpeedError("k_dv = 0 gives an unbounded free speed")
    return params.k_g / (2.0 * params.k_dv)


@njit(cache=True)
def _squash(x, c_max):
    return c_max * x / (c_max + x)


@njit(cache=True)
def _collision_cost(kind, weight, tau, v, c_max, tau_floor):
    if tau < 0.0:
        return 0.0
    t = max(tau, tau_floor)
    if kind == PEDESTRIAN:
        raw = weight / t
    else:
        a_stop = v / (2.0 * t)
        raw = weight * a_stop * a_stop
    return _squash(raw, c_max)


@njit(cache=True)
def _utility(k_g, k_dv, k_da, v, a, goal_active, cost):
    u = -k_dv * v * v - k_da * a * a - cost
    if goal_active:
        u += k_g * v
    return u


def collision_cost(
    params: UtilityParams,
    assessment: CollisionAssessment,
    predicted_v: float,
    squash: SquashConfig = SquashConfig(),
) -> float:
    if not assessment.on_collision_course:
        return 0.0
    return _collision_cost(
        KIND_CODES[params.agent_kind],
        params.collision_weight,
        assessment.tau,
        predicted_v,
        squash.c_max,
        squash.tau_floor,
    )


def utility(
    params: UtilityParams,
    predicted: AgentState,
    assessments: Iterable[CollisionAssessment] = (),
    squash: SquashConfig = SquashConfig(),
    goal_active: bool = True,
) -> float:
    """Utility of ``predicted``; the goal term assumes the agent heads to its goal."""
    cost = sum(collision_cost(params, c, predicted.speed, squash) for c in assessments)
    return _utility(
        params.k_g, params.k_dv, params.k_da,
        predicted.speed, predicted.acceleration, goal_active, cost,
    )

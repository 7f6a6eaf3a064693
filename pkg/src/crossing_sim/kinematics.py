"""Straight-path kinematics: extrapolation, time to collision, minimal predicted distance.

All agents are points moving along a fixed heading. The scalar helpers prefixed
with an underscore are jitted so the simulation kernel can call them directly;
the public functions wrap them around :class:`AgentState`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from numba import njit

from .errors import ConfigurationError

# Reported as the collision time when two agents already overlap at t = 0.
IMMEDIATE = 1e-6
DEFAULT_HORIZON = 20.0
BISECTION_TOL = 1e-4

TAU_FIRST_ENTRY = 0
TAU_CLOSEST_APPROACH = 1


@dataclass(frozen=True)
class AgentState:
    """Kinematic state of one agent at one instant."""

    position: tuple[float, float]
    speed: float
    acceleration: float = 0.0
    heading: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if not self.speed >= 0.0:
            raise ValueError(f"speed must be >= 0, got {self.speed}")
        if not math.isfinite(self.acceleration):
            raise ValueError("acceleration must be finite")
        norm = math.hypot(*self.heading)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"heading must have unit norm, got {norm}")

    @property
    def velocity(self) -> tuple[float, float]:
        return (self.heading[0] * self.speed, self.heading[1] * self.speed)


@dataclass(frozen=True)
class GoalSpec:
    goal_point: tuple[float, float]

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.goal_point):
            raise ValueError("goal coordinates must be finite")


@dataclass(frozen=True)
class CollisionAssessment:
    on_collision_course: bool
    tau: float | None = None
    dist_to_conflict: float | None = None


NO_COLLISION = CollisionAssessment(False)


@njit(cache=True)
def _travel(v, a, t):
    """Distance covered in time t from speed v under constant a, stopping at v = 0."""
    if a < 0.0:
        t_stop = v / -a
        if t <= t_stop:
            return v * t + 0.5 * a * t * t
        return v * t_stop + 0.5 * a * t_stop * t_stop
    return v * t + 0.5 * a * t * t


@njit(cache=True)
def _ttc_const_velocity(px, py, vx, vy, qx, qy, wx, wy, d_c, horizon, mode):
    """Time until |(q + w t) - (p + v t)| < d_c, or -1.0 if not within horizon.

    mode selects first entry into the d_c disc or the instant of closest approach.
    """
    rx = qx - px
    ry = qy - py
    ux = wx - vx
    uy = wy - vy
    c = rx * rx + ry * ry - d_c * d_c
    a = ux * ux + uy * uy
    b = 2.0 * (rx * ux + ry * uy)
    if a < 1e-15:
        return IMMEDIATE if c < 0.0 else -1.0
    if mode == TAU_CLOSEST_APPROACH:
        t_min = -b / (2.0 * a)
        if t_min <= 0.0:
            return IMMEDIATE if c < 0.0 else -1.0
        if t_min > horizon:
            return -1.0
        if c + b * t_min + a * t_min * t_min < 0.0:
            return t_min
        return -1.0
    if c < 0.0:
        return IMMEDIATE
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return -1.0
    t1 = (-b - math.sqrt(disc)) / (2.0 * a)
    if t1 <= 0.0 or t1 > horizon:
        return -1.0
    return t1


@njit(cache=True)
def _gap(px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, t):
    s1 = _travel(v, a, t)
    s2 = _travel(w, b, t)
    dx = (qx + gx * s2) - (px + hx * s1)
    dy = (qy + gy * s2) - (py + hy * s1)
    return math.sqrt(dx * dx + dy * dy)


@njit(cache=True)
def _ttc_sampled(px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, d_c, horizon, step, mode):
    """Time to collision for agents with constant (possibly nonzero) accelerations.

    Samples the gap at ``step`` spacing, looks inside every sampled local
    minimum for a dip below d_c, and refines the entry instant by bisection.
    """
    d0 = _gap(px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, 0.0)
    if d0 < d_c:
        return IMMEDIATE
    n = int(math.ceil(horizon / step - 1e-9))
    t_prev2 = 0.0
    d_prev2 = d0
    t_prev = 0.0
    d_prev = d0
    for i in range(1, n + 1):
        t = min(i * step, horizon)
        d = _gap(px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, t)
        lo = -1.0
        hi = -1.0
        if d < d_c:
            lo = t_prev
            hi = t
        elif i >= 2 and d_prev <= d_prev2 and d_prev <= d:
            # sampled local minimum: search the bracket for a hidden dip
            l = t_prev2
            r = t
            for _ in range(60):
                m1 = l + (r - l) / 3.0
                m2 = r - (r - l) / 3.0
                if _gap(px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, m1) < _gap(
                    px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, m2
                ):
                    r = m2
                else:
                    l = m1
            t_star = 0.5 * (l + r)
            if _gap(px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, t_star) < d_c:
                lo = t_prev2
                hi = t_star
        if hi > 0.0:
            if mode == TAU_CLOSEST_APPROACH:
                l = lo
                r = min(hi + 2.0 * step, horizon)
                for _ in range(80):
                    m1 = l + (r - l) / 3.0
                    m2 = r - (r - l) / 3.0
                    if _gap(px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, m1) < _gap(
                        px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, m2
                    ):
                        r = m2
                    else:
                        l = m1
                return max(0.5 * (l + r), IMMEDIATE)
            while hi - lo > BISECTION_TOL:
                mid = 0.5 * (lo + hi)
                if _gap(px, py, hx, hy, v, a, qx, qy, gx, gy, w, b, mid) < d_c:
                    hi = mid
                else:
                    lo = mid
            return hi
        t_prev2 = t_prev
        d_prev2 = d_prev
        t_prev = t
        d_prev = d
    return -1.0


def extrapolate(state: AgentState, dt: float) -> AgentState:
    """Advance ``state`` by ``dt`` at constant acceleration; motion stops at zero speed."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    v, a = state.speed, state.acceleration
    s = _travel(v, a, dt)
    hx, hy = state.heading
    x, y = state.position
    return replace(
        state,
        position=(x + hx * s, y + hy * s),
        speed=max(0.0, v + a * dt),
    )


def time_to_collision(
    self_state: AgentState,
    other_state: AgentState,
    d_c: float,
    horizon: float = DEFAULT_HORIZON,
    step: float = 0.05,
    mode: int = TAU_FIRST_ENTRY,
) -> CollisionAssessment:
    """Assess whether two constant-state extrapolations come within ``d_c``."""
    if d_c <= 0 or horizon <= 0:
        raise ValueError("d_c and horizon must be positive")
    (px, py), (qx, qy) = self_state.position, other_state.position
    if self_state.acceleration == 0.0 and other_state.acceleration == 0.0:
        vx, vy = self_state.velocity
        wx, wy = other_state.velocity
        tau = _ttc_const_velocity(px, py, vx, vy, qx, qy, wx, wy, d_c, horizon, mode)
    else:
        tau = _ttc_sampled(
            px, py, *self_state.heading, self_state.speed, self_state.acceleration,
            qx, qy, *other_state.heading, other_state.speed, other_state.acceleration,
            d_c, horizon, step, mode,
        )
    if tau < 0:
        return NO_COLLISION
    dist = _travel(self_state.speed, self_state.acceleration, tau)
    return CollisionAssessment(True, tau, dist)


@njit(cache=True)
def _mpd(px, py, vx, vy, qx, qy, wx, wy):
    rx = qx - px
    ry = qy - py
    ux = wx - vx
    uy = wy - vy
    a = ux * ux + uy * uy
    t = 0.0
    if a > 0.0:
        t = max(0.0, -(rx * ux + ry * uy) / a)
    dx = rx + ux * t
    dy = ry + uy * t
    return math.sqrt(dx * dx + dy * dy)


def minimal_predicted_distance(state_a: AgentState, state_b: AgentState) -> float:
    """Smallest future distance between constant-velocity extrapolations (t >= 0)."""
    return _mpd(*state_a.position, *state_a.velocity, *state_b.position, *state_b.velocity)


def time_to_crossing_point(
    state: AgentState, crossing: tuple[float, float], tol: float = 1e-6
) -> float | None:
    """Constant-speed arrival time at ``crossing``; None at standstill or once passed."""
    rx = crossing[0] - state.position[0]
    ry = crossing[1] - state.position[1]
    hx, hy = state.heading
    along = rx * hx + ry * hy
    lateral = abs(rx * hy - ry * hx)
    if lateral > tol:
        raise ConfigurationError(
            f"crossing point {crossing} is {lateral:.3g} m off the agent's path"
        )
    if state.speed == 0.0 or along < 0.0:
        return None
    return along / state.speed

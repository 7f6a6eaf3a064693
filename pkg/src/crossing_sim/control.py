"""Motor primitives, ramp schedules, lookahead evaluation and action triggering.

A pedestrian's controlled quantity is its speed, a vehicle's its acceleration.
Each initiated primitive adds a linear ramp of its magnitude over ``delta_T``
on top of whatever ramps are still in flight.

Ramps are stored in fixed-size slot arrays (start step, magnitude); an empty
slot has magnitude 0. Step indices are relative to an arbitrary origin, which
keeps the arithmetic exact on the engine grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .agent_model import (
    KIND_CODES,
    PEDESTRIAN,
    SquashConfig,
    UtilityParams,
    _collision_cost,
    _utility,
)
from .errors import ConfigurationError
from .kinematics import (
    DEFAULT_HORIZON,
    TAU_FIRST_ENTRY,
    AgentState,
    _travel,
    _ttc_const_velocity,
    _ttc_sampled,
)

DEFAULT_REPERTOIRE = (0.0, -1.0, -0.5, 0.5, 1.0)

EXTRAPOLATE_VELOCITY = 0
EXTRAPOLATE_ACCELERATION = 1
TIE_RTOL = 1e-9
# Decisions keep this cadence when dt is refined, so a finer step only refines integration.
DECISION_INTERVAL = 0.05


@dataclass(frozen=True)
class MotorPrimitive:
    magnitude: float
    index: int


@dataclass(frozen=True)
class ControlSchedule:
    """Control value = base + sum(m * clamp((t - start) / delta_T, 0, 1))."""

    base_value: float
    ramps: tuple[tuple[float, float], ...] = ()
    delta_T: float = 0.3

    def value(self, t: float) -> float:
        out = self.base_value
        for start, mag in self.ramps:
            out += mag * min(max((t - start) / self.delta_T, 0.0), 1.0)
        return out

    def slope(self, t: float) -> float:
        return sum(m / self.delta_T for s, m in self.ramps if s <= t < s + self.delta_T)

    def with_ramp(self, start: float, magnitude: float) -> "ControlSchedule":
        return ControlSchedule(self.base_value, self.ramps + ((start, magnitude),), self.delta_T)


@dataclass(frozen=True)
class ModelConfig:
    delta_T: float = 0.3
    T_p: float | None = None
    dt: float = 0.05
    horizon: float = DEFAULT_HORIZON
    repertoire: tuple[float, ...] = DEFAULT_REPERTOIRE
    tau_mode: int = TAU_FIRST_ENTRY
    extrapolation: int = EXTRAPOLATE_VELOCITY
    decision_interval: float | None = None

    def __post_init__(self):
        if self.delta_T <= 0 or self.dt <= 0:
            raise ConfigurationError("delta_T and dt must be positive")
        if self.T_p is None:
            object.__setattr__(self, "T_p", self.delta_T)
        if self.decision_interval is None:
            object.__setattr__(self, "decision_interval", max(self.dt, DECISION_INTERVAL))
        for name in ("delta_T", "T_p", "decision_interval"):
            ratio = getattr(self, name) / self.dt
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ConfigurationError(f"dt={self.dt} does not divide {name}={getattr(self, name)}")
        if self.repertoire[0] != 0.0:
            raise ConfigurationError("repertoire index 0 must be the null primitive")

    @property
    def n_ramp(self) -> int:
        return round(self.delta_T / self.dt)

    @property
    def n_pred(self) -> int:
        return round(self.T_p / self.dt)

    @property
    def n_decide(self) -> int:
        """Engine steps between decisions."""
        return round(self.decision_interval / self.dt)

    @property
    def primitives(self) -> list[MotorPrimitive]:
        return [MotorPrimitive(m, i) for i, m in enumerate(self.repertoire)]

    def tie_order(self) -> np.ndarray:
        """Non-null primitive indices, preferred first on equal utility gain."""
        idx = range(1, len(self.repertoire))
        key = lambda i: (abs(self.repertoire[i]), self.repertoire[i])  # noqa: E731
        return np.array(sorted(idx, key=key), dtype=np.int64)


@dataclass
class ActionEvaluation:
    utilities: np.ndarray
    repertoire: tuple[float, ...] = DEFAULT_REPERTOIRE

    @property
    def baseline(self) -> float:
        return float(self.utilities[0])

    @property
    def deltas(self) -> np.ndarray:
        return self.utilities - self.utilities[0]


@dataclass
class AccumulatorBank:
    """Per-primitive evidence for stochastic triggering; slot 0 (null) stays at 0."""

    values: np.ndarray
    sigma: float = 0.5
    threshold: float = 1.0
    T: float = 0.4

    def __post_init__(self):
        if self.sigma < 0 or self.threshold <= 0 or self.T <= 0:
            raise ConfigurationError("need sigma >= 0, threshold > 0, T > 0")

    @classmethod
    def zeros(cls, n_primitives: int = len(DEFAULT_REPERTOIRE), **kw) -> "AccumulatorBank":
        return cls(np.zeros(n_primitives), **kw)


@dataclass
class AgentSnapshot:
    """What an agent knows about itself when it evaluates its options."""

    state: AgentState
    schedule: ControlSchedule
    params: UtilityParams
    goal_active: bool = True


# --- jitted core -----------------------------------------------------------


@njit(cache=True)
def _sched(base, rs, rm, k, n_ramp):
    out = base
    for j in range(rm.shape[0]):
        if rm[j] != 0.0:
            f = (k - rs[j]) / n_ramp
            if f > 0.0:
                out += rm[j] * min(f, 1.0)
    return out


@njit(cache=True)
def _slope(rs, rm, k, n_ramp, dt):
    out = 0.0
    for j in range(rm.shape[0]):
        if rm[j] != 0.0 and rs[j] <= k < rs[j] + n_ramp:
            out += rm[j] / (n_ramp * dt)
    return out


@njit(cache=True)
def _add_ramp(rs, rm, k, mag):
    for j in range(rm.shape[0]):
        if rm[j] == 0.0:
            rs[j] = k
            rm[j] = mag
            return
    raise RuntimeError("ramp slots exhausted")


@njit(cache=True)
def _clear(rs, rm):
    for j in range(rm.shape[0]):
        rm[j] = 0.0
        rs[j] = 0


@njit(cache=True)
def _fold(kind, base, rs, rm, k_next, n_ramp):
    """Merge ramps completed by step k_next into the base value."""
    active = False
    for j in range(rm.shape[0]):
        if rm[j] != 0.0:
            if k_next - rs[j] >= n_ramp:
                base += rm[j]
                rm[j] = 0.0
                rs[j] = 0
            else:
                active = True
    if kind == PEDESTRIAN and not active and base < 0.0:
        base = 0.0
    return base


@njit(cache=True)
def _advance(kind, s, v, base, rs, rm, k, n_ramp, dt):
    """Integrate one engine step from step k; rs/rm are updated in place.

    Returns (s, v, base). Speed never drops below zero; a vehicle that comes
    to rest has its acceleration schedule cleared.
    """
    c0 = _sched(base, rs, rm, k, n_ramp)
    c1 = _sched(base, rs, rm, k + 1, n_ramp)
    if kind == PEDESTRIAN:
        if c0 >= 0.0 and c1 >= 0.0:
            ds = 0.5 * (c0 + c1) * dt
        elif c0 <= 0.0 and c1 <= 0.0:
            ds = 0.0
        elif c0 > 0.0:
            ds = 0.5 * c0 * (c0 / (c0 - c1)) * dt
        else:
            ds = 0.5 * c1 * (c1 / (c1 - c0)) * dt
        base = _fold(kind, base, rs, rm, k + 1, n_ramp)
        return s + ds, max(0.0, c1), base
    # vehicle: acceleration linear in the step, speed quadratic
    q = (c1 - c0) / (2.0 * dt)
    v1 = v + c0 * dt + q * dt * dt
    t_stop = -1.0
    if v <= 0.0 and c0 <= 0.0 and not (c0 == 0.0 and q > 0.0):
        t_stop = 0.0
    elif v1 < 0.0 or (q > 0.0 and c0 < 0.0):
        # first root of v + c0 x + q x^2 within (0, dt]
        if abs(q) < 1e-12:
            if c0 < 0.0:
                x = -v / c0
                if x <= dt:
                    t_stop = x
        else:
            disc = c0 * c0 - 4.0 * q * v
            if disc >= 0.0:
                r = math.sqrt(disc)
                x1 = (-c0 - r) / (2.0 * q)
                x2 = (-c0 + r) / (2.0 * q)
                lo = min(x1, x2)
                hi = max(x1, x2)
                if 0.0 <= lo <= dt:
                    t_stop = lo
                elif 0.0 <= hi <= dt:
                    t_stop = hi
    if t_stop >= 0.0:
        x = t_stop
        ds = v * x + 0.5 * c0 * x * x + q * x * x * x / 3.0
        _clear(rs, rm)
        return s + ds, 0.0, 0.0
    ds = v * dt + 0.5 * c0 * dt * dt + q * dt * dt * dt / 3.0
    base = _fold(kind, base, rs, rm, k + 1, n_ramp)
    return s + ds, v1, base


@njit(cache=True)
def _current_accel(kind, v, base, rs, rm, k, n_ramp, dt):
    if kind == PEDESTRIAN:
        a = _slope(rs, rm, k, n_ramp, dt)
        if v <= 0.0 and a < 0.0:
            return 0.0
        return a
    if v <= 0.0:
        return max(0.0, _sched(base, rs, rm, k, n_ramp))
    return _sched(base, rs, rm, k, n_ramp)


@njit(cache=True)
def _evaluate(
    i, k, kind, ox, oy, hx, hy, kg, kdv, kda, kw, goal_active,
    s, v, acc, base, rs, rm, mags, n_ramp, n_pred, dt,
    d_c, horizon, c_max, tau_floor, tau_mode, extrap, out,
):
    """Utility of each primitive for agent i at step k; written into ``out``."""
    n = s.shape[0]
    t_p = n_pred * dt
    rs_c = np.empty_like(rs[i])
    rm_c = np.empty_like(rm[i])
    for m in range(mags.shape[0]):
        rs_c[:] = rs[i]
        rm_c[:] = rm[i]
        if mags[m] != 0.0:
            _add_ramp(rs_c, rm_c, k, mags[m])
        sp = s[i]
        vp = v[i]
        bp = base[i]
        for j in range(n_pred):
            sp, vp, bp = _advance(kind[i], sp, vp, bp, rs_c, rm_c, k + j, n_ramp, dt)
        ap = _current_accel(kind[i], vp, bp, rs_c, rm_c, k + n_pred, n_ramp, dt)
        px = ox[i] + hx[i] * sp
        py = oy[i] + hy[i] * sp
        cost = 0.0
        for o in range(n):
            if o == i:
                continue
            if extrap == EXTRAPOLATE_VELOCITY:
                so = s[o] + v[o] * t_p
                qx = ox[o] + hx[o] * so
                qy = oy[o] + hy[o] * so
                tau = _ttc_const_velocity(
                    px, py, hx[i] * vp, hy[i] * vp,
                    qx, qy, hx[o] * v[o], hy[o] * v[o],
                    d_c, horizon, tau_mode,
                )
            else:
                so = s[o] + _travel(v[o], acc[o], t_p)
                vo = max(0.0, v[o] + acc[o] * t_p)
                qx = ox[o] + hx[o] * so
                qy = oy[o] + hy[o] * so
                # pedestrians are extrapolated at constant speed
                a_self = ap if kind[i] != PEDESTRIAN else 0.0
                a_other = acc[o] if kind[o] != PEDESTRIAN else 0.0
                if vo <= 0.0:
                    a_other = 0.0
                tau = _ttc_sampled(
                    px, py, hx[i], hy[i], vp, a_self,
                    qx, qy, hx[o], hy[o], vo, a_other,
                    d_c, horizon, dt, tau_mode,
                )
            cost += _collision_cost(kind[i], kw[i], tau, vp, c_max, tau_floor)
        out[m] = _utility(kg[i], kdv[i], kda[i], vp, ap, goal_active, cost)


@njit(cache=True)
def _decide(delta, order):
    """Index of the best primitive with a strictly positive gain, or -1.

    Gains closer than TIE_RTOL (relative to the largest gain) count as equal,
    so rounding noise cannot override the tie order.
    """
    eps = 0.0
    for idx in order:
        eps = max(eps, abs(delta[idx]))
    eps *= TIE_RTOL
    best = -1
    best_val = eps
    for idx in order:
        if delta[idx] > best_val:
            best = idx
            best_val = delta[idx] + eps
    return best


@njit(cache=True)
def _accumulate(acc, delta, noise, dt, sigma, threshold, T, order):
    """One evidence update; returns the triggered index (-1 if none)."""
    gain = dt / T
    sq = math.sqrt(dt)
    for idx in order:
        acc[idx] += gain * (delta[idx] - acc[idx]) + sigma * noise[idx] * sq
    best = -1
    best_val = threshold
    for idx in order:
        if acc[idx] > best_val:
            best = idx
            best_val = acc[idx]
    if best >= 0:
        acc[:] = 0.0
    return best


# --- public API ------------------------------------------------------------


def _slots(schedule: ControlSchedule, t_now: float, dt: float, extra: int = 2):
    n = len(schedule.ramps) + extra
    rs = np.zeros(n, dtype=np.int64)
    rm = np.zeros(n)
    for j, (start, mag) in enumerate(schedule.ramps):
        rs[j] = round((start - t_now) / dt)
        rm[j] = mag
    return rs, rm


def evaluate_primitives(
    agent: AgentSnapshot,
    others: list[AgentState],
    config: ModelConfig = ModelConfig(),
    squash: SquashConfig = SquashConfig(),
    d_c: float = 1.0,
    t_now: float = 0.0,
    other_kinds: list[str] | None = None,
) -> ActionEvaluation:
    """Predict each primitive ``T_p`` ahead (others held at constant state) and score it."""
    if abs(agent.schedule.delta_T - config.delta_T) > 1e-12:
        raise ConfigurationError("schedule and model disagree on delta_T")
    states = [agent.state] + list(others)
    n = len(states)
    other_kinds = other_kinds or ["pedestrian"] * (n - 1)
    kinds = [KIND_CODES[agent.params.agent_kind]] + [KIND_CODES[k] for k in other_kinds]
    rs0, rm0 = _slots(agent.schedule, t_now, config.dt)
    rs = np.zeros((n, rs0.size), dtype=np.int64)
    rm = np.zeros((n, rm0.size))
    rs[0], rm[0] = rs0, rm0
    base = np.zeros(n)
    base[0] = agent.schedule.base_value
    p = agent.params
    zeros = np.zeros(n)
    utilities = np.empty(len(config.repertoire))
    _evaluate(
        0, 0, np.array(kinds, dtype=np.int64),
        # origins placed so that progress s = 0 maps to the current position
        np.array([st.position[0] for st in states]),
        np.array([st.position[1] for st in states]),
        np.array([st.heading[0] for st in states]),
        np.array([st.heading[1] for st in states]),
        np.array([p.k_g] + [0.0] * (n - 1)),
        np.array([p.k_dv] + [0.0] * (n - 1)),
        np.array([p.k_da] + [0.0] * (n - 1)),
        np.array([p.collision_weight] + [0.0] * (n - 1)),
        agent.goal_active,
        zeros.copy(),
        np.array([st.speed for st in states]),
        np.array([st.acceleration for st in states]),
        base, rs, rm,
        np.asarray(config.repertoire, dtype=np.float64),
        config.n_ramp, config.n_pred, config.dt,
        d_c, config.horizon, squash.c_max, squash.tau_floor,
        config.tau_mode, config.extrapolation, utilities,
    )
    return ActionEvaluation(utilities, tuple(config.repertoire))


def decide_deterministic(
    evaluation: ActionEvaluation, config: ModelConfig | None = None
) -> MotorPrimitive | None:
    """Highest positive gain wins; ties go to the smaller, then the negative, magnitude."""
    config = config or ModelConfig(repertoire=evaluation.repertoire)
    idx = _decide(np.asarray(evaluation.deltas, dtype=np.float64), config.tie_order())
    if idx < 0:
        return None
    return MotorPrimitive(evaluation.repertoire[idx], int(idx))


def step_accumulators(
    bank: AccumulatorBank,
    evaluation: ActionEvaluation,
    dt: float,
    noise_draws: np.ndarray,
    config: ModelConfig | None = None,
) -> tuple[AccumulatorBank, MotorPrimitive | None]:
    """Low-pass noisy accumulation of gains; returns the updated bank and any trigger."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    config = config or ModelConfig(repertoire=evaluation.repertoire)
    values = np.array(bank.values, dtype=np.float64)
    idx = _accumulate(
        values,
        np.asarray(evaluation.deltas, dtype=np.float64),
        np.asarray(noise_draws, dtype=np.float64),
        dt, bank.sigma, bank.threshold, bank.T, config.tie_order(),
    )
    new = AccumulatorBank(values, bank.sigma, bank.threshold, bank.T)
    if idx < 0:
        return new, None
    return new, MotorPrimitive(evaluation.repertoire[idx], int(idx))

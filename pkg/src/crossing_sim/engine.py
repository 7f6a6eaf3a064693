"""Discrete-time world: decisions, ramp scheduling, integration, logging."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from numba import njit

from .agent_model import KIND_CODES, PEDESTRIAN, SquashConfig
from .control import (
    AccumulatorBank,
    ModelConfig,
    _accumulate,
    _add_ramp,
    _advance,
    _current_accel,
    _decide,
    _evaluate,
)
from .errors import ConfigurationError, NumericFaultError

if TYPE_CHECKING:
    from .scenarios import ScenarioSpec

GOAL_MARGIN = 2.0
ONSET_SPEED = 0.2


@dataclass(frozen=True)
class WorldConfig:
    dt: float = 0.05
    t_max: float = 30.0
    d_c: float = 1.0
    t_see: float = 0.0
    goal_margin: float = GOAL_MARGIN
    d_tol: float | None = None

    def __post_init__(self):
        if self.dt <= 0 or self.t_max <= 0 or self.d_c <= 0:
            raise ConfigurationError("dt, t_max and d_c must be positive")
        if self.t_see < 0:
            raise ConfigurationError("t_see must be >= 0")
        if self.d_tol is not None and self.d_tol <= 0:
            raise ConfigurationError("d_tol must be positive")

    @property
    def tolerance(self) -> float:
        """Distance agents treat as a predicted collision (defaults to ``d_c``)."""
        return self.d_c if self.d_tol is None else self.d_tol

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass(frozen=True)
class AccumulatorConfig:
    sigma: float = 0.5
    threshold: float = 1.0
    T: float = 0.4

    def bank(self, n_primitives: int) -> AccumulatorBank:
        return AccumulatorBank.zeros(n_primitives, sigma=self.sigma, threshold=self.threshold, T=self.T)


@dataclass
class TrajectoryLog:
    """One row per agent per step. Arrays are indexed [step, agent]."""

    time: np.ndarray
    agent_ids: list[str]
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    primitive: np.ndarray
    progress: np.ndarray | None = None
    delta_u: np.ndarray | None = None
    accumulators: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return self.time.size

    def agent_index(self, agent_id: str) -> int:
        return self.agent_ids.index(agent_id)

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                for line in header_comment.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "agent_id", "x_m", "y_m", "v_mps", "a_mps2", "primitive"])
            for k in range(self.n_rows):
                for i, name in enumerate(self.agent_ids):
                    p = self.primitive[k, i]
                    w.writerow([
                        _fmt(self.time[k]), name, _fmt(self.x[k, i]), _fmt(self.y[k, i]),
                        _fmt(self.v[k, i]), _fmt(self.a[k, i]), "" if math.isnan(p) else _fmt(p),
                    ])

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrajectoryLog":
        rows: list[list[str]] = []
        with open(path, newline="") as fh:
            lines = (ln for ln in fh if not ln.startswith("#"))
            reader = csv.reader(lines)
            header = next(reader)
            if header[:2] != ["time_s", "agent_id"]:
                raise ConfigurationError(f"{path}: not a trajectory CSV")
            rows = list(reader)
        ids: list[str] = []
        for r in rows:
            if r[1] not in ids:
                ids.append(r[1])
            else:
                break
        n = len(ids)
        if len(rows) % n:
            raise ConfigurationError(f"{path}: ragged trajectory rows")
        m = len(rows) // n
        cols = np.array([[float(c) if c else np.nan for c in (r[0], *r[2:])] for r in rows])
        cols = cols.reshape(m, n, 6)
        return cls(
            time=cols[:, 0, 0], agent_ids=ids, x=cols[:, :, 1], y=cols[:, :, 2],
            v=cols[:, :, 3], a=cols[:, :, 4], primitive=cols[:, :, 5],
        )


def _fmt(x: float) -> str:
    return f"{x:.9g}"


@dataclass
class RunOutcome:
    log: TrajectoryLog
    collision_flag: bool
    min_distance: float
    t_cross: list[float | None]
    pass_order: list[str]
    crossing: tuple[float, float]
    onset_time: list[float | None] = field(default_factory=list)
    headings: list[tuple[float, float]] = field(default_factory=list)
    t_see: float = 0.0
    fault: str | None = None

    def index(self, agent_id: str) -> int:
        return self.log.agent_index(agent_id)

    def progress_to_crossing(self, i: int) -> np.ndarray:
        """Signed progress of agent ``i`` relative to the crossing point, per row."""
        hx, hy = self.headings[i]
        return (self.log.x[:, i] - self.crossing[0]) * hx + (self.log.y[:, i] - self.crossing[1]) * hy

    def summary(self) -> dict:
        return {
            "agents": self.log.agent_ids,
            "collision": self.collision_flag,
            "min_distance_m": self.min_distance,
            "t_cross_s": self.t_cross,
            "pass_order": self.pass_order,
            "onset_time_s": self.onset_time,
            "duration_s": float(self.log.time[-1]),
            "fault": self.fault,
        }

    def to_json(self, path: str | Path, extra: dict | None = None) -> None:
        payload = self.summary()
        if extra:
            payload.update(extra)
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@njit(cache=True)
def _simulate(
    kind, ox, oy, hx, hy, kg, kdv, kda, kw, goal_end, s0, v0, stochastic,
    mags, order, n_ramp, n_pred, dt, n_steps, k_see, k_dec,
    d_c, d_tol, horizon, c_max, tau_floor, tau_mode, extrap,
    sigma, threshold, T_acc, noise, keep_internals,
):
    n = kind.shape[0]
    M = mags.shape[0]
    K = n_ramp + 2
    s = s0.copy()
    v = v0.copy()
    base = np.zeros(n)
    for i in range(n):
        base[i] = v0[i] if kind[i] == PEDESTRIAN else 0.0
    rs = np.zeros((n, K), dtype=np.int64)
    rm = np.zeros((n, K))
    bank = np.zeros((n, M))
    acc = np.zeros(n)
    U = np.empty(M)
    delta = np.empty(M)
    chosen = np.full(n, -1, dtype=np.int64)

    log_s = np.full((n_steps + 1, n), np.nan)
    log_v = np.full((n_steps + 1, n), np.nan)
    log_a = np.full((n_steps + 1, n), np.nan)
    log_p = np.full((n_steps + 1, n), np.nan)
    n_int = n_steps + 1 if keep_internals else 1
    log_du = np.full((n_int, n, M), np.nan)
    log_acc = np.full((n_int, n, M), np.nan)

    collided = False
    fault_step = -1
    min_d = np.inf
    for i in range(n):
        log_s[0, i] = s[i]
        log_v[0, i] = v[i]
    rows = 1
    for i in range(n):
        for j in range(i + 1, n):
            dx = (ox[i] + hx[i] * s[i]) - (ox[j] + hx[j] * s[j])
            dy = (oy[i] + hy[i] * s[i]) - (oy[j] + hy[j] * s[j])
            min_d = min(min_d, math.sqrt(dx * dx + dy * dy))
    if min_d < d_c:
        collided = True

    for k in range(n_steps):
        if collided:
            break
        for i in range(n):
            acc[i] = _current_accel(kind[i], v[i], base[i], rs[i], rm[i], k, n_ramp, dt)
        chosen[:] = -1
        if k >= k_see and (k - k_see) % k_dec == 0:
            # all agents decide on the same frozen snapshot
            for i in range(n):
                _evaluate(
                    i, k, kind, ox, oy, hx, hy, kg, kdv, kda, kw, s[i] <= goal_end[i],
                    s, v, acc, base, rs, rm, mags, n_ramp, n_pred, dt,
                    d_tol, horizon, c_max, tau_floor, tau_mode, extrap, U,
                )
                for m in range(M):
                    delta[m] = U[m] - U[0]
                    if math.isnan(delta[m]):
                        fault_step = k
                if stochastic[i]:
                    chosen[i] = _accumulate(
                        bank[i], delta, noise[k, i], dt * k_dec, sigma, threshold, T_acc, order
                    )
                else:
                    chosen[i] = _decide(delta, order)
                if keep_internals:
                    log_du[k, i, :] = delta
                    log_acc[k, i, :] = bank[i]
        if fault_step >= 0:
            break
        for i in range(n):
            if chosen[i] >= 0:
                _add_ramp(rs[i], rm[i], k, mags[chosen[i]])
                log_p[k, i] = mags[chosen[i]]
            log_a[k, i] = _current_accel(kind[i], v[i], base[i], rs[i], rm[i], k, n_ramp, dt)
        for i in range(n):
            s[i], v[i], base[i] = _advance(kind[i], s[i], v[i], base[i], rs[i], rm[i], k, n_ramp, dt)
            if not (math.isfinite(s[i]) and math.isfinite(v[i]) and math.isfinite(base[i])):
                fault_step = k
        if fault_step >= 0:
            break
        for i in range(n):
            log_s[k + 1, i] = s[i]
            log_v[k + 1, i] = v[i]
        rows = k + 2
        for i in range(n):
            for j in range(i + 1, n):
                dx = (ox[i] + hx[i] * s[i]) - (ox[j] + hx[j] * s[j])
                dy = (oy[i] + hy[i] * s[i]) - (oy[j] + hy[j] * s[j])
                d = math.sqrt(dx * dx + dy * dy)
                if d < min_d:
                    min_d = d
                if d < d_c:
                    collided = True
        done = True
        for i in range(n):
            if s[i] <= goal_end[i]:
                done = False
        if done:
            break
    last = rows - 1
    for i in range(n):
        log_a[last, i] = _current_accel(kind[i], v[i], base[i], rs[i], rm[i], last, n_ramp, dt)
    return rows, log_s, log_v, log_a, log_p, log_du, log_acc, collided, min_d, fault_step


def crossing_time(time: np.ndarray, progress: np.ndarray, s_cross: float) -> float | None:
    """First instant the progress coordinate exceeds ``s_cross`` (linear interpolation)."""
    idx = np.flatnonzero(progress > s_cross)
    if idx.size == 0:
        return None
    k = int(idx[0])
    if k == 0:
        return float(time[0])
    s0, s1 = progress[k - 1], progress[k]
    return float(time[k - 1] + (s_cross - s0) / (s1 - s0) * (time[k] - time[k - 1]))


def onset_time(time: np.ndarray, speed: np.ndarray, t_cross: float | None,
               threshold: float = ONSET_SPEED) -> float | None:
    """First time the speed exceeds ``threshold`` and stays above it until crossing."""
    end = len(time) if t_cross is None else int(np.searchsorted(time, t_cross, side="right"))
    above = speed[:end] > threshold
    if end == 0 or not above[-1]:
        return None
    below = np.flatnonzero(~above)
    k = 0 if below.size == 0 else int(below[-1]) + 1
    return float(time[k])


def run(
    scenario: "ScenarioSpec",
    world: WorldConfig | None = None,
    model: ModelConfig | None = None,
    squash: SquashConfig | None = None,
    accumulator: AccumulatorConfig | None = None,
    seed: int | np.random.SeedSequence | None = None,
    keep_internals: bool = False,
) -> RunOutcome:
    """Simulate ``scenario``. Agents flagged stochastic need a ``seed``.

    Decisions start at ``world.t_see``; before that every agent holds its
    initial speed.
    """
    world = world or scenario.world
    model = model or ModelConfig(dt=world.dt)
    squash = squash or scenario.squash
    accumulator = accumulator or AccumulatorConfig()
    if abs(model.dt - world.dt) > 1e-12:
        raise ConfigurationError(f"model dt {model.dt} != world dt {world.dt}")
    model = ModelConfig(**{**asdict(model), "dt": world.dt})  # re-validates divisibility
    k_see = world.t_see / world.dt
    if abs(k_see - round(k_see)) > 1e-9:
        raise ConfigurationError("t_see must be a multiple of dt")

    agents = scenario.agents
    n = len(agents)
    kind = np.array([KIND_CODES[a.params.agent_kind] for a in agents], dtype=np.int64)
    ox = np.array([a.position[0] for a in agents], dtype=np.float64)
    oy = np.array([a.position[1] for a in agents], dtype=np.float64)
    hx = np.array([a.heading[0] for a in agents], dtype=np.float64)
    hy = np.array([a.heading[1] for a in agents], dtype=np.float64)
    goal_end = np.array([a.progress_to(a.goal) + world.goal_margin for a in agents])
    s_cross = [a.progress_to(scenario.crossing) for a in agents]
    stochastic = np.array([a.stochastic for a in agents], dtype=np.bool_)
    mags = np.asarray(model.repertoire, dtype=np.float64)
    n_steps = world.n_steps
    if stochastic.any():
        if seed is None:
            raise ConfigurationError("stochastic agents need a seed")
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((n_steps, n, mags.size))
    else:
        noise = np.zeros((1, n, mags.size))

    (rows, log_s, log_v, log_a, log_p, log_du, log_acc,
     collided, min_d, fault_step) = _simulate(
        kind, ox, oy, hx, hy,
        np.array([a.params.k_g for a in agents], dtype=np.float64),
        np.array([a.params.k_dv for a in agents], dtype=np.float64),
        np.array([a.params.k_da for a in agents], dtype=np.float64),
        np.array([a.params.collision_weight for a in agents], dtype=np.float64),
        goal_end, np.zeros(n), np.array([a.speed for a in agents], dtype=np.float64),
        stochastic, mags, model.tie_order(), model.n_ramp, model.n_pred, world.dt,
        n_steps, int(round(k_see)), model.n_decide, world.d_c, world.tolerance, model.horizon, squash.c_max,
        squash.tau_floor, model.tau_mode, model.extrapolation,
        accumulator.sigma, accumulator.threshold, accumulator.T, noise, keep_internals,
    )
    if fault_step >= 0:
        raise NumericFaultError(int(fault_step))

    time = np.arange(rows) * world.dt
    prog = log_s[:rows]
    log = TrajectoryLog(
        time=time,
        agent_ids=[a.name for a in agents],
        x=ox + hx * prog,
        y=oy + hy * prog,
        v=log_v[:rows],
        a=log_a[:rows],
        primitive=log_p[:rows],
        progress=prog,
        delta_u=log_du[:rows] if keep_internals else None,
        accumulators=log_acc[:rows] if keep_internals else None,
    )
    return outcome_from_log(log, scenario.crossing, world.d_c, [a.heading for a in agents],
                            collided=bool(collided), min_distance=float(min_d), t_see=world.t_see)


def outcome_from_log(
    log: TrajectoryLog,
    crossing: tuple[float, float],
    d_c: float,
    headings: list[tuple[float, float]] | None = None,
    collided: bool | None = None,
    min_distance: float | None = None,
    t_see: float = 0.0,
) -> RunOutcome:
    """Derive crossing times, pass order and collision facts from a trajectory log."""
    n = len(log.agent_ids)
    if headings is None:
        headings = [_heading_from(log.x[:, i], log.y[:, i]) for i in range(n)]
    t_cross = []
    for i in range(n):
        hx, hy = headings[i]
        prog = (log.x[:, i] - crossing[0]) * hx + (log.y[:, i] - crossing[1]) * hy
        t_cross.append(crossing_time(log.time, prog, 0.0))
    if min_distance is None:
        min_distance = float("inf")
        for i in range(n):
            for j in range(i + 1, n):
                d = np.hypot(log.x[:, i] - log.x[:, j], log.y[:, i] - log.y[:, j])
                min_distance = min(min_distance, float(d.min()))
    if collided is None:
        collided = min_distance < d_c
    order = sorted(
        (i for i in range(n) if t_cross[i] is not None),
        key=lambda i: (t_cross[i], log.agent_ids[i]),
    )
    onsets = [onset_time(log.time, log.v[:, i], t_cross[i]) for i in range(n)]
    return RunOutcome(
        log=log,
        collision_flag=collided,
        min_distance=min_distance,
        t_cross=t_cross,
        pass_order=[log.agent_ids[i] for i in order],
        crossing=tuple(crossing),
        onset_time=onsets,
        headings=[tuple(h) for h in headings],
        t_see=t_see,
    )


def _heading_from(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    dx, dy = x[-1] - x[0], y[-1] - y[0]
    norm = math.hypot(dx, dy)
    if norm == 0:
        return (1.0, 0.0)
    return (dx / norm, dy / norm)

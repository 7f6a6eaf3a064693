"""Run metrics: pedestrian-pair Booleans, MPD analysis, gap, yield and assertion classifiers."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import RunOutcome
from .errors import ConfigurationError
from .kinematics import _mpd

T_A = 0.5
SPEED_DEADBAND = 1e-6
YIELD_SPEED_DROP = 0.05
YIELD_DECEL = 0.05
YIELD_DURATION = 0.3
ACCEL_MARGIN = 0.1
HIST_BIN = 0.25

LAPF_MIN, FPA_MIN, SPD_MIN = 80.0, 20.0, 20.0
FPD_MAX, SPA_MAX, CO_MAX = 5.0, 5.0, 5.0

CR_CLASSES = ("ped_yielded", "veh_yielded", "neither", "collision")


@dataclass(frozen=True)
class PPMetrics:
    lapf: bool
    fpa: bool
    spd: bool
    fpd: bool
    spa: bool
    co: bool
    lead_agent: str | None
    first_passer: str | None
    mpd_at_tsee: float
    mpd_at_tcross: float | None
    complete: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _row_at(time: np.ndarray, t: float) -> int:
    k = int(round((t - time[0]) / (time[1] - time[0]))) if time.size > 1 else 0
    return min(max(k, 0), time.size - 1)


def lead_agent(outcome: RunOutcome) -> int | None:
    """Agent with the shorter constant-speed time to the crossing at t_see; None on a tie."""
    k = _row_at(outcome.log.time, outcome.t_see)
    times = []
    for i in range(len(outcome.log.agent_ids)):
        dist = -outcome.progress_to_crossing(i)[k]
        v = outcome.log.v[k, i]
        times.append(dist / v if v > 0 else math.inf)
    if len(times) != 2 or times[0] == times[1]:
        return None
    return int(np.argmin(times))


def _speed_change(outcome: RunOutcome, i: int, T_a: float) -> float:
    k0 = _row_at(outcome.log.time, outcome.t_see)
    k1 = _row_at(outcome.log.time, outcome.t_see + T_a)
    return float(outcome.log.v[k1, i] - outcome.log.v[k0, i])


def pp_metrics(outcome: RunOutcome, T_a: float = T_A) -> PPMetrics:
    ids = outcome.log.agent_ids
    if len(ids) != 2:
        raise ConfigurationError("pedestrian-pair metrics need exactly two agents")
    lead = lead_agent(outcome)
    order = [ids.index(a) for a in outcome.pass_order]
    complete = len(order) == 2
    if len(order) == 1:
        order.append(1 - order[0])
    series = mpd_series(outcome)
    mpd_see = float(series[0, 1]) if series.size else float("nan")
    mpd_cross = float(series[-1, 1]) if series.size and order else None
    if not order:
        return PPMetrics(False, False, False, False, False, outcome.collision_flag,
                         None if lead is None else ids[lead], None, mpd_see, mpd_cross, False)
    fp, sp = order
    d_fp = _speed_change(outcome, fp, T_a)
    d_sp = _speed_change(outcome, sp, T_a)
    return PPMetrics(
        lapf=lead is not None and lead == fp,
        fpa=d_fp > SPEED_DEADBAND,
        spd=d_sp < -SPEED_DEADBAND,
        fpd=d_fp < -SPEED_DEADBAND,
        spa=d_sp > SPEED_DEADBAND,
        co=outcome.collision_flag,
        lead_agent=None if lead is None else ids[lead],
        first_passer=ids[fp],
        mpd_at_tsee=mpd_see,
        mpd_at_tcross=mpd_cross,
        complete=complete,
    )


@dataclass(frozen=True)
class SweepCellVerdict:
    lapf: float
    fpa: float
    spd: float
    fpd: float
    spa: float
    co: float
    n_runs: int = 0
    n_faulted: int = 0

    @property
    def failures(self) -> tuple[str, ...]:
        out = []
        if not self.lapf > LAPF_MIN:
            out.append("LAPF")
        if not self.fpa > FPA_MIN:
            out.append("FPA")
        if not self.spd > SPD_MIN:
            out.append("SPD")
        if self.fpd > FPD_MAX:
            out.append("FPD")
        if self.spa > SPA_MAX:
            out.append("SPA")
        if self.co > CO_MAX:
            out.append("CO")
        return tuple(out)

    @property
    def accepted(self) -> bool:
        return not self.failures and self.n_faulted == 0

    @property
    def rejected_reason(self) -> str | None:
        if self.n_faulted:
            return "FAULT"
        return "+".join(self.failures) or None

    @classmethod
    def from_metrics(cls, runs: Sequence[PPMetrics], n_faulted: int = 0) -> "SweepCellVerdict":
        n = len(runs)
        if n == 0:
            return cls(0, 0, 0, 0, 0, 0, 0, n_faulted)
        with_lead = [m for m in runs if m.lead_agent is not None]
        pct = lambda xs: 100.0 * sum(xs) / n  # noqa: E731
        lapf = 100.0 * sum(m.lapf for m in with_lead) / len(with_lead) if with_lead else 0.0
        return cls(
            lapf=lapf,
            fpa=pct(m.fpa for m in runs),
            spd=pct(m.spd for m in runs),
            fpd=pct(m.fpd for m in runs),
            spa=pct(m.spa for m in runs),
            co=pct(m.co for m in runs),
            n_runs=n,
            n_faulted=n_faulted,
        )


def mpd_series(outcome: RunOutcome) -> np.ndarray:
    """(time, MPD) rows from t_see up to the last row before either agent reaches the crossing."""
    log = outcome.log
    if len(log.agent_ids) != 2:
        raise ConfigurationError("MPD needs exactly two agents")
    k0 = _row_at(log.time, outcome.t_see)
    prog = np.stack([outcome.progress_to_crossing(i) for i in range(2)], axis=1)
    reached = np.flatnonzero((prog >= 0).any(axis=1))
    end = int(reached[0]) if reached.size else log.n_rows
    rows = []
    (hx0, hy0), (hx1, hy1) = outcome.headings
    for k in range(k0, max(end, k0 + 1)):
        v0, v1 = log.v[k, 0], log.v[k, 1]
        d = _mpd(log.x[k, 0], log.y[k, 0], hx0 * v0, hy0 * v0,
                 log.x[k, 1], log.y[k, 1], hx1 * v1, hy1 * v1)
        rows.append((log.time[k], d))
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def mpd_decile_table(pairs: Iterable[tuple[float, float]] | Iterable[PPMetrics]) -> np.ndarray:
    """Group runs into ten by ascending MPD at t_see; return group means, shape (10, 2).

    Column 0 is the mean MPD at t_see, column 1 the mean MPD at t_cross.
    """
    rows = []
    for p in pairs:
        if isinstance(p, PPMetrics):
            if p.mpd_at_tcross is None:
                continue
            p = (p.mpd_at_tsee, p.mpd_at_tcross)
        rows.append(p)
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, 2)
    if arr.shape[0] < 10:
        raise ConfigurationError(f"need at least 10 runs for deciles, got {arr.shape[0]}")
    arr = arr[np.argsort(arr[:, 0], kind="stable")]
    return np.array([g.mean(axis=0) for g in np.array_split(arr, 10)])


def crossed_safely_first(outcome: RunOutcome, pedestrian: str = "pedestrian") -> bool:
    return (not outcome.collision_flag and bool(outcome.pass_order)
            and outcome.pass_order[0] == pedestrian)


def min_crossable_gap(
    k_c: float,
    k_sc: float,
    starts: Sequence[float] | None = None,
    vehicle_speed: float | None = None,
    **build_kw,
) -> float:
    """Smallest gap of the CD grid at which the pedestrian crosses first without collision."""
    from .engine import run
    from .scenarios import CD_STARTS, VEHICLE_SPEED, build_cd

    starts = CD_STARTS if starts is None else starts
    vehicle_speed = VEHICLE_SPEED if vehicle_speed is None else vehicle_speed
    for x in sorted(starts):
        spec = build_cd(x, k_c, k_sc, vehicle_speed=vehicle_speed, **build_kw)
        if crossed_safely_first(run(spec)):
            return x / vehicle_speed
    return math.inf


def min_gap_from_outcomes(gaps: Sequence[float], outcomes: Sequence[RunOutcome]) -> float:
    for g, o in sorted(zip(gaps, outcomes), key=lambda p: p[0]):
        if crossed_safely_first(o):
            return float(g)
    return math.inf


def _longest_run(mask: np.ndarray) -> int:
    best = cur = 0
    for m in mask:
        cur = cur + 1 if m else 0
        best = max(best, cur)
    return best


def reduced_speed(outcome: RunOutcome, i: int, until: float | None = None) -> bool:
    """True if agent ``i`` slowed measurably below its initial speed for one ΔT.

    Measurable means a speed deficit above 0.05 m/s or a deceleration above
    0.05 m/s², either held for at least 0.3 s before ``until``.
    """
    log = outcome.log
    end = log.n_rows if until is None else int(np.searchsorted(log.time, until, side="right"))
    if end < 2:
        return False
    dt = log.time[1] - log.time[0]
    need = int(round(YIELD_DURATION / dt))
    v = log.v[:end, i]
    a = np.nan_to_num(log.a[:end, i])
    return (_longest_run(v < v[0] - YIELD_SPEED_DROP) >= need
            or _longest_run(a < -YIELD_DECEL) >= need)


def classify_cr(outcome: RunOutcome, pedestrian: str = "pedestrian",
                vehicle: str = "vehicle") -> str:
    if outcome.collision_flag:
        return "collision"
    ids = outcome.log.agent_ids
    ip, iv = ids.index(pedestrian), ids.index(vehicle)
    order = outcome.pass_order
    if not order:
        second = None
    elif len(order) == 1:
        second = iv if order[0] == pedestrian else ip
    else:
        second = ids.index(order[1])
    if second is None:
        slowed = [i for i in (ip, iv) if reduced_speed(outcome, i)]
        return "ped_yielded" if ip in slowed else "veh_yielded" if slowed else "neither"
    if reduced_speed(outcome, second, outcome.t_cross[second]):
        return "ped_yielded" if second == ip else "veh_yielded"
    return "neither"


def vehicle_accelerated(outcome: RunOutcome, vehicle: str = "vehicle") -> bool:
    i = outcome.index(vehicle)
    log = outcome.log
    t_end = outcome.t_cross[i]
    end = log.n_rows if t_end is None else int(np.searchsorted(log.time, t_end, side="right"))
    return bool(np.any(log.v[:end, i] > log.v[0, i] + ACCEL_MARGIN))


def vehicle_in_lag(outcome: RunOutcome, vehicle: str = "vehicle",
                   pedestrian: str = "pedestrian") -> bool:
    """Constant-speed arrival comparison at the start of the run."""
    iv, ip = outcome.index(vehicle), outcome.index(pedestrian)
    t = []
    for i in (iv, ip):
        v0 = outcome.log.v[0, i]
        t.append(-outcome.progress_to_crossing(i)[0] / v0 if v0 > 0 else math.inf)
    return t[0] > t[1]


def assertion_stats(
    accelerated: Sequence[bool], in_lag: Sequence[bool]
) -> tuple[float, float | None]:
    """(% of vehicles that accelerated, % of accelerators that started in lag)."""
    acc = np.asarray(accelerated, dtype=bool)
    lag = np.asarray(in_lag, dtype=bool)
    if acc.size == 0:
        raise ConfigurationError("no runs")
    pct = 100.0 * acc.mean()
    if not acc.any():
        return pct, None
    return pct, 100.0 * lag[acc].mean()


def assertion_stats_from_outcomes(outcomes: Sequence[RunOutcome]) -> tuple[float, float | None]:
    return assertion_stats([vehicle_accelerated(o) for o in outcomes],
                           [vehicle_in_lag(o) for o in outcomes])


@dataclass
class ResponseHistogram:
    gap: float
    edges: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    n_no_onset: int

    @property
    def n_onsets(self) -> int:
        return int(self.pre.sum() + self.post.sum())

    @property
    def pre_fraction(self) -> float:
        return float(self.pre.sum() / self.n_onsets) if self.n_onsets else float("nan")

    @property
    def post_fraction(self) -> float:
        return float(self.post.sum() / self.n_onsets) if self.n_onsets else float("nan")

    def to_dict(self) -> dict:
        return {
            "gap_s": self.gap,
            "bin_edges_s": [float(e) for e in self.edges],
            "pre_pass_counts": [int(c) for c in self.pre],
            "post_pass_counts": [int(c) for c in self.post],
            "pre_fraction": self.pre_fraction,
            "post_fraction": self.post_fraction,
            "n_no_onset": self.n_no_onset,
        }

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        lines = [f"# {ln}" for ln in (header_comment or "").splitlines()]
        lines.append("bin_start_s,bin_end_s,pre_pass,post_pass")
        for k in range(self.pre.size):
            lines.append(f"{self.edges[k]:.9g},{self.edges[k + 1]:.9g},{self.pre[k]},{self.post[k]}")
        Path(path).write_text("\n".join(lines) + "\n")


def response_histogram(
    onsets: Sequence[float | None],
    pass_times: Sequence[float | None],
    gap: float,
    bin_width: float = HIST_BIN,
    t_max: float | None = None,
) -> ResponseHistogram:
    """Bin crossing-onset times, split by whether they precede the vehicle's pass.

    A vehicle that never passes (``None``) makes every onset a pre-pass onset.
    """
    if len(onsets) != len(pass_times):
        raise ConfigurationError("onsets and pass_times differ in length")
    valid = [(o, p) for o, p in zip(onsets, pass_times) if o is not None]
    times = np.array([o for o, _ in valid], dtype=np.float64)
    is_pre = np.array([p is None or o < p for o, p in valid], dtype=bool)
    top = t_max if t_max is not None else (times.max() if times.size else 0.0)
    n_bins = max(1, int(math.ceil(top / bin_width - 1e-9)))
    if times.size and times.max() >= n_bins * bin_width:
        n_bins += 1
    edges = np.arange(n_bins + 1) * bin_width
    pre, _ = np.histogram(times[is_pre], bins=edges)
    post, _ = np.histogram(times[~is_pre], bins=edges)
    return ResponseHistogram(gap, edges, pre, post, len(onsets) - len(valid))


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")

"""Parameter grids and batteries of runs, executed in parallel over cells."""
from __future__ import annotations

import csv
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics as M
from . import scenarios as S
from .engine import AccumulatorConfig, RunOutcome, run
from .errors import ConfigurationError, CrossingSimError

THREADS_ENV = "CROSSING_SIM_THREADS"
PP_SPEEDS = tuple(round(0.1 * i, 1) for i in range(10))


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ConfigurationError(f"axis {self.name}: count must be >= 2")
        if not self.hi > self.lo:
            raise ConfigurationError(f"axis {self.name}: need hi > lo")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)

    def to_dict(self) -> dict:
        return {"name": self.name, "min": self.lo, "max": self.hi, "count": self.count,
                "spacing": "linear"}


@dataclass(frozen=True)
class SweepGrid:
    axes: tuple[Axis, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    def cells(self) -> list[dict[str, float]]:
        """Cartesian product in row-major order (last axis fastest)."""
        names = [a.name for a in self.axes]
        return [dict(zip(names, (float(v) for v in combo)))
                for combo in itertools.product(*(a.values for a in self.axes))]

    def describe(self) -> str:
        return "; ".join(f"{a.name}=linspace({a.lo:g},{a.hi:g},{a.count})" for a in self.axes)

    @classmethod
    def parse_shape(cls, text: str) -> tuple[int, int]:
        try:
            a, b = (int(p) for p in text.lower().split("x"))
        except ValueError:
            raise ConfigurationError(f"grid must look like AxB, got {text!r}") from None
        return a, b


def pp_grid(n_kdv: int = 32, n_kc: int = 32) -> SweepGrid:
    return SweepGrid((Axis("k_dv", 0.28, 0.71, n_kdv), Axis("k_c", 0.0, 10.0, n_kc)))


def cd_grid(n_kc: int = 100, n_ksc: int = 100) -> SweepGrid:
    return SweepGrid((Axis("k_c", 0.0, 5.0, n_kc), Axis("k_sc", 0.0, 5.0, n_ksc)))


def cr_grid(n_kc: int = 100, n_ksc: int = 100) -> SweepGrid:
    return SweepGrid((Axis("k_c", 0.0, 2.5, n_kc), Axis("k_sc", 0.0, 2.5, n_ksc)))


@dataclass
class SweepResult:
    name: str
    grid: SweepGrid
    records: list[dict]
    columns: tuple[str, ...]
    faults: list[dict] = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records]).reshape(self.grid.shape)

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# sweep {self.name}: {self.grid.describe()}\n")
            for line in (header_comment or "").splitlines():
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.records:
                w.writerow([_fmt(r[c]) for c in self.columns])

    def to_json(self, path: str | Path, extra: dict | None = None) -> None:
        payload = {
            "sweep": self.name,
            "grid": [a.to_dict() for a in self.grid.axes],
            "n_cells": len(self.records),
            "n_faulted_runs": len(self.faults),
            "faults": self.faults,
            "summary": summarize(self),
        }
        payload.update(extra or {})
        M.write_json(path, payload)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return "inf" if math.isinf(x) else f"{x:.9g}"
    return "" if x is None else str(x)


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    return threads


def _map_cells(fn: Callable, cells: Sequence, threads: int | None) -> list:
    threads = resolve_threads(threads)
    if threads == 1 or len(cells) < 2:
        return [fn(c) for c in cells]
    chunk = max(1, len(cells) // (threads * 8))
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, cells, chunksize=chunk))


def _safe_run(spec, fault_tag: dict, faults: list, **kw) -> RunOutcome | None:
    try:
        return run(spec, **kw)
    except CrossingSimError as exc:
        faults.append({**fault_tag, "error": type(exc).__name__, "message": str(exc)})
        return None


# --- pedestrian pair ---------------------------------------------------------


def pp_cell(cell: dict, d0: float = S.PP_D0, speeds: Sequence[float] = PP_SPEEDS) -> dict:
    faults: list[dict] = []
    runs = []
    mpd = []
    for va in speeds:
        for vb in speeds:
            spec = S.build_pp(va, vb, k_dv=cell["k_dv"], k_c=cell["k_c"], d0=d0)
            o = _safe_run(spec, {**cell, "speed_a": va, "speed_b": vb}, faults)
            if o is None:
                continue
            m = M.pp_metrics(o)
            runs.append(m)
            mpd.append((m.mpd_at_tsee, np.nan if m.mpd_at_tcross is None else m.mpd_at_tcross))
    v = M.SweepCellVerdict.from_metrics(runs, n_faulted=len(faults))
    return {
        **cell, "lapf": v.lapf, "fpa": v.fpa, "spd": v.spd, "fpd": v.fpd, "spa": v.spa,
        "co": v.co, "accepted": v.accepted, "rejected_reason": v.rejected_reason or "",
        "n_runs": v.n_runs, "_mpd": mpd, "_faults": faults,
    }


def _pp_cell_star(args):
    return pp_cell(*args)


PP_COLUMNS = ("k_dv", "k_c", "lapf", "fpa", "spd", "fpd", "spa", "co", "accepted",
              "rejected_reason", "n_runs")


def run_pp_sweep(grid: SweepGrid | None = None, d0: float = S.PP_D0,
                 speeds: Sequence[float] = PP_SPEEDS, threads: int | None = None) -> SweepResult:
    """Each cell runs every pair of initial speeds and is judged by the acceptance rule.

    Records keep the per-run (MPD at t_see, MPD at t_cross) pairs under ``_mpd``.
    """
    grid = grid or pp_grid()
    cells = grid.cells()
    recs = _map_cells(_pp_cell_star, [(c, d0, tuple(speeds)) for c in cells], threads)
    faults = [f for r in recs for f in r.pop("_faults")]
    return SweepResult("pp", grid, recs, PP_COLUMNS, faults)


def accepted_mpd_pairs(result: SweepResult) -> np.ndarray:
    rows = [p for r in result.records if r["accepted"] for p in r["_mpd"]]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


# --- crossing decision -------------------------------------------------------


def cd_cell(cell: dict, starts: Sequence[float] = S.CD_STARTS) -> dict:
    faults: list[dict] = []
    gap = math.inf
    for x in sorted(starts):
        o = _safe_run(S.build_cd(x, cell["k_c"], cell["k_sc"]), {**cell, "x": x}, faults)
        if o is not None and M.crossed_safely_first(o):
            gap = x / S.VEHICLE_SPEED
            break
    return {**cell, "min_crossable_gap": gap, "n_faulted": len(faults), "_faults": faults}


def run_cd_sweep(grid: SweepGrid | None = None, threads: int | None = None) -> SweepResult:
    grid = grid or cd_grid()
    recs = _map_cells(cd_cell, grid.cells(), threads)
    faults = [f for r in recs for f in r.pop("_faults")]
    return SweepResult("cd", grid, recs, ("k_c", "k_sc", "min_crossable_gap", "n_faulted"), faults)


# --- conflict resolution -----------------------------------------------------


def cr_cell(cell: dict, starts: Sequence[float] = S.CR_STARTS) -> dict:
    faults: list[dict] = []
    counts = dict.fromkeys(M.CR_CLASSES, 0)
    for x in starts:
        o = _safe_run(S.build_cr(x, cell["k_c"], cell["k_sc"]), {**cell, "x": x}, faults)
        if o is not None:
            counts[M.classify_cr(o)] += 1
    return {**cell, **counts, "n_faulted": len(faults), "_faults": faults}


def run_cr_sweep(grid: SweepGrid | None = None, threads: int | None = None) -> SweepResult:
    grid = grid or cr_grid()
    recs = _map_cells(cr_cell, grid.cells(), threads)
    faults = [f for r in recs for f in r.pop("_faults")]
    return SweepResult("cr", grid, recs, ("k_c", "k_sc", *M.CR_CLASSES, "n_faulted"), faults)


# --- assertiveness -----------------------------------------------------------


@dataclass
class AssertionReport:
    n_encounters: int
    pct_accelerated: float
    pct_accelerated_in_lag: float | None
    accelerated: list[bool]
    in_lag: list[bool]
    vehicle_k_dv: float
    n_faulted: int = 0

    def to_dict(self) -> dict:
        return {
            "n_encounters": self.n_encounters,
            "pct_accelerated": self.pct_accelerated,
            "pct_accelerated_in_lag": self.pct_accelerated_in_lag,
            "vehicle_k_dv": self.vehicle_k_dv,
            "n_faulted": self.n_faulted,
        }


def _assert_one(spec) -> tuple[bool, bool] | None:
    faults: list = []
    o = _safe_run(spec, {}, faults)
    if o is None:
        return None
    return M.vehicle_accelerated(o), M.vehicle_in_lag(o)


def run_assert_battery(vehicle_k_dv: float = S.ASSERTIVE_VEHICLE_KDV, k_c: float = S.ASSERT_K_C,
                       k_sc: float = S.ASSERT_K_SC, threads: int | None = None) -> AssertionReport:
    specs = S.build_cr_assert(k_c, k_sc, vehicle_k_dv=vehicle_k_dv)
    res = _map_cells(_assert_one, specs, threads)
    ok = [r for r in res if r is not None]
    acc = [a for a, _ in ok]
    lag = [b for _, b in ok]
    pct, pct_lag = M.assertion_stats(acc, lag)
    return AssertionReport(len(specs), pct, pct_lag, acc, lag, vehicle_k_dv, len(res) - len(ok))


# --- stochastic crossing decisions ------------------------------------------


def trial_seeds(master_seed: int, n: int) -> list[np.random.SeedSequence]:
    """One independent stream per trial index, whatever the worker layout."""
    return np.random.SeedSequence(master_seed).spawn(n)


def _stoch_one(args):
    gap, seed, acc = args
    spec = S.build_cd_stochastic(gap)
    try:
        o = run(spec, seed=seed, accumulator=acc)
    except CrossingSimError:
        return None
    ip, iv = o.index("pedestrian"), o.index("vehicle")
    return o.onset_time[ip], o.t_cross[iv], o.collision_flag


@dataclass
class StochasticReport:
    gap: float
    onsets: list[float | None]
    vehicle_pass: list[float | None]
    collisions: int
    histogram: M.ResponseHistogram
    n_faulted: int = 0

    def to_dict(self) -> dict:
        return {**self.histogram.to_dict(), "n_trials": len(self.onsets) + self.n_faulted,
                "collisions": self.collisions, "n_faulted": self.n_faulted}


def run_stochastic_trials(gap: float, trials: int, seed: int,
                          accumulator: AccumulatorConfig | None = None,
                          threads: int | None = None) -> StochasticReport:
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    acc = accumulator or S.STOCH_ACCUMULATOR
    jobs = [(gap, s, acc) for s in trial_seeds(seed, trials)]
    res = _map_cells(_stoch_one, jobs, threads)
    ok = [r for r in res if r is not None]
    onsets = [r[0] for r in ok]
    passes = [r[1] for r in ok]
    hist = M.response_histogram(onsets, passes, gap)
    return StochasticReport(gap, onsets, passes, sum(r[2] for r in ok), hist, len(res) - len(ok))


# --- summaries ---------------------------------------------------------------


def summarize(result: SweepResult) -> dict:
    recs = result.records
    if result.name == "pp":
        acc = [r for r in recs if r["accepted"]]
        return {"n_accepted": len(acc), "accepted_cells": [(r["k_dv"], r["k_c"]) for r in acc]}
    if result.name == "cr":
        return {c: int(sum(r[c] for r in recs)) for c in M.CR_CLASSES}
    if result.name == "cd":
        gaps = [r["min_crossable_gap"] for r in recs]
        finite = [g for g in gaps if math.isfinite(g)]
        return {"n_crossable_cells": len(finite)}
    return {}


def dump_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

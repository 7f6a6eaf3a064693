"""Command-line front end.

    crossing-sim run --scenario cd --set vehicle.x=60 --out out/
    crossing-sim sweep --name cr --grid 100x100 --out out/
    crossing-sim assert --out out/
    crossing-sim stochastic --gap 2.29 --trials 500 --seed 7 --out out/
    crossing-sim report out/trajectory.csv --out out/
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import metrics as M
from . import scenarios as S
from . import sweep as W
from .engine import AccumulatorConfig, RunOutcome, TrajectoryLog, outcome_from_log, run
from .errors import ConfigurationError, CrossingSimError, NumericFaultError

SCENARIOS = ("pp", "cd", "cd_stoch", "cr")

# Bare-command presets: each reproduces one figure's worth of data.
PRESETS = {
    "pp": lambda: S.build_pp(0.9, 0.5, k_dv=0.45, k_c=2.0),
    "cd": lambda: S.build_cd(60.0, k_c=1.0, k_sc=0.0),
    "cd_stoch": lambda: S.build_cd_stochastic(4.58),
    "cr": lambda: S.build_cr(60.0, k_c=1.0, k_sc=1.0),
}


class _Outputs:
    """Tracks written files so a failed command leaves nothing half-written."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def discard(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)


def _parse_sets(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _scenario_overrides(sets: dict[str, str]) -> dict[str, str]:
    """Accept ``agent.<name>.<key>`` or the shorthand ``<name>.<key>``."""
    out = {}
    for key, value in sets.items():
        head = key.split(".", 1)[0]
        if head in ("world", "scenario", "squash", "agent"):
            out[key] = value
        else:
            out[f"agent.{key}"] = value
    return out


def _header(config_text: str, command: str) -> str:
    return f"crossing_sim {__version__}\ncommand: {command}\n{config_text}".rstrip()


def _payload(config_text: str, command: str, body: dict) -> dict:
    return {"version": __version__, "command": command, "config": config_text, **body}


def _accumulator(sets: dict[str, str]) -> AccumulatorConfig:
    acc = S.STOCH_ACCUMULATOR
    for key in list(sets):
        if key.startswith("accumulator."):
            field_name = key.split(".", 1)[1]
            if field_name not in ("sigma", "threshold", "T"):
                raise ConfigurationError(f"unknown accumulator key {field_name!r}")
            acc = replace(acc, **{field_name: float(sets.pop(key))})
    return acc


def outcome_metrics(outcome: RunOutcome, tag: str) -> dict:
    body: dict = {"outcome": outcome.summary()}
    if tag == "PP":
        body["pp_metrics"] = json.loads(M.pp_metrics(outcome).to_json())
    elif tag in ("CR", "CR_ASSERT"):
        body["cr_class"] = M.classify_cr(outcome)
        body["vehicle_accelerated"] = M.vehicle_accelerated(outcome)
    elif tag in ("CD", "CD_STOCH"):
        body["pedestrian_crossed_first_safely"] = M.crossed_safely_first(outcome)
    return body


def _outcome_from_csv(path: Path, spec: S.ScenarioSpec) -> RunOutcome:
    log = TrajectoryLog.from_csv(path)
    by_name = {a.name: a for a in spec.agents}
    headings = [by_name[n].heading for n in log.agent_ids]
    return outcome_from_log(log, spec.crossing, spec.world.d_c, headings, t_see=spec.world.t_see)


def _config_from_csv(path: Path) -> str:
    lines = []
    with open(path) as fh:
        for ln in fh:
            if not ln.startswith("#"):
                break
            lines.append(ln[2:] if ln.startswith("# ") else ln[1:])
    text = "".join(lines)
    start = text.find("[scenario]")
    if start < 0:
        raise ConfigurationError(f"{path}: no embedded scenario config")
    return text[start:].rstrip() + "\n"


def cmd_run(args, out: _Outputs) -> dict:
    sets = _parse_sets(args.set)
    acc = _accumulator(sets)
    if args.config:
        spec = S.load_config(args.config)
    else:
        spec = PRESETS[args.scenario]()
    if args.dt is not None:
        sets["world.dt"] = str(args.dt)
    spec = S.apply_overrides(spec, _scenario_overrides(sets))
    if any(a.stochastic for a in spec.agents) and args.seed is None:
        raise ConfigurationError("stochastic scenarios need --seed")
    outcome = run(spec, seed=args.seed, accumulator=acc)
    config = S.to_config(spec).rstrip() + "\n"
    command = "run"
    traj = out.path("trajectory.csv")
    outcome.log.to_csv(traj, header_comment=_header(config, command))
    # metrics are computed from the stored log so `report` reproduces them exactly
    stored = _outcome_from_csv(traj, spec)
    body = outcome_metrics(stored, spec.tag)
    if args.seed is not None:
        body["seed"] = args.seed
    M.write_json(out.path("outcome.json"), _payload(config, command, body))
    return body


def cmd_report(args, out: _Outputs) -> dict:
    src = Path(args.trajectory)
    config = _config_from_csv(src)
    spec = S.from_config(config)
    body = outcome_metrics(_outcome_from_csv(src, spec), spec.tag)
    M.write_json(out.path("outcome.json"), _payload(config, "run", body))
    return body


def cmd_sweep(args, out: _Outputs) -> dict:
    name = args.name
    factories = {"pp": W.pp_grid, "cd": W.cd_grid, "cr": W.cr_grid}
    defaults = {"pp": (32, 32), "cd": (100, 100), "cr": (100, 100)}
    shape = W.SweepGrid.parse_shape(args.grid) if args.grid else defaults[name]
    grid = factories[name](*shape)
    sets = _parse_sets(args.set)
    if name == "pp":
        d0 = float(sets.pop("d0", S.PP_D0))
        result = W.run_pp_sweep(grid, d0=d0, threads=args.threads)
        extra_cfg = f"d0 = {d0!r}"
    elif name == "cd":
        result = W.run_cd_sweep(grid, threads=args.threads)
        extra_cfg = ""
    else:
        result = W.run_cr_sweep(grid, threads=args.threads)
        extra_cfg = ""
    if sets:
        raise ConfigurationError(f"unknown sweep keys: {', '.join(sorted(sets))}")
    config = f"sweep = {name}\ngrid = {grid.describe()}\n{extra_cfg}".rstrip()
    result.to_csv(out.path(f"sweep_{name}.csv"), header_comment=_header(config, "sweep"))
    result.to_json(out.path(f"sweep_{name}.json"),
                   extra={"version": __version__, "config": config})
    return {"n_cells": len(result.records), **W.summarize(result)}


def cmd_assert(args, out: _Outputs) -> dict:
    sets = _parse_sets(args.set)
    kw = {"vehicle_k_dv": float(sets.pop("vehicle_k_dv", S.ASSERTIVE_VEHICLE_KDV)),
          "k_c": float(sets.pop("k_c", S.ASSERT_K_C)),
          "k_sc": float(sets.pop("k_sc", S.ASSERT_K_SC))}
    if sets:
        raise ConfigurationError(f"unknown assert keys: {', '.join(sorted(sets))}")
    report = W.run_assert_battery(threads=args.threads, **kw)
    config = "\n".join(f"{k} = {v!r}" for k, v in kw.items())
    body = report.to_dict()
    M.write_json(out.path("assert.json"), _payload(config, "assert", body))
    return body


def cmd_stochastic(args, out: _Outputs) -> dict:
    if args.seed is None:
        raise ConfigurationError("stochastic mode needs --seed")
    sets = _parse_sets(args.set)
    acc = _accumulator(sets)
    if sets:
        raise ConfigurationError(f"unknown stochastic keys: {', '.join(sorted(sets))}")
    gaps = [args.gap] if args.gap is not None else list(S.CD_STOCH_GAPS)
    summary = {}
    for gap in gaps:
        rep = W.run_stochastic_trials(gap, args.trials, args.seed, acc, threads=args.threads)
        config = (f"gap = {gap!r}\ntrials = {args.trials}\nseed = {args.seed}\n"
                  f"sigma = {acc.sigma!r}\nthreshold = {acc.threshold!r}\nT = {acc.T!r}")
        tag = f"{gap:g}"
        rep.histogram.to_csv(out.path(f"histogram_gap{tag}.csv"),
                             header_comment=_header(config, "stochastic"))
        M.write_json(out.path(f"histogram_gap{tag}.json"),
                     _payload(config, "stochastic", rep.to_dict()))
        summary[tag] = {"pre_fraction": rep.histogram.pre_fraction,
                        "post_fraction": rep.histogram.post_fraction}
    return summary


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossing-sim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=False):
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker processes (default ${W.THREADS_ENV} or all cores)")
        if seed:
            sp.add_argument("--seed", type=int, default=None)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--scenario", choices=SCENARIOS, default="cd")
    r.add_argument("--config", help="scenario config file (overrides --scenario)")
    r.add_argument("--dt", type=float, default=None)
    common(r, seed=True)

    s = sub.add_parser("sweep", help="parameter sweep")
    s.add_argument("--name", choices=("pp", "cd", "cr"), required=True)
    s.add_argument("--grid", help="AxB cell counts")
    common(s)

    a = sub.add_parser("assert", help="vehicle assertiveness battery")
    common(a)

    st = sub.add_parser("stochastic", help="seeded crossing-decision trials")
    st.add_argument("--gap", type=float, default=None)
    st.add_argument("--trials", type=int, default=500)
    common(st, seed=True)

    rp = sub.add_parser("report", help="recompute metrics from a trajectory CSV")
    rp.add_argument("trajectory")
    rp.add_argument("--out", default=".")
    return p


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "assert": cmd_assert,
            "stochastic": cmd_stochastic, "report": cmd_report}


def _error_record(exc: BaseException) -> dict:
    rec = {"status": "error", "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, NumericFaultError):
        rec["step"] = exc.step
    return rec


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    outputs = _Outputs(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        body = COMMANDS[args.command](args, outputs)
    except (CrossingSimError, OSError, ValueError) as exc:
        outputs.discard()
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 3 if isinstance(exc, NumericFaultError) else 2
    print(json.dumps({"status": "ok", "command": args.command,
                      "files": [str(p) for p in outputs.files], "result": body},
                     default=_plain, sort_keys=True))
    return 0


def _plain(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    try:
        return M._json_default(obj)
    except TypeError:
        return str(obj)


if __name__ == "__main__":
    sys.exit(main())

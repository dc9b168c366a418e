"""``fogcap`` command line: JSON run configs in, CSV (and optional SVG) artifacts out.

Usage::

    fogcap <sweep|optimize|d-sweep|trace-stats|reproduce> --config run.json
           [--svg] [--out DIR] [--seed N] [--slots N]

Exit status is 0 when everything ran and every optimization was feasible,
1 when some optimization was infeasible, 2 on bad input.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import experiments as ex
from . import optimizer as opt
from . import svg
from . import workload as wl
from .errors import FogcapError
from .fluid_sim import Scenario

SUBCOMMANDS = {
    "sweep": "sweep",
    "optimize": "optimize",
    "d-sweep": "d_sweep",
    "trace-stats": "trace_stats",
    "reproduce": "reproduce",
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

CLOUDLET_SCHEMA = {
    "type": "object",
    "required": ["model"],
    "oneOf": [
        {
            "properties": {
                "model": {"const": "gaussian"},
                "mean": {**_num, "description": "Gigacycles/slot"},
                "variance": {**_pos, "description": "(Gigacycles/slot)^2"},
            },
            "required": ["mean", "variance"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "model": {"const": "ar1"},
                "mean": {**_num, "description": "Gigacycles/slot"},
                "variance": {**_pos, "description": "lag-0 autocovariance, (Gigacycles/slot)^2"},
                "phi": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                "literal_autocov": {"type": "boolean", "description": "innovation variance = variance"},
            },
            "required": ["mean", "variance", "phi"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "model": {"const": "uniform"},
                "low": {**_num, "description": "Gigacycles/slot"},
                "high": {**_num, "description": "Gigacycles/slot"},
                "mean": {**_num, "description": "Gigacycles/slot (with variance, instead of low/high)"},
                "variance": {**_pos, "description": "(Gigacycles/slot)^2"},
            },
            "oneOf": [{"required": ["low", "high"]}, {"required": ["mean", "variance"]}],
            "additionalProperties": False,
        },
        {
            "properties": {
                "model": {"const": "trace"},
                "path": {"type": "string", "description": "timestamp_s,count CSV, relative to the config"},
                "bucket": {"type": "integer", "minimum": 1, "description": "seconds per slot"},
                "cycles_per_task": {**_pos, "description": "Gigacycles per request"},
                "start": {"type": "integer", "minimum": 0, "description": "first slot kept"},
                "length": {"type": "integer", "minimum": 2, "description": "slots kept"},
            },
            "required": ["path"],
            "additionalProperties": False,
        },
    ],
}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["budget", "cloudlets"],
    "properties": {
        "budget": {**_pos, "description": "total capacity C, Gigacycles/s"},
        "deadline": {**_nonneg, "description": "shallow deadline D, seconds"},
        "cloudlets": {"type": "array", "minItems": 1, "items": CLOUDLET_SCHEMA},
    },
    "additionalProperties": False,
}

_grid = {
    "oneOf": [
        {"type": "array", "minItems": 1, "items": _nonneg},
        {
            "type": "object",
            "required": ["start", "stop", "num"],
            "properties": {"start": _nonneg, "stop": _nonneg, "num": {"type": "integer", "minimum": 1}},
            "additionalProperties": False,
        },
    ],
    "description": "alpha values, Gigacycles/s",
}
_method = {"enum": ["gd1", "qle", "sim"]}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "oneOf": [
        {
            "properties": {
                "kind": {"const": "sweep"},
                "alpha_grid": _grid,
                "D": {**_nonneg, "description": "seconds"},
                "epsilon_tail": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "required": ["alpha_grid"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "optimize"},
                "method": _method,
                "D": {**_nonneg, "description": "seconds"},
                "solver": {"enum": ["algorithm1", "grid"]},
                "epsilon_step": _pos,
                "thresholds": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "kappa_coeff": _nonneg,
                "grid_points": {"type": "integer", "minimum": 1},
            },
            "required": ["method"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "d_sweep"},
                "D_list": {"type": "array", "minItems": 1, "items": _nonneg},
                "methods": {"type": "array", "minItems": 1, "items": _method},
                "kappa_coeff": _nonneg,
                "sim_grid_step": _pos,
                "epsilon_step": _pos,
            },
            "required": ["D_list"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "trace_stats"},
                "path": {"type": "string"},
                "bucket": {"type": "integer", "minimum": 1},
                "cycles_per_task": _pos,
                "max_lag": {"type": "integer", "minimum": 0},
            },
            "required": ["path"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "kind": {"const": "reproduce"},
                "figure": {"enum": ["fig2", "fig3", "fig4", "fig5", "fig6"]},
                "D_list": {"type": "array", "minItems": 1, "items": _nonneg},
                "kappa_coeff": _nonneg,
                "sim_grid_step": _pos,
                "trace_paths": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                "budget": {**_pos, "description": "Gigacycles/s, fig6 only"},
            },
            "required": ["figure"],
            "additionalProperties": False,
        },
    ],
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["experiment"],
    "properties": {
        "scenario": SCENARIO_SCHEMA,
        "experiment": EXPERIMENT_SCHEMA,
        "n_slots": {"type": "integer", "minimum": 2, "description": "simulated slots (1 slot = 1 s)"},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
    },
    "additionalProperties": False,
}


class ConfigError(Exception):
    def __init__(self, path, line, message):
        self.line = line
        super().__init__(f"{path}:{line}: {message}" if line else f"{path}: {message}")


def _element_start(text: str, open_at: int, index: int) -> int | None:
    """Offset of element ``index`` of the JSON array whose ``[`` sits at ``open_at``."""
    depth, count, in_str, esc = 0, 0, False, False
    expect = True
    for pos in range(open_at + 1, len(text)):
        ch = text[pos]
        if in_str:
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
            continue
        if ch.isspace():
            continue
        if expect and depth == 0:
            if ch == "]":
                return None
            if count == index:
                return pos
            expect = False
        if ch == '"':
            in_str = True
        elif ch in "[{":
            depth += 1
        elif ch in "]}":
            if depth == 0:
                return None
            depth -= 1
        elif ch == "," and depth == 0:
            count += 1
            expect = True
    return None


def _locate(text: str, keys) -> int | None:
    """Line of the innermost key or array element along ``keys``."""
    pos, found = 0, None
    for key in keys:
        if isinstance(key, int):
            bracket = text.find("[", pos)
            at = None if bracket < 0 else _element_start(text, bracket, key)
        else:
            at = text.find(f'"{key}"', pos)
            at = None if at < 0 else at
        if at is None:
            break
        pos, found = at, at
    return None if found is None else text.count("\n", 0, found) + 1


def _explain(err):
    """Descend into oneOf failures through the branch whose discriminator matched."""
    while err.validator == "oneOf" and err.context:
        branches = {}
        for sub in err.context:
            branches.setdefault(sub.schema_path[0], []).append(sub)
        matched = [errs for errs in branches.values() if not any(e.validator == "const" for e in errs)]
        if len(matched) != 1:
            break
        err = jsonschema.exceptions.best_match(matched[0])
    return err


def load_config(path) -> tuple[dict, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(path, None, f"cannot read config: {e.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(path, e.lineno, e.msg) from None
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = _explain(jsonschema.exceptions.best_match(errors))
        keys = list(err.absolute_path)
        where = "/".join(str(k) for k in keys) or "<root>"
        raise ConfigError(path, _locate(text, keys), f"{where}: {err.message}")
    return cfg, text


def _grid_values(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, dtype=float)


def _model(entry: dict, base: Path):
    kind = entry["model"]
    if kind == "gaussian":
        return wl.GaussianIID(entry["mean"], entry["variance"])
    if kind == "ar1":
        return wl.GaussianAR1(entry["mean"], entry["variance"], entry["phi"], entry.get("literal_autocov", False))
    if kind == "uniform":
        if "low" in entry:
            return wl.Uniform(entry["low"], entry["high"])
        return wl.Uniform.matched(entry["mean"], entry["variance"])
    trace = wl.load_trace(base / entry["path"], entry.get("bucket", 1), entry.get("cycles_per_task", 1.0))
    start = entry.get("start", 0)
    stop = start + entry["length"] if "length" in entry else None
    if start or stop is not None:
        trace = wl.EmpiricalTrace(trace.samples[start:stop], trace.cycles_per_task)
    return trace


def build_scenario(cfg: dict, base: Path, deadline: float | None = None) -> Scenario:
    sc = cfg.get("scenario")
    if sc is None:
        raise FogcapError("this experiment needs a 'scenario' section")
    models = [_model(c, base) for c in sc["cloudlets"]]
    d = sc.get("deadline", 0.0) if deadline is None else deadline
    return Scenario(sc["budget"], d, models)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


class Artifacts:
    """Writes CSVs (and SVGs) into one directory, each stamped with the config hash and seed."""

    def __init__(self, out_dir: Path, stamp: str, want_svg: bool):
        self.out_dir = out_dir
        self.stamp = stamp
        self.want_svg = want_svg
        self.written: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, columns, rows, footer: str | None = None) -> Path:
        path = self.out_dir / name
        with path.open("w", newline="") as fh:
            fh.write(f"# {self.stamp}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row[c]) for c in columns])
            if footer:
                fh.write(f"# {footer}\n")
        self.written.append(path)
        return path

    def chart(self, name: str, series: dict, **labels) -> None:
        if self.want_svg:
            path = self.out_dir / name
            svg.line_chart(path, series, **labels)
            self.written.append(path)


def _by(rows, key, x, y, where=None):
    series = {}
    for r in rows:
        if where and not all(r[k] == v for k, v in where.items()):
            continue
        xs, ys = series.setdefault(r[key], ([], []))
        xs.append(r[x])
        ys.append(r[y])
    return series


SWEEP_COLUMNS = ["alpha", "avg_loss", "loss_probability", "ub_markov", "stderr"]
DSWEEP_COLUMNS = ["D", "method", "alpha_star", "objective", "loss_probability_at_star"]


def run_sweep(cfg, exp, base, out: Artifacts, n_slots, seed) -> bool:
    scenario = build_scenario(cfg, base, exp.get("D"))
    grid = _grid_values(exp["alpha_grid"])
    rows = ex.sweep_rows(scenario, grid, n_slots, seed, exp.get("epsilon_tail", 1e-3))
    out.csv("sweep.csv", SWEEP_COLUMNS, rows)
    out.chart(
        "sweep.svg",
        {"loss probability": ([r["alpha"] for r in rows], [r["loss_probability"] for r in rows])},
        title=f"Loss probability, D={scenario.deadline:g}",
        xlabel="alpha (Gigacycles/s)",
        ylabel="loss probability",
    )
    return True


def run_optimize(cfg, exp, base, out: Artifacts, n_slots, seed) -> bool:
    scenario = build_scenario(cfg, base, exp.get("D"))
    method = ex.make_method(exp["method"], n_slots, seed, exp.get("kappa_coeff", 0.0))
    res = ex.optimize(
        scenario,
        method,
        exp.get("solver", "algorithm1"),
        exp.get("epsilon_step", opt.DEFAULT_EPSILON),
        exp.get("thresholds"),
        exp.get("grid_points", opt.DEFAULT_GRID),
    )
    row = {
        "method": exp["method"],
        "D": scenario.deadline,
        "alpha_star": res.alpha_star,
        "objective": res.objective,
        "feasible": res.feasible,
        "iterations": len(res.iterations),
    }
    out.csv("optimize.csv", list(row), [row])
    trace = [{"iteration": k, "r": r, "alpha_hat": a} for k, (r, a) in enumerate(res.iterations)]
    out.csv("optimize_trace.csv", ["iteration", "r", "alpha_hat"], trace)
    return res.feasible


def run_d_sweep(cfg, exp, base, out: Artifacts, n_slots, seed) -> bool:
    scenario = build_scenario(cfg, base)
    rows, ok = ex.d_sweep_rows(
        scenario,
        exp["D_list"],
        exp.get("methods", ["sim", "gd1", "qle"]),
        n_slots,
        seed,
        exp.get("kappa_coeff", 0.0),
        exp.get("sim_grid_step", 0.05),
        exp.get("epsilon_step", opt.DEFAULT_EPSILON),
    )
    out.csv("d_sweep.csv", DSWEEP_COLUMNS, rows)
    out.chart("d_sweep.svg", _by(rows, "method", "D", "alpha_star"), title="Optimal alpha", xlabel="D (s)", ylabel="alpha*")
    return ok


def run_trace_stats(cfg, exp, base, out: Artifacts, n_slots, seed) -> bool:
    model = wl.load_trace(base / exp["path"], exp.get("bucket", 1), exp.get("cycles_per_task", 1.0))
    max_lag = min(exp.get("max_lag", 50), model.samples.size - 1)
    rows, summary = ex.trace_stats_rows(model, max_lag)
    footer = "summary " + " ".join(f"{k}={_fmt(v)}" for k, v in summary.items())
    out.csv("trace_stats.csv", ["lag", "autocov"], rows, footer=footer)
    out.chart("trace_stats.svg", {"autocov": ([r["lag"] for r in rows], [r["autocov"] for r in rows])}, title="Autocovariance", xlabel="lag (slots)", ylabel="C(l)")
    return True


def run_reproduce(cfg, exp, base, out: Artifacts, n_slots, seed) -> bool:
    fig = exp["figure"]
    kappa = exp.get("kappa_coeff", 0.0)
    d_list = exp.get("D_list", ex.PAPER_D_LIST)
    step = exp.get("sim_grid_step", 0.1)
    if fig == "fig2":
        rows = ex.fig2_rows(n_slots, seed, kappa)
        out.csv("fig2.csv", ["process", "alpha", "loss_probability", "stderr", "ub_sim", "ub_qle"], rows)
        for p in ex.PROCESSES:
            sub = [r for r in rows if r["process"] == p]
            xs = [r["alpha"] for r in sub]
            out.chart(
                f"fig2_{p}.svg",
                {k: (xs, [r[k] for r in sub]) for k in ("loss_probability", "ub_sim", "ub_qle")},
                title=f"Loss vs upper bounds, {p}, D=0.1",
                xlabel="alpha (Gigacycles/s)",
                ylabel="normalized loss",
            )
        return True
    if fig == "fig3":
        rows = ex.fig3_rows(n_slots, seed)
        out.csv("fig3.csv", ["process", "alpha", "loss_probability", "stderr"], rows)
        out.chart("fig3.svg", _by(rows, "process", "alpha", "loss_probability"), title="Loss probability, D=0", xlabel="alpha (Gigacycles/s)", ylabel="loss probability")
        return True
    if fig in ("fig4", "fig5"):
        rows, ok = ex.fig45_rows(n_slots, seed, d_list, kappa, step)
        out.csv(f"{fig}.csv", ["process"] + DSWEEP_COLUMNS, rows)
        y = "alpha_star" if fig == "fig4" else "loss_probability_at_star"
        for p in ex.PROCESSES:
            out.chart(f"{fig}_{p}.svg", _by(rows, "method", "D", y, {"process": p}), title=f"{y} vs D, {p}", xlabel="D (s)", ylabel=y)
        return ok
    # fig6: trace-driven
    paths = exp.get("trace_paths")
    if paths:
        models = [wl.load_trace(base / p) for p in paths]
    else:
        models = []
        for i, counts in enumerate(ex.synthetic_traces(seed=seed)):
            p = out.out_dir / f"synthetic_trace_{i}.csv"
            wl.write_trace(p, counts)
            models.append(wl.load_trace(p))
    budget = exp.get("budget")
    step = exp.get("sim_grid_step")
    curve, rows, ok = ex.fig6(models, budget, n_slots, seed, d_list, kappa, step)
    out.csv("fig6a.csv", ["alpha", "loss_probability", "stderr"], curve)
    out.csv("fig6bc.csv", DSWEEP_COLUMNS, rows)
    out.chart("fig6a.svg", {"trace": ([r["alpha"] for r in curve], [r["loss_probability"] for r in curve])}, title="Trace loss probability, D=0", xlabel="alpha", ylabel="loss probability")
    out.chart("fig6b.svg", _by(rows, "method", "D", "alpha_star"), title="Optimal alpha vs D", xlabel="D (s)", ylabel="alpha*")
    out.chart("fig6c.svg", _by(rows, "method", "D", "loss_probability_at_star"), title="Optimum loss probability vs D", xlabel="D (s)", ylabel="loss probability")
    return ok


RUNNERS = {
    "sweep": run_sweep,
    "optimize": run_optimize,
    "d_sweep": run_d_sweep,
    "trace_stats": run_trace_stats,
    "reproduce": run_reproduce,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fogcap", description="Shallow/deep capacity planning experiments.")
    p.add_argument("subcommand", choices=list(SUBCOMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--svg", action="store_true", help="also write SVG line charts")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="base RNG seed (overrides config)")
    p.add_argument("--slots", type=int, help="simulated slots (overrides n_slots)")
    return p


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    config_path = Path(args.config)
    try:
        cfg, _ = load_config(config_path)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    kind = SUBCOMMANDS[args.subcommand]
    exp = cfg["experiment"]
    if exp["kind"] != kind:
        print(f"error: {config_path}: experiment kind {exp['kind']!r} does not match subcommand {args.subcommand!r}", file=sys.stderr)
        return 2
    effective = copy.deepcopy(cfg)
    if args.seed is not None:
        effective["seed"] = args.seed
    if args.slots is not None:
        if args.slots < 2:
            print("error: --slots must be >= 2", file=sys.stderr)
            return 2
        effective["n_slots"] = args.slots
    seed = effective.get("seed", 0)
    n_slots = effective.get("n_slots", 1_000_000)
    digest = hashlib.sha256(json.dumps(effective, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
    out_dir = Path(args.out or effective.get("output_dir") or "fogcap_out")
    stamp = f"fogcap {args.subcommand} config_sha256={digest} seed={seed} n_slots={n_slots}"
    base = config_path.resolve().parent
    try:
        artifacts = Artifacts(out_dir, stamp, args.svg)
        ok = RUNNERS[kind](effective, exp, base, artifacts, n_slots, seed)
    except FogcapError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for path in artifacts.written:
        print(path)
    if not ok:
        print("error: at least one optimization found no feasible alpha", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

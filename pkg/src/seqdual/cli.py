"""Command-line front end: ``seqdual run | table | plotdata``.

Exit codes: 0 success, 2 bad arguments, 3 solver failure.

Settings resolve as command-line flags > ``--config`` file > built-in
defaults.  The config file is flat ``key = value`` text; ``#`` starts a
comment and keys are the long flag names with dashes or underscores, e.g.::

    method = primal
    n = 2000
    tol = 1e-6
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .benchmarks import EXAMPLE_IDS, make_example
from .core import DynamicsBlowUp, ProblemDefinitionError
from .expr import ExpressionError, load_problem
from .seqopt import OuterConfig, OuterLoopError, solve_algorithm1, solve_algorithm2

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 2, 3
METHOD_NAMES = {"dual": "seq_dual", "primal": "seq_primal"}
GUESS_NAMES = {"auto": "auto", "zeros": "zeros", "linear": "linear_interp"}
DEFAULT_N_LIST = (50, 100, 200, 500, 1000, 2000, 5000, 10000)
TABLE_COLUMNS = ("n", "objective_primal", "objective_dual", "outer_primal", "outer_dual",
                 "time_primal_s", "time_dual_s", "notes")


class UsageError(Exception):
    pass


def _n_list(text) -> list[int]:
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    if not items:
        raise UsageError("empty n-list")
    try:
        values = [int(s) for s in items]
    except ValueError:
        raise UsageError(f"n-list must be comma-separated integers, got {text!r}") from None
    if any(v < 2 for v in values):
        raise UsageError("grid sizes must be at least 2")
    return values


def _choice(names):
    def conv(text):
        if text not in names:
            raise UsageError(f"expected one of {sorted(names)}, got {text!r}")
        return text
    return conv


def _positive(conv):
    def check(text):
        v = conv(text)
        if not v > 0:
            raise UsageError(f"expected a positive value, got {text!r}")
        return v
    return check


def _grid_size(text):
    v = int(text)
    if v < 2:
        raise UsageError(f"--n must be at least 2, got {text!r}")
    return v


def _example(text):
    v = int(text)
    if v not in EXAMPLE_IDS:
        raise UsageError(f"example must be one of {EXAMPLE_IDS}")
    return v


# option name -> (converter, default); shared by flags and config files
OPTIONS = {
    "example": (_example, None),
    "problem": (str, None),
    "n": (_grid_size, 1000),
    "method": (_choice(METHOD_NAMES), "dual"),
    "methods": (lambda s: [_choice(METHOD_NAMES)(m.strip()) for m in str(s).split(",") if m.strip()],
                ["primal", "dual"]),
    "n_list": (_n_list, None),
    "tol": (_positive(float), 1e-5),
    "theta": (_positive(float), 100.0),
    "max_outer": (_positive(int), 50),
    "guess": (_choice(GUESS_NAMES), "auto"),
    "algorithm": (_choice({"auto", "1", "2"}), "auto"),
    "out": (str, None),
    "seed": (int, 0),
    "png": (lambda s: str(s).lower() in ("1", "true", "yes", "on"), False),
}


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file into converted option values."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def _convert(key, value):
    conv = OPTIONS[key][0]
    try:
        return conv(value)
    except UsageError:
        raise
    except (TypeError, ValueError):
        raise UsageError(f"invalid value for {key}: {value!r}") from None


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqdual", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        S = argparse.SUPPRESS
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--example", default=S, help="benchmark id 1..5")
        src.add_argument("--problem", default=S, help="JSON problem file")
        sp.add_argument("--config", default=S, help="flat key = value settings file")
        sp.add_argument("--tol", default=S, help="outer stopping tolerance (default 1e-5)")
        sp.add_argument("--theta", default=S, help="merit weight (default 100)")
        sp.add_argument("--max-outer", dest="max_outer", default=S, help="outer iteration cap")
        sp.add_argument("--guess", default=S, help="initial guess: auto | zeros | linear")
        sp.add_argument("--algorithm", default=S,
                        help="auto (1 without terminal rows, else 2) | 1 | 2")
        sp.add_argument("--out", default=S, help="output directory (table: output file)")
        sp.add_argument("--seed", default=S, help="seed for randomized inputs")

    run = sub.add_parser("run", help="solve one problem")
    common(run)
    run.add_argument("--n", default=argparse.SUPPRESS, help="grid intervals (default 1000)")
    run.add_argument("--method", default=argparse.SUPPRESS, help="dual | primal")
    run.add_argument("--png", action="store_const", const="true", default=argparse.SUPPRESS,
                     help="also render solution.png")

    table = sub.add_parser("table", help="sweep grid sizes for both methods")
    common(table)
    table.add_argument("--n-list", dest="n_list", default=argparse.SUPPRESS)
    table.add_argument("--methods", default=argparse.SUPPRESS, help="comma list of dual, primal")

    plot = sub.add_parser("plotdata", help="control trajectories for plotting")
    common(plot)
    plot.add_argument("--n-list", dest="n_list", default=argparse.SUPPRESS)
    plot.add_argument("--method", default=argparse.SUPPRESS, help="dual | primal")
    plot.add_argument("--png", action="store_const", const="true", default=argparse.SUPPRESS,
                      help="also render PNG figures next to the CSV files")
    return p


def resolve(ns: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (later wins)."""
    settings = {k: v[1] for k, v in OPTIONS.items()}
    given = vars(ns).copy()
    cfg_path = given.pop("config", None)
    if cfg_path:
        settings.update(read_config(cfg_path))
    command = given.pop("command")
    for key, value in given.items():
        settings[key] = _convert(key, value)
    if command == "plotdata" and settings["n_list"] is None:
        settings["n_list"] = [500, 1000]
    if command == "table" and settings["n_list"] is None:
        settings["n_list"] = list(DEFAULT_N_LIST)
    if settings["example"] is None and settings["problem"] is None:
        raise UsageError("one of --example or --problem is required")
    if "example" in given and "problem" not in given:
        settings["problem"] = None
    if "problem" in given and "example" not in given:
        settings["example"] = None
    settings["command"] = command
    return settings


def _load(settings):
    if settings["problem"]:
        return load_problem(settings["problem"]), Path(settings["problem"]).stem
    return make_example(settings["example"]), str(settings["example"])


def _outer_config(settings, n, method) -> OuterConfig:
    return OuterConfig(n_intervals=n, tol=settings["tol"], max_outer=settings["max_outer"],
                       method=METHOD_NAMES[method], theta=settings["theta"],
                       initial_guess=GUESS_NAMES[settings["guess"]])


def _solve(problem, settings, n, method):
    cfg = _outer_config(settings, n, method)
    alg = settings["algorithm"]
    if alg == "auto":
        alg = "2" if problem.n_terminal else "1"
    if alg == "1" and problem.n_terminal:
        raise UsageError("algorithm 1 needs a free terminal state; use --algorithm 2")
    return (solve_algorithm1 if alg == "1" else solve_algorithm2)(problem, cfg)


SOLVER_ERRORS = (OuterLoopError, DynamicsBlowUp, FloatingPointError, RuntimeError)


def cmd_run(settings) -> int:
    problem, label = _load(settings)
    out = Path(settings["out"] or "seqdual_out")
    out.mkdir(parents=True, exist_ok=True)
    n, method = settings["n"], settings["method"]
    start = time.perf_counter()
    try:
        traj, report = _solve(problem, settings, n, method)
        code = EXIT_OK
    except OuterLoopError as exc:
        traj, report, code = exc.traj, exc.report, EXIT_SOLVER
        print(f"solver failure: {exc}", file=sys.stderr)
    except (DynamicsBlowUp, FloatingPointError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    wall_ms = 1e3 * (time.perf_counter() - start)
    report.to_json(out / "report.json")
    report.to_csv(out / "iterations.csv")
    if traj is not None:
        traj.to_csv(out / "solution.csv")
        if settings["png"]:
            from .plotting import plot_trajectory
            plot_trajectory(traj, out / "solution.png", title=f"{problem.name}, N={n}")
    print(f"{label}, {n}, {method}, {report.objective:.10g}, {report.outer_iterations}, "
          f"{wall_ms:.0f}")
    return code


def _table_cell(settings, n, method):
    """Worker: one (n, method) solve; returns objective, outer count, seconds, note."""
    problem, _ = _load(settings)
    t0 = time.perf_counter()
    try:
        _, rep = _solve(problem, settings, n, method)
        return rep.objective, rep.outer_iterations, time.perf_counter() - t0, ""
    except SOLVER_ERRORS as exc:
        return math.nan, math.nan, time.perf_counter() - t0, f"{method}: {exc}"


def thread_cap() -> int:
    env = os.environ.get("SEQDUAL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"SEQDUAL_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def cmd_table(settings) -> int:
    _load(settings)  # surface problem-definition errors before fanning out
    cells = [(n, m) for n in settings["n_list"] for m in ("primal", "dual")
             if m in settings["methods"]]
    workers = min(thread_cap(), len(cells))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_table_cell, settings, n, m) for n, m in cells]
            results = [f.result() for f in futures]
    else:
        results = [_table_cell(settings, n, m) for n, m in cells]
    by_cell = dict(zip(cells, results))

    nan = (math.nan, math.nan, math.nan, "")
    rows = []
    for n in settings["n_list"]:
        p = by_cell.get((n, "primal"), nan)
        d = by_cell.get((n, "dual"), nan)
        notes = "; ".join(s for s in (p[3], d[3]) if s)
        rows.append([n, _g(p[0]), _g(d[0]), _i(p[1]), _i(d[1]), _g(p[2]), _g(d[2]), notes])
    fh = open(settings["out"], "w", newline="") if settings["out"] else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    failed = all(math.isnan(r[0]) for r in results)
    return EXIT_SOLVER if failed else EXIT_OK


def _g(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, ".17g")


def _i(v) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else str(int(v))


def cmd_plotdata(settings) -> int:
    problem, label = _load(settings)
    out = Path(settings["out"] or "seqdual_plotdata")
    out.mkdir(parents=True, exist_ok=True)
    trajs = {}
    code = EXIT_OK
    for n in settings["n_list"]:
        try:
            traj, _ = _solve(problem, settings, n, settings["method"])
        except OuterLoopError as exc:
            print(f"solver failure at n={n}: {exc}", file=sys.stderr)
            code = EXIT_SOLVER
            continue
        trajs[f"N={n}"] = traj
        with open(out / f"control_n{n}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "u"])
            for t, u in zip(traj.grid.times, traj.controls):
                w.writerow([format(t, ".17g"), format(u, ".17g")])
    if settings["png"] and trajs:
        from .plotting import plot_controls
        lo, hi = problem.bounds(next(iter(trajs.values())).grid)
        bounds = (float(lo[0]), float(hi[0])) if np.ptp(lo) == 0 and np.ptp(hi) == 0 else None
        plot_controls(trajs, out / "controls.png", title=f"{problem.name} ({settings['method']})",
                      bounds=bounds)
    print(f"{label}: wrote {len(trajs)} control file(s) to {out}")
    return code


COMMANDS = {"run": cmd_run, "table": cmd_table, "plotdata": cmd_plotdata}


def main(argv=None) -> int:
    parser = _parser()
    ns = parser.parse_args(argv)  # exits with status 2 on malformed flags
    try:
        settings = resolve(ns)
        np.random.seed(settings["seed"])
        return COMMANDS[settings["command"]](settings)
    except (UsageError, ExpressionError, ProblemDefinitionError) as exc:
        print(f"seqdual: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

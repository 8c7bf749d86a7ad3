"""Sequential quasilinearization outer loops.

Algorithm 1 accepts each subproblem solution wholesale.  Algorithm 2 takes
a step of length ``kappa`` toward it, chosen by golden-section search on
the merit ``P = sum h (f + g) + theta * ||x' - h(x, u)||_1``.
Either loop solves its subproblems with the dual (``seq_dual``) or the
primal interior-point (``seq_primal``) path.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import CostateTrajectory, NlpProblem, TimeGrid, Trajectory, l1_defect_norm, rollout, sup_norm
from .lq_dual import DualSolverConfig, DualSolverError, solve_dual
from .lq_primal import project_control, transcribe
from .qp_engine import QpSolverConfig, QpSolverError, solve_box_qp
from .quasilin import build_subproblem

METHODS = ("seq_dual", "seq_primal")
GUESS_POLICIES = ("auto", "zeros", "linear_interp", "user")
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class OuterConfig:
    """Outer-loop settings.

    ``initial_guess="auto"`` uses ``linear_interp`` when the problem has
    terminal rows and ``zeros`` otherwise; ``"user"`` requires
    ``initial_traj``.
    """

    n_intervals: int = 1000
    tol: float = 1e-5
    max_outer: int = 50
    method: str = "seq_dual"
    theta: float = 100.0
    line_search_max_evals: int = 50
    initial_guess: str = "auto"
    initial_traj: Optional[Trajectory] = field(default=None, repr=False, compare=False)
    inner_tol: float = 1e-8
    dual_pairing: str = "adjoint"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.initial_guess not in GUESS_POLICIES:
            raise ValueError(f"initial_guess must be one of {GUESS_POLICIES}")
        if self.initial_guess == "user" and self.initial_traj is None:
            raise ValueError("initial_guess='user' needs initial_traj")
        if self.line_search_max_evals < 3:
            raise ValueError("line_search_max_evals must be at least 3")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    step_norm: float
    merit: float
    kappa: float
    inner_iterations: int
    wall_time_s: float
    max_costate: float
    duality_gap: float = float("nan")


# wall time lives in the JSON report only so that CSV output is reproducible
CSV_COLUMNS = tuple(k for k in IterationRecord.__dataclass_fields__ if k != "wall_time_s")


@dataclass
class SolveReport:
    """Per-outer-iteration history and final status of a sequential solve."""

    problem: str
    algorithm: int
    method: str
    n_intervals: int
    tol: float
    records: list = field(default_factory=list)
    status: str = "running"
    message: str = ""
    objective: float = float("nan")
    wall_time_s: float = 0.0
    costate: Optional[CostateTrajectory] = field(default=None, repr=False)
    eta: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def outer_iterations(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "algorithm": self.algorithm,
            "method": self.method,
            "n_intervals": self.n_intervals,
            "tol": self.tol,
            "status": self.status,
            "message": self.message,
            "objective": _json_float(self.objective),
            "outer_iterations": self.outer_iterations,
            "wall_time_s": self.wall_time_s,
            "eta": None if self.eta is None else [float(v) for v in self.eta],
            "records": [{k: _json_float(v) for k, v in asdict(r).items()} for r in self.records],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                row = asdict(r)
                w.writerow([row[k] if isinstance(row[k], int) else format(row[k], ".17g")
                            for k in CSV_COLUMNS])


def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


class OuterLoopError(RuntimeError):
    """Outer-loop failure; carries the partial report and the last iterate."""

    def __init__(self, message, report: SolveReport, traj: Optional[Trajectory] = None):
        super().__init__(message)
        self.report = report
        self.traj = traj


def merit_value(problem: NlpProblem, traj: Trajectory, theta: float) -> float:
    """Discretized objective plus ``theta`` times the L1 dynamics defect."""
    return problem.objective(traj) + theta * l1_defect_norm(traj, problem)


def terminal_target(problem: NlpProblem) -> np.ndarray:
    """Closest point to ``x0`` satisfying ``E x = e_f``."""
    if problem.n_terminal == 0:
        return problem.x0.copy()
    E = problem.E
    return problem.x0 + np.linalg.pinv(E) @ (problem.e_f - E @ problem.x0)


def default_initial_guess(problem: NlpProblem, grid: TimeGrid, policy: str = "auto") -> Trajectory:
    """Starting trajectory for the outer loop.

    ``zeros``: ``u = Pr(0)`` and states by Euler rollout.
    ``linear_interp``: ``u = Pr(0)`` and states interpolated from ``x0`` to
    :func:`terminal_target`.
    """
    if policy == "auto":
        policy = "linear_interp" if problem.n_terminal else "zeros"
    lo, hi = problem.bounds(grid)
    u = project_control(np.zeros(grid.n_nodes), lo, hi)
    if policy == "zeros":
        return rollout(problem, u, grid)
    if policy == "linear_interp":
        s = (grid.times - grid.t0) / (grid.tf - grid.t0)
        x = problem.x0 + np.outer(s, terminal_target(problem) - problem.x0)
        return Trajectory(grid, x, u)
    raise ValueError(f"unknown initial guess policy {policy!r}")


@dataclass(frozen=True)
class _InnerResult:
    traj: Trajectory
    costate: CostateTrajectory
    eta: np.ndarray
    iterations: int
    gap: float


def _solve_inner(problem: NlpProblem, nominal: Trajectory, cfg: OuterConfig,
                 warm: Optional[_InnerResult]) -> _InnerResult:
    lq = build_subproblem(problem, nominal)
    if cfg.method == "seq_primal":
        sol = solve_box_qp(transcribe(lq), QpSolverConfig(tol=cfg.inner_tol))
        return _InnerResult(sol.traj, sol.costate, sol.eta, sol.iterations, float("nan"))
    # the dual variable y matches the state at the optimum, so the nominal is a good start
    eta0 = None if warm is None else warm.eta
    vars, rec, rep = solve_dual(lq, DualSolverConfig(tol=cfg.inner_tol, pairing=cfg.dual_pairing),
                                y0=nominal.states, eta0=eta0)
    return _InnerResult(rec.traj, rec.costate, vars.eta, rep.iterations, rep.duality_gap)


def _initial(problem: NlpProblem, cfg: OuterConfig) -> Trajectory:
    grid = problem.grid(cfg.n_intervals)
    if cfg.initial_guess == "user":
        traj = cfg.initial_traj
        if traj.grid.n_nodes != grid.n_nodes or traj.state_dim != problem.state_dim:
            raise ValueError("initial_traj does not match the problem grid")
        return traj
    return default_initial_guess(problem, grid, cfg.initial_guess)


def _step_norm(a: Trajectory, b: Trajectory) -> float:
    return sup_norm(b.states - a.states) + sup_norm(b.controls - a.controls)


def _run(problem: NlpProblem, cfg: OuterConfig, algorithm: int):
    report = SolveReport(problem=problem.name, algorithm=algorithm, method=cfg.method,
                         n_intervals=cfg.n_intervals, tol=cfg.tol)
    start = time.perf_counter()
    traj = _initial(problem, cfg)
    merit = merit_value(problem, traj, cfg.theta)
    inner = None
    for k in range(1, cfg.max_outer + 1):
        t_iter = time.perf_counter()
        try:
            inner = _solve_inner(problem, traj, cfg, inner)
        except (QpSolverError, DualSolverError, FloatingPointError, ValueError) as exc:
            report.status = "inner_failure"
            report.message = f"outer iteration {k}: {exc}"
            report.wall_time_s = time.perf_counter() - start
            report.objective = problem.objective(traj)
            raise OuterLoopError(report.message, report, traj) from exc
        cand = inner.traj
        d = _step_norm(traj, cand)
        lam_max = sup_norm(inner.costate.values)

        if algorithm == 1:
            kappa, traj = 1.0, cand
            merit = merit_value(problem, traj, cfg.theta)
        elif d < cfg.tol:
            # Algorithm 2 tests the candidate step before moving
            kappa = 0.0
        else:
            kappa, trial, trial_merit = _line_search(problem, traj, cand, merit, cfg)
            if trial_merit > merit + 1e-12 * (1.0 + abs(merit)):
                report.status = "stalled"
                report.message = f"line search stalled at outer iteration {k}"
                kappa = 0.0
            else:
                traj, merit = trial, trial_merit

        report.records.append(IterationRecord(
            iteration=k, objective=problem.objective(traj), step_norm=d, merit=merit,
            kappa=kappa, inner_iterations=inner.iterations,
            wall_time_s=time.perf_counter() - t_iter, max_costate=lam_max,
            duality_gap=inner.gap,
        ))
        report.costate, report.eta = inner.costate, inner.eta
        if report.status == "stalled":
            break
        if d < cfg.tol:
            report.status = "converged"
            break
    else:
        report.status = "max_outer"
        report.message = f"max outer iterations ({cfg.max_outer}) reached"

    report.objective = problem.objective(traj)
    report.wall_time_s = time.perf_counter() - start
    if report.status == "max_outer":
        raise OuterLoopError(report.message, report, traj)
    return traj, report


def _line_search(problem, traj, cand, merit0, cfg):
    """Golden-section search for ``kappa`` in [0, 1]; returns the best sample."""
    evals = {0.0: merit0}

    def P(kappa):
        if kappa not in evals:
            trial = traj.combine(cand, kappa)
            val = merit_value(problem, trial, cfg.theta)
            evals[kappa] = val if np.isfinite(val) else np.inf
        return evals[kappa]

    P(1.0)
    a, b = 0.0, 1.0
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = P(c), P(d)
    # the current merit is already known, so only fresh samples count toward the budget
    while len(evals) - 1 < cfg.line_search_max_evals and b - a > 1e-10:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = P(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = P(d)
    kappa = min(evals, key=lambda k: (evals[k], -k))
    return kappa, traj.combine(cand, kappa), evals[kappa]


def solve_algorithm1(problem: NlpProblem, cfg: OuterConfig | None = None):
    """Full-step sequential method for problems without terminal constraints.

    Returns
    -------
    (Trajectory, SolveReport)
    """
    cfg = cfg or OuterConfig()
    if problem.n_terminal:
        raise ValueError("Algorithm 1 handles free terminal states only; "
                         "use solve_algorithm2 for terminal-constrained problems")
    return _run(problem, cfg, 1)


def solve_algorithm2(problem: NlpProblem, cfg: OuterConfig | None = None):
    """Sequential method with merit line search; accepts terminal constraints.

    Returns
    -------
    (Trajectory, SolveReport)
    """
    return _run(problem, cfg or OuterConfig(), 2)


def solve(problem: NlpProblem, cfg: OuterConfig | None = None):
    """Algorithm 1 for free terminal states, Algorithm 2 otherwise."""
    cfg = cfg or OuterConfig()
    return solve_algorithm2(problem, cfg) if problem.n_terminal else solve_algorithm1(problem, cfg)

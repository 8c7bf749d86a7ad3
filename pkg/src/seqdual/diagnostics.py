"""Optimality residuals, duality-gap audits and the control-curvature check."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Optional

import numpy as np

from .core import CostateTrajectory, NlpProblem, Trajectory
from .lq_dual import DualSolverConfig, solve_dual
from .lq_primal import project_control, transcribe
from .qp_engine import dense_kkt_oracle, solve_box_qp
from .quasilin import LqProblem


def np_kkt_residual(problem: NlpProblem, traj: Trajectory, costate: CostateTrajectory,
                    eta=None) -> float:
    """Sup norm of the discrete necessary conditions of the nonlinear problem.

    Dynamics and costate defects are rate-scaled.  The control condition is
    the projected-gradient fixed point
    ``u_i - Pr(u_i - (g'(u_i) + lambda_{i+1}' h_u(x_i, u_i)))``.
    """
    x, u, lam = traj.states, traj.controls, costate.values
    if lam.shape != x.shape:
        raise ValueError("costate does not conform to the trajectory")
    eta = np.zeros(problem.n_terminal) if eta is None else np.asarray(eta, float).reshape(-1)
    h, N = traj.grid.h_step, traj.grid.n_intervals
    xi, ui, lam_next = x[:-1], u[:-1], lam[1:]
    with np.errstate(all="ignore"):
        dyn = (x[1:] - xi) / h - problem.h_eval(xi, ui)
        Ax = problem.h_jac_x(xi, ui)
        adj = ((lam[:-1] - lam_next) / h - np.einsum("ikj,ik->ij", Ax, lam_next)
               - problem.f_grad(xi))
        Hu = problem.g_d1(ui) + np.sum(lam_next * problem.h_jac_u(xi, ui), axis=1)
        lo, hi = problem.bounds(traj.grid)
        ctrl = ui - project_control(ui - Hu, lo[:N], hi[:N])
        terminal = lam[-1] - problem.E.T @ eta
        boundary = np.concatenate([x[0] - problem.x0, problem.E @ x[-1] - problem.e_f])
    parts = [dyn, adj, ctrl, terminal, boundary]
    val = max(float(np.max(np.abs(p))) if np.size(p) else 0.0 for p in parts)
    return val if np.isfinite(val) else float("inf")


@dataclass(frozen=True)
class AuditRow:
    n_intervals: int
    primal_objective: float
    dual_value: float
    gap: float
    rel_gap: float
    recovered_objective: float


def duality_gap_audit(lq: LqProblem, nn_list: Iterable[int], pairing: str = "adjoint",
                      primal: str = "auto", csv_path: Optional[str] = None) -> list[AuditRow]:
    """Solve the LQ problem on each grid by both routes and tabulate the gap.

    ``gap = (primal optimum without the expansion offset) - (dual optimum)``;
    weak duality makes it nonnegative for the adjoint pairing.  Grids other
    than ``lq``'s own are obtained by :meth:`LqProblem.regrid`.  ``primal``
    picks the reference: ``"oracle"`` (dense enumeration), ``"ip"``, or
    ``"auto"`` (oracle up to 8 intervals).
    """
    rows = []
    for nn in nn_list:
        nn = int(nn)
        sub = lq if nn == lq.grid.n_intervals else lq.regrid(nn)
        qp = transcribe(sub)
        use_oracle = primal == "oracle" or (primal == "auto" and nn <= 8)
        psol = dense_kkt_oracle(qp) if use_oracle else solve_box_qp(qp)
        p_obj = psol.objective - sub.objective_offset
        _, rec, rep = solve_dual(sub, DualSolverConfig(pairing=pairing))
        gap = p_obj - rep.dp_value
        rows.append(AuditRow(nn, p_obj, rep.dp_value, gap, abs(gap) / (1.0 + abs(p_obj)),
                             rec.objective - sub.objective_offset))
    if csv_path:
        write_audit_csv(rows, csv_path)
    return rows


def write_audit_csv(rows: list[AuditRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(AuditRow)])
        for r in rows:
            vals = astuple(r)
            w.writerow([vals[0]] + [format(v, ".17g") for v in vals[1:]])


def check_h1(problem: NlpProblem, u_range, samples: int = 1001) -> float:
    """Sampled supremum of ``|g''' g' / (g'')^2|`` over ``u_range``; compare to 1."""
    if problem.g_d3 is None:
        raise ValueError("third derivative unavailable")
    lo, hi = float(u_range[0]), float(u_range[1])
    if lo > hi:
        raise ValueError("empty u_range")
    if samples < 2 and lo != hi:
        raise ValueError("samples must be at least 2")
    u = np.array([lo]) if lo == hi else np.linspace(lo, hi, samples)
    ratio = np.abs(problem.g_d3(u) * problem.g_d1(u) / problem.g_d2(u) ** 2)
    return float(np.max(ratio))

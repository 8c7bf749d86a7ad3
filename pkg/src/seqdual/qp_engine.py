"""Primal-dual interior-point solver for transcribed LQ subproblems.

Also provides the dense active-set enumeration oracle used by the tests.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .banded import KktFactorizationError, affine_recursion, solve_kkt
from .lq_primal import PrimalLqSolution, TranscribedQp, solution_from_kkt


class QpSolverError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InfeasibleSubproblemError(QpSolverError):
    pass


def is_feasible(qp: TranscribedQp) -> bool:
    """LP feasibility test of the transcribed constraints (HiGHS)."""
    bounds = np.column_stack([np.full(qp.n_var, -np.inf), np.full(qp.n_var, np.inf)])
    bounds[qp.u_index, 0] = qp.lo
    bounds[qp.u_index, 1] = qp.hi
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b)
              for a, b in bounds]
    res = linprog(np.zeros(qp.n_var), A_eq=qp.G, b_eq=qp.b, bounds=bounds, method="highs")
    return res.status != 2


def _diagnose(qp: TranscribedQp, message: str, best=None):
    if not is_feasible(qp):
        return InfeasibleSubproblemError(
            "primal subproblem infeasible: terminal constraint unreachable under the control bounds")
    return QpSolverError(message, best=best)


@dataclass(frozen=True)
class QpSolverConfig:
    tol: float = 1e-8
    max_iter: int = 200
    sigma: float = 0.2
    step_fraction: float = 0.995
    polish_threshold: float = 1e-3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (0, 1)")


def _initial_point(qp: TranscribedQp) -> np.ndarray:
    lq = qp.lq
    N, n = qp.n_intervals, qp.n
    lo, hi = qp.lo, qp.hi
    u = np.zeros(N)
    both = np.isfinite(lo) & np.isfinite(hi)
    u[both] = 0.5 * (lo[both] + hi[both])
    lo_only = np.isfinite(lo) & ~np.isfinite(hi)
    hi_only = ~np.isfinite(lo) & np.isfinite(hi)
    u[lo_only] = np.where(lo[lo_only] < 0, 0.0, lo[lo_only] + 1.0)
    u[hi_only] = np.where(hi[hi_only] > 0, 0.0, hi[hi_only] - 1.0)
    # states from the LQ dynamics under the starting control
    h = qp.grid.h_step
    with np.errstate(all="ignore"):
        x = affine_recursion(np.eye(n) + h * lq.A[:N], h * (lq.B[:N] * u[:, None] + lq.c[:N]), lq.x0)
    if not np.all(np.isfinite(x)):
        x = np.tile(lq.x0, (N + 1, 1))
    return np.concatenate([x.ravel(), u])


def solve_box_qp(qp: TranscribedQp, cfg: QpSolverConfig | None = None) -> PrimalLqSolution:
    """Interior-point solve with log-barrier on the control boxes.

    Residuals are tested in rate scaling (stationarity and complementarity
    divided by the step size) so the tolerance does not weaken with ``N``.
    """
    cfg = cfg or QpSolverConfig()
    lo, hi = qp.lo, qp.hi
    if np.any(lo > hi):
        raise QpSolverError("infeasible boxes: alpha > beta")
    h = qp.grid.h_step
    iu = qp.u_index
    lm = np.isfinite(lo)
    um = np.isfinite(hi)
    if np.any(lm & um & (hi - lo <= 0)):
        # degenerate boxes pin the control; widen infinitesimally for the barrier
        eq = lm & um & (hi - lo <= 0)
        lo = lo.copy()
        hi = hi.copy()
        lo[eq] -= 1e-12
        hi[eq] += 1e-12
    n_bounds = int(lm.sum() + um.sum())
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return _ip_loop(qp, cfg, lo, hi, lm, um, n_bounds, h, iu)


def _ip_loop(qp, cfg, lo, hi, lm, um, n_bounds, h, iu):
    z = _initial_point(qp)
    nu = np.zeros(qp.G.shape[0])
    zl = np.where(lm, 1.0, 0.0) * h
    zu = np.where(um, 1.0, 0.0) * h
    mu_target = np.inf
    history = []
    P, G = qp.P, qp.G
    status = "max_iter"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        u = z[iu]
        sl = np.where(lm, u - lo, 1.0)
        su = np.where(um, hi - u, 1.0)
        rd = P @ z + qp.q + G.T @ nu
        rd[iu] += -zl + zu
        rp = G @ z - qp.b
        comp = (np.sum(sl * zl * lm) + np.sum(su * zu * um)) / max(n_bounds, 1)
        err = max(np.max(np.abs(rd)) / h, np.max(np.abs(rp)) if rp.size else 0.0,
                  comp / h if n_bounds else 0.0)
        if err <= cfg.tol or (n_bounds and err <= cfg.polish_threshold):
            polished = _polish(qp, z, nu, zl, zu, cfg.tol, it - 1, tuple(history))
            if polished is not None:
                return polished
            if err <= cfg.tol:
                status = "optimal"
                it -= 1
                break
        mu_target = min(mu_target, cfg.sigma * comp) if n_bounds else 0.0
        history.append(mu_target / h)

        dlo = np.where(lm, zl / sl, 0.0)
        dhi = np.where(um, zu / su, 0.0)
        diag = np.zeros(qp.n_var)
        diag[iu] = dlo + dhi
        H = P + sp.diags(diag)
        rhs = -rd
        rhs[iu] += np.where(lm, mu_target / sl - zl, 0.0) - np.where(um, mu_target / su - zu, 0.0)
        try:
            dz, dnu = solve_kkt(H, G, rhs, -rp, qp.var_keys, qp.row_keys)
        except KktFactorizationError as exc:
            raise _diagnose(qp, str(exc)) from None
        du = dz[iu]
        dzl = np.where(lm, (mu_target - zl * sl - zl * du) / sl, 0.0)
        dzu = np.where(um, (mu_target - zu * su + zu * du) / su, 0.0)

        tau = cfg.step_fraction
        ap = _max_step(sl, du, lm, tau)
        ap = min(ap, _max_step(su, -du, um, tau))
        ad = min(_max_step(zl, dzl, lm, tau), _max_step(zu, dzu, um, tau))
        z = z + ap * dz
        nu = nu + ad * dnu
        zl = zl + ad * dzl
        zu = zu + ad * dzu
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(nu))):
            raise _diagnose(qp, "interior-point iterate became non-finite")

    try:
        sol = solution_from_kkt(qp, z, nu, zl, zu, iterations=it, status=status,
                                barrier_history=tuple(history))
    except ValueError:
        sol = None
    if status != "optimal" or sol is None:
        raise _diagnose(qp, f"max iterations exceeded ({cfg.max_iter})", best=sol)
    return sol


def _polish(qp: TranscribedQp, z, nu, zl, zu, tol, iterations, history, max_rounds: int = 20):
    """Primal-dual active-set finish started from an interior-point iterate.

    The active set is re-derived from the projection formula after each
    equality-constrained solve until it repeats.  Returns ``None`` unless the
    result satisfies the exact discrete optimality conditions to ``tol``.
    """
    lq = qp.lq
    N, n = qp.n_intervals, qp.n
    h = qp.grid.h_step
    lo, hi = qp.lo, qp.hi
    u = z[qp.u_index]
    target = _control_target(lq, nu, N, n)
    # start from bounds that both the multiplier estimate and the iterate point at
    lower = np.isfinite(lo) & (target < lo) & (zl / h > u - lo)
    upper = np.isfinite(hi) & (target > hi) & (zu / h > hi - u)
    seen = set()
    m = qp.G.shape[0]
    for _ in range(max_rounds):
        key = (lower.tobytes(), upper.tobytes())
        if key in seen:
            break
        seen.add(key)
        act = np.flatnonzero(lower | upper)
        C = sp.csr_matrix((np.ones(act.size), (np.arange(act.size), qp.u_index[act])),
                          shape=(act.size, qp.n_var))
        d = np.where(lower[act], lo[act], hi[act])
        G = sp.vstack([qp.G, C], format="csr")
        row_keys = np.concatenate([qp.row_keys, qp.var_keys[qp.u_index[act]]])
        try:
            zp, mult = solve_kkt(qp.P, G, -qp.q, np.concatenate([qp.b, d]), qp.var_keys, row_keys)
        except KktFactorizationError:
            return None
        rho = mult[m:]
        zl_p = np.zeros(N)
        zu_p = np.zeros(N)
        zl_p[act] = np.where(lower[act], -rho, 0.0)
        zu_p[act] = np.where(upper[act], rho, 0.0)
        try:
            sol = solution_from_kkt(qp, zp, mult[:m], zl_p, zu_p, iterations=iterations,
                                    status="optimal", barrier_history=history)
        except ValueError:
            return None
        if sol.kkt_residual <= tol:
            return sol
        target = _control_target(lq, mult[:m], N, n)
        lower = np.isfinite(lo) & (target < lo)
        upper = np.isfinite(hi) & (target > hi)
    return None


def _control_target(lq, nu, N, n):
    lam_next = -nu[n: n + n * N].reshape(N, n)
    return (-np.sum(lq.B[:N] * lam_next, axis=1) - lq.r[:N]) / lq.R[:N]


def _max_step(s, ds, mask, tau):
    neg = mask & (ds < 0)
    if not np.any(neg):
        return 1.0
    return float(min(1.0, tau * np.min(-s[neg] / ds[neg])))


def dense_kkt_oracle(qp: TranscribedQp, max_intervals: int = 8) -> PrimalLqSolution:
    """Exact solution by enumerating lower/free/upper activity of every control."""
    N = qp.n_intervals
    if N > max_intervals:
        raise ValueError(f"instance too large for enumeration (N={N} > {max_intervals})")
    P = qp.P.toarray()
    G = qp.G.toarray()
    iu = qp.u_index
    lo, hi = qp.lo, qp.hi
    nz, m = P.shape[0], G.shape[0]
    scale = 1.0 + np.abs(P).max() + np.abs(qp.q).max()

    choices = []
    for j in range(N):
        opts = ["free"]
        if np.isfinite(lo[j]):
            opts.append("lower")
        if np.isfinite(hi[j]):
            opts.append("upper")
        choices.append(opts)

    best = None
    for pattern in itertools.product(*choices):
        act = [j for j, s in enumerate(pattern) if s != "free"]
        C = np.zeros((len(act), nz))
        d = np.zeros(len(act))
        for r, j in enumerate(act):
            C[r, iu[j]] = 1.0
            d[r] = lo[j] if pattern[j] == "lower" else hi[j]
        Aeq = np.vstack([G, C])
        beq = np.concatenate([qp.b, d])
        K = np.block([[P, Aeq.T], [Aeq, np.zeros((Aeq.shape[0], Aeq.shape[0]))]])
        rhs = np.concatenate([-qp.q, beq])
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        z = sol[:nz]
        lagr = sol[nz:]
        if np.max(np.abs(K @ sol - rhs)) > 1e-8 * (1.0 + np.abs(rhs).max()):
            continue
        u = z[iu]
        tol = 1e-9 * (1.0 + np.abs(u).max())
        free = np.array([s == "free" for s in pattern])
        if np.any(free & ((u < lo - tol) | (u > hi + tol))):
            continue
        rho = lagr[m:]
        ok = True
        zl = np.zeros(N)
        zu = np.zeros(N)
        for r, j in enumerate(act):
            if pattern[j] == "lower":
                zl[j] = -rho[r]
                ok &= zl[j] >= -1e-9 * scale
            else:
                zu[j] = rho[r]
                ok &= zu[j] >= -1e-9 * scale
        if not ok:
            continue
        obj = qp.objective(z)
        if best is None or obj < best[0] - 1e-14 * (1.0 + abs(obj)):
            best = (obj, z, lagr[:m], zl, zu)
    if best is None:
        raise QpSolverError("dense oracle found no KKT point (infeasible instance?)")
    _, z, nu, zl, zu = best
    return solution_from_kkt(qp, z, nu, zl, zu, iterations=0, status="optimal")

"""Fenchel dual of the LQ subproblem with the dual dynamics eliminated.

The dual costate ``p`` is a function of the free dual variables
``(y, eta)`` through the backward recursion

    p_N = -E^T eta,    p_i = p_{i+1} + h (A_i^T p_{i+1} - W_i y_i - omega_i),

so the dual is an unconstrained minimization of

    D(y, eta) = x0'p_0 + e_f'eta + sum_i h (1/2 y_i'W_i y_i + p_k'c_i + psi_i(B_i'p_k)).

With the ``"adjoint"`` pairing (default) interval ``i`` uses ``k = i + 1``.
That choice makes ``-D`` the exact Lagrangian dual of the Euler
transcription, so weak duality holds with no discretization slack.  The
``"collocated"`` pairing uses ``k = i`` and is consistent only to O(h).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .banded import KktFactorizationError, affine_recursion, assemble, block_triplets, solve_kkt
from .core import CostateTrajectory, Trajectory
from .lq_primal import project_control
from .quasilin import LqProblem, lq_objective

PAIRINGS = ("adjoint", "collocated")


class DualSolverError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class UnboundedDualError(DualSolverError):
    pass


@dataclass(frozen=True)
class PsiParams:
    """Parameters of ``psi``, the conjugate of ``R/2 u^2 + r u`` plus the box indicator.

    Scalars or equal-length arrays (one entry per interval).
    """

    R: np.ndarray
    r: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        for name in ("R", "r", "alpha", "beta"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if np.any(~(self.R > 0)):
            raise ValueError("R must be positive")
        if np.any(self.alpha > self.beta):
            raise ValueError("empty interval: alpha > beta")

    @classmethod
    def from_lq(cls, lq: LqProblem) -> "PsiParams":
        N = lq.grid.n_intervals
        return cls(lq.R[:N], lq.r[:N], lq.alpha[:N], lq.beta[:N])


def psi_eval(u_star, params: PsiParams):
    """Three-branch piecewise quadratic conjugate, evaluated elementwise."""
    R, r, lo, hi = params.R, params.r, params.alpha, params.beta
    s = np.asarray(u_star, float) - r
    w = s / R
    # infinite bounds never select their branch; substitute 0 to keep the arithmetic finite
    lo_f = np.where(np.isfinite(lo), lo, 0.0)
    hi_f = np.where(np.isfinite(hi), hi, 0.0)
    out = np.where(w < lo, -0.5 * R * lo_f**2 + s * lo_f,
                   np.where(w > hi, -0.5 * R * hi_f**2 + s * hi_f, 0.5 * s * s / R))
    return float(out) if np.ndim(out) == 0 else out


def psi_deriv(u_star, params: PsiParams):
    """``Pr_[alpha, beta]((u_star - r) / R)``; also the recovered control."""
    return project_control((np.asarray(u_star, float) - params.r) / params.R,
                           params.alpha, params.beta)


def psi_second(u_star, params: PsiParams):
    """Generalized second derivative: ``1/R`` on the closed interior branch, else 0."""
    w = (np.asarray(u_star, float) - params.r) / params.R
    out = np.where((w >= params.alpha) & (w <= params.beta), 1.0 / params.R, 0.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class DualVariables:
    """Free dual variables ``(y, eta)`` and the costate ``p`` they determine."""

    y: np.ndarray
    eta: np.ndarray
    p: CostateTrajectory

    @classmethod
    def from_free(cls, lq: LqProblem, y, eta) -> "DualVariables":
        y = np.array(y, float)
        eta = np.array(eta, float).reshape(-1)
        return cls(y, eta, propagate_dual_state(lq, y, eta))


@dataclass(frozen=True, eq=False)
class RecoveredPrimal:
    """Primal trajectory read off a dual point; ``costate`` is ``-p``."""

    traj: Trajectory
    costate: CostateTrajectory
    duality_gap: float
    objective: float


@dataclass(frozen=True)
class DualSolverConfig:
    tol: float = 1e-8
    max_iter: int = 100
    pairing: str = "adjoint"
    null_eps: float = 1e-8
    null_threshold: float = 1e-10
    eta_reg: float = 1e-10
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    unbounded_level: float = -1e15
    dump_path: Optional[str] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}")


@dataclass(frozen=True)
class DualSolveReport:
    iterations: int
    status: str
    dual_value: float
    dp_value: float
    grad_norm: float
    duality_gap: float
    history: tuple = field(default=(), repr=False)


def _check_dims(lq: LqProblem, y, eta):
    N, n = lq.grid.n_intervals, lq.state_dim
    if y.shape != (N + 1, n):
        raise ValueError(f"y has shape {y.shape}, expected {(N + 1, n)}")
    if eta.shape != (lq.n_terminal,):
        raise ValueError(f"eta has length {eta.size}, expected {lq.n_terminal}")


def propagate_dual_state(lq: LqProblem, y, eta) -> CostateTrajectory:
    """Backward dual recursion from ``p_N = -E^T eta``."""
    y = np.asarray(y, float)
    eta = np.asarray(eta, float).reshape(-1)
    _check_dims(lq, y, eta)
    N, h = lq.grid.n_intervals, lq.grid.h_step
    Mt = np.eye(lq.state_dim) + h * np.swapaxes(lq.A[:N], 1, 2)
    b = -h * (np.einsum("ijk,ik->ij", lq.W[:N], y[:N]) + lq.omega[:N])
    pN = -lq.E.T @ eta if lq.n_terminal else np.zeros(lq.state_dim)
    rev = affine_recursion(Mt[::-1], b[::-1], pN)[::-1]
    if not np.all(np.isfinite(rev)):
        i = int(np.argwhere(~np.isfinite(rev))[-1][0])
        raise FloatingPointError(f"non-finite dual state propagation at node {i}")
    return CostateTrajectory(lq.grid, rev)


def _paired(p: np.ndarray, pairing: str) -> np.ndarray:
    return p[1:] if pairing == "adjoint" else p[:-1]


def dual_objective(lq: LqProblem, vars: DualVariables, pairing: str = "adjoint") -> float:
    """Minimization-form dual value; the negation is the dual problem's value."""
    y, eta = np.asarray(vars.y, float), np.asarray(vars.eta, float).reshape(-1)
    _check_dims(lq, y, eta)
    p = vars.p.values
    N, h = lq.grid.n_intervals, lq.grid.h_step
    pk = _paired(p, pairing)
    v = np.sum(pk * lq.B[:N], axis=1)
    stage = (0.5 * np.einsum("ij,ijk,ik->i", y[:N], lq.W[:N], y[:N])
             + np.sum(pk * lq.c[:N], axis=1) + psi_eval(v, PsiParams.from_lq(lq)))
    return float(lq.x0 @ p[0] + lq.e_f @ eta + h * np.sum(stage))


def _adjoint_state(lq: LqProblem, p: np.ndarray, pairing: str) -> np.ndarray:
    """``d D / d p_j`` through the recursion; equals the LQ rollout under the adjoint pairing."""
    N, h = lq.grid.n_intervals, lq.grid.h_step
    B = lq.B[:N]
    u = psi_deriv(np.sum(_paired(p, pairing) * B, axis=1), PsiParams.from_lq(lq))
    direct = h * (lq.c[:N] + B * np.atleast_1d(u)[:, None])
    M = np.eye(lq.state_dim) + h * lq.A[:N]
    if pairing == "adjoint":
        return affine_recursion(M, direct, lq.x0)
    shifted = np.vstack([direct[1:], np.zeros((1, lq.state_dim))])
    return affine_recursion(M, shifted, lq.x0 + direct[0])


def dual_gradient(lq: LqProblem, y, eta, pairing: str = "adjoint"):
    """Gradient of :func:`dual_objective` in ``(y, eta)`` via the adjoint recursion.

    Returns ``(grad_y, grad_eta)``; ``grad_y[N]`` is zero since ``y_N`` is inert.
    """
    y = np.asarray(y, float)
    eta = np.asarray(eta, float).reshape(-1)
    p = propagate_dual_state(lq, y, eta).values
    a = _adjoint_state(lq, p, pairing)
    N, h = lq.grid.n_intervals, lq.grid.h_step
    gy = np.zeros_like(y)
    gy[:N] = h * np.einsum("ijk,ik->ij", lq.W[:N], y[:N] - a[:N])
    geta = lq.e_f - lq.E @ a[N] if lq.n_terminal else np.zeros(0)
    return gy, geta


def recover_primal(lq: LqProblem, vars: DualVariables, pairing: str = "adjoint",
                   states: Optional[np.ndarray] = None) -> RecoveredPrimal:
    """Projection-formula controls and the matching states, with the gap vs. the dual.

    States come from a forward rollout of the LQ dynamics unless ``states``
    is given.  :func:`solve_dual` passes the states from its final Newton
    system, which are free of the round-off a rollout amplifies when the
    linearized dynamics grow quickly.
    """
    N, h = lq.grid.n_intervals, lq.grid.h_step
    p = vars.p.values
    u = np.atleast_1d(psi_deriv(np.sum(_paired(p, pairing) * lq.B[:N], axis=1),
                                PsiParams.from_lq(lq)))
    if states is None:
        M = np.eye(lq.state_dim) + h * lq.A[:N]
        x = affine_recursion(M, h * (lq.c[:N] + lq.B[:N] * u[:, None]), lq.x0)
    else:
        x = np.asarray(states, float)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite state in dual recovery rollout")
    traj = Trajectory(lq.grid, x, np.append(u, u[-1]))
    obj = lq_objective(lq, traj)
    gap = abs(obj - lq.objective_offset + dual_objective(lq, vars, pairing))
    return RecoveredPrimal(traj, CostateTrajectory(lq.grid, -p), gap, obj)


class _DualModel:
    """Regularized dual objective, its gradient and generalized Newton steps."""

    def __init__(self, lq: LqProblem, cfg: DualSolverConfig):
        self.lq, self.cfg = lq, cfg
        self.N, self.n, self.k = lq.grid.n_intervals, lq.state_dim, lq.n_terminal
        self.h = lq.grid.h_step
        self.psi = PsiParams.from_lq(lq)
        W = lq.W[: self.N]
        lam, V = np.linalg.eigh(W)
        thresh = cfg.null_threshold * np.maximum(np.abs(lam).max(axis=1, keepdims=True), 1.0)
        null = (np.abs(lam) <= thresh).astype(float)
        self.P_null = np.einsum("iaj,ij,ibj->iab", V, null, V)
        self._static_keys()

    def _static_keys(self):
        N, n, k = self.N, self.n, self.k
        self.n_p = n * (N + 1)
        self.n_v = self.n_p + n * N + k
        self.var_keys = np.concatenate([np.repeat(3 * np.arange(N + 1), n),
                                        np.repeat(3 * np.arange(N) + 1, n),
                                        np.full(k, 3 * N + 2)])
        self.row_keys = np.concatenate([np.repeat(3 * np.arange(N) + 2, n),
                                        np.full(n, 3 * N + 1)])
        idx = np.arange(N)
        I = np.broadcast_to(np.eye(n), (N, n, n))
        At = np.swapaxes(self.lq.A[:N], 1, 2)
        trip = [
            block_triplets(I, n * idx, n * idx),
            block_triplets(-(I + self.h * At), n * idx, n * (idx + 1)),
            block_triplets(self.h * self.lq.W[:N], n * idx, self.n_p + n * idx),
            block_triplets(np.eye(n)[None], [n * N], [n * N]),
        ]
        if k:
            trip.append(block_triplets(self.lq.E.T[None], [n * N], [self.n_p + n * N]))
        self.G = assemble(trip, (n * N + n, self.n_v))

    def value(self, y, eta):
        vars = DualVariables.from_free(self.lq, y, eta)
        D = dual_objective(self.lq, vars, self.cfg.pairing)
        Py = np.einsum("iab,ib->ia", self.P_null, y[: self.N])
        return D + 0.5 * self.cfg.null_eps * self.h * float(np.sum(Py * y[: self.N])), vars

    def gradient(self, y, eta, vars):
        a = _adjoint_state(self.lq, vars.p.values, self.cfg.pairing)
        N, h = self.N, self.h
        gy = np.zeros_like(y)
        gy[:N] = h * (np.einsum("ijk,ik->ij", self.lq.W[:N], y[:N] - a[:N])
                      + self.cfg.null_eps * np.einsum("iab,ib->ia", self.P_null, y[:N]))
        geta = self.lq.e_f - self.lq.E @ a[N] if self.k else np.zeros(0)
        return gy, geta, a

    def ray_probe(self, y, eta, dy, deta) -> float:
        """Objective far along the last direction; the dual decreases linearly on rays only when
        the primal constraints are inconsistent."""
        t = 1e18 / max(np.abs(deta).max(initial=0.0), np.abs(dy).max(initial=0.0), 1e-300)
        with np.errstate(all="ignore"):
            try:
                val, _ = self.value(y + t * dy, eta + t * deta)
            except FloatingPointError:
                return np.inf
        return val if np.isfinite(val) else np.inf

    def gradient_scale(self, y, a) -> float:
        """Magnitude of the terms whose difference forms the gradient (round-off floor)."""
        N = self.N
        Wn = np.abs(self.lq.W[:N]).sum(axis=2).max(initial=0.0)
        scale = Wn * max(np.abs(y[:N]).max(initial=0.0), np.abs(a).max(initial=0.0))
        if self.k:
            scale = max(scale, np.abs(self.lq.E).sum(axis=1).max() * np.abs(a[N]).max(),
                        np.abs(self.lq.e_f).max())
        return max(1.0, scale)

    def newton_step(self, y, eta, vars, a):
        lq, N, n, k, h = self.lq, self.N, self.n, self.k, self.h
        p = vars.p.values
        B = lq.B[:N]
        pk = _paired(p, self.cfg.pairing)
        d2 = np.atleast_1d(psi_second(np.sum(pk * B, axis=1), self.psi))
        offs = n * (np.arange(N) + (1 if self.cfg.pairing == "adjoint" else 0))
        Hy = h * (lq.W[:N] + self.cfg.null_eps * self.P_null)
        idx = np.arange(N)
        H = assemble([
            block_triplets(h * d2[:, None, None] * B[:, :, None] * B[:, None, :], offs, offs),
            block_triplets(Hy, self.n_p + n * idx, self.n_p + n * idx),
            (self.n_p + n * N + np.arange(k), self.n_p + n * N + np.arange(k),
             np.full(k, self.cfg.eta_reg)),
        ], (self.n_v, self.n_v))
        # direct partial gradients with respect to (p, y, eta)
        u = np.atleast_1d(psi_deriv(np.sum(pk * B, axis=1), self.psi))
        direct = h * (lq.c[:N] + B * u[:, None])
        gp = np.zeros((N + 1, n))
        gp[0] = lq.x0
        if self.cfg.pairing == "adjoint":
            gp[1:] += direct
        else:
            gp[:-1] += direct
        gy = np.einsum("iab,ib->ia", Hy, y[:N])
        g = np.concatenate([gp.ravel(), gy.ravel(), lq.e_f])
        dv, mult = solve_kkt(H, self.G, -g, np.zeros(self.G.shape[0]), self.var_keys, self.row_keys)
        dy = np.zeros_like(y)
        dy[:N] = dv[self.n_p: self.n_p + n * N].reshape(N, n)
        # multipliers of the recursion rows are minus the primal states of the Newton model
        return dy, dv[self.n_p + n * N:], -mult.reshape(N + 1, n)


def solve_dual(lq: LqProblem, cfg: DualSolverConfig | None = None, y0=None, eta0=None):
    """Minimize the eliminated dual by semismooth Newton with Armijo backtracking.

    Converged when either test passes:

    * the rate-scaled gradient ``max(|grad_y| / h, |grad_eta|)`` is below
      ``cfg.tol`` times the magnitude of the terms it is formed from;
    * the Newton step is below ``cfg.tol`` relative to ``(y, eta)``.

    The gradient goes through a forward rollout and inherits its round-off
    growth on fast linearizations; the Newton step comes from a banded
    solve of the whole system and stays accurate, so the second test is
    the one that fires there.

    Returns
    -------
    (DualVariables, RecoveredPrimal, DualSolveReport)
    """
    cfg = cfg or DualSolverConfig()
    model = _DualModel(lq, cfg)
    N, n, h = model.N, model.n, model.h
    y = np.zeros((N + 1, n)) if y0 is None else np.array(y0, float).reshape(N + 1, n)
    y[N] = 0.0
    eta = np.zeros(model.k) if eta0 is None else np.array(eta0, float).reshape(-1)

    history = []
    phi, vars = model.value(y, eta)
    status = "max_iter"
    gnorm = np.inf
    last_step = 0.0
    stagnant = 0
    it = 0
    for it in range(cfg.max_iter + 1):
        gy, geta, a = model.gradient(y, eta, vars)
        gnorm = max(np.max(np.abs(gy)) / h, np.max(np.abs(geta)) if geta.size else 0.0)
        try:
            dy, deta, states = model.newton_step(y, eta, vars, a)
        except KktFactorizationError as exc:
            raise DualSolverError(str(exc), best=vars) from None
        step = max(np.abs(dy).max(), np.abs(deta).max(initial=0.0))
        history.append((it, phi, gnorm, last_step))
        size = 1.0 + max(np.abs(y).max(), np.abs(eta).max(initial=0.0))
        if gnorm <= cfg.tol * model.gradient_scale(y, a) or step <= cfg.tol * size:
            status = "optimal"
            break
        if it == cfg.max_iter:
            break
        slope = float(np.sum(gy * dy) + geta @ deta)
        if not slope < 0:
            dy, deta = -gy / h, -geta
            slope = float(np.sum(gy * dy) + geta @ deta)
        t = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            y_t, eta_t = y + t * dy, eta + t * deta
            try:
                phi_t, vars_t = model.value(y_t, eta_t)
            except FloatingPointError:
                phi_t = np.inf
            # near the optimum rounding swamps the sufficient-decrease test
            flat = abs(slope) * t <= 1e-14 * (1.0 + abs(phi))
            if np.isfinite(phi_t) and phi_t <= phi + cfg.armijo_c1 * t * slope:
                accepted = True
                stagnant = 0
                break
            if np.isfinite(phi_t) and flat and phi_t <= phi + 1e-13 * (1.0 + abs(phi)):
                accepted = True
                stagnant += 1
                break
            t *= cfg.backtrack
        if not accepted or stagnant > 3:
            status = "line_search_failed"
            break
        y, eta, phi, vars, last_step = y_t, eta_t, phi_t, vars_t, t
        probe = phi
        if model.k and np.abs(eta).max() > 1e6:
            probe = min(phi, model.ray_probe(y, eta, dy, deta))
        if probe < cfg.unbounded_level:
            raise UnboundedDualError("unbounded dual (objective below -1e15): primal data infeasible",
                                     best=vars)

    if cfg.dump_path:
        _dump_history(cfg.dump_path, history)
    if status != "optimal":
        msg = ("max iterations exceeded" if status == "max_iter"
               else "dual line search failed to decrease the objective")
        raise DualSolverError(f"{msg} ({it} iterations, grad {gnorm:.3g})", best=vars)
    rec = recover_primal(lq, vars, cfg.pairing, states=states)
    D = dual_objective(lq, vars, cfg.pairing)
    report = DualSolveReport(iterations=it, status=status, dual_value=D, dp_value=-D,
                             grad_norm=gnorm, duality_gap=rec.duality_gap,
                             history=tuple(history))
    return vars, rec, report


def _dump_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "dual_value", "grad_norm", "step"])
        for row in history:
            w.writerow([row[0]] + [format(v, ".17g") for v in row[1:]])

"""Quasilinearization of a nonlinear problem around a nominal trajectory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NlpProblem, TimeGrid, Trajectory


class StrongConvexityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LqProblem:
    """Time-varying linear-quadratic problem with box-constrained scalar control.

    Per-node coefficients (leading axis has ``grid.n_nodes`` entries):
    ``W (N+1, n, n)``, ``omega (N+1, n)``, ``R (N+1,)``, ``r (N+1,)``,
    ``A (N+1, n, n)``, ``B (N+1, n)``, ``c (N+1, n)``, ``alpha``/``beta (N+1,)``.
    ``objective_offset`` holds the constants dropped from the expansion.
    """

    grid: TimeGrid
    W: np.ndarray
    omega: np.ndarray
    R: np.ndarray
    r: np.ndarray
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    x0: np.ndarray
    E: np.ndarray
    e_f: np.ndarray
    objective_offset: float = 0.0

    def __post_init__(self):
        m = self.grid.n_nodes
        W = np.asarray(self.W, float)
        n = W.shape[-1]
        W = 0.5 * (W + np.swapaxes(W, -1, -2))
        arrays = {
            "W": (W, (m, n, n)),
            "omega": (self.omega, (m, n)),
            "R": (self.R, (m,)),
            "r": (self.r, (m,)),
            "A": (self.A, (m, n, n)),
            "B": (self.B, (m, n)),
            "c": (self.c, (m, n)),
            "alpha": (self.alpha, (m,)),
            "beta": (self.beta, (m,)),
            "x0": (self.x0, (n,)),
        }
        for name, (val, shape) in arrays.items():
            a = np.array(val, dtype=float)
            if a.shape != shape:
                try:
                    a = np.broadcast_to(a, shape).copy()
                except ValueError:
                    raise ValueError(f"{name} has shape {a.shape}, expected {shape}") from None
            if name not in ("alpha", "beta") and not np.all(np.isfinite(a)):
                i = int(np.argwhere(~np.isfinite(a))[0][0])
                raise ValueError(f"non-finite coefficient {name} at node {i}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        E = np.asarray(self.E, float).reshape(-1, n)
        e_f = np.asarray(self.e_f, float).reshape(-1)
        if e_f.shape != (E.shape[0],):
            raise ValueError("e_f length must equal the row count of E")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "e_f", e_f)
        if np.any(~(self.R > 0)):
            i = int(np.argmax(~(self.R > 0)))
            raise StrongConvexityError(f"strong convexity violated: R <= 0 at node {i}")
        if np.any(self.alpha > self.beta):
            raise ValueError("infeasible boxes: alpha > beta")
        lam_min = np.linalg.eigvalsh(self.W).min() if n else 0.0
        if lam_min < -1e-10 * (1.0 + np.abs(self.W).max()):
            raise ValueError(f"W is not positive semidefinite (min eigenvalue {lam_min:.3g})")

    @property
    def state_dim(self) -> int:
        return self.W.shape[-1]

    @property
    def n_terminal(self) -> int:
        return self.E.shape[0]

    def regrid(self, n_intervals: int) -> "LqProblem":
        """Resample the coefficients on a new grid by piecewise-linear interpolation."""
        new = TimeGrid(self.grid.t0, self.grid.tf, n_intervals)
        t_old, t_new = self.grid.times, new.times

        def interp(a):
            flat = a.reshape(a.shape[0], -1)
            out = np.stack([np.interp(t_new, t_old, col) for col in flat.T], axis=-1)
            return out.reshape((new.n_nodes,) + a.shape[1:])

        return LqProblem(
            new, interp(self.W), interp(self.omega), interp(self.R), interp(self.r),
            interp(self.A), interp(self.B), interp(self.c),
            _interp_bound(t_new, t_old, self.alpha), _interp_bound(t_new, t_old, self.beta),
            self.x0, self.E, self.e_f, 0.0,
        )


def _interp_bound(t_new, t_old, b):
    if np.all(np.isfinite(b)):
        return np.interp(t_new, t_old, b)
    if np.all(b == b[0]):
        return np.full(t_new.shape, b[0])
    raise ValueError("cannot resample partially infinite bounds")


def build_subproblem(problem: NlpProblem, nominal: Trajectory) -> LqProblem:
    """Second-order cost / first-order dynamics expansion at ``nominal``."""
    if nominal.state_dim != problem.state_dim:
        raise ValueError("nominal trajectory does not match the problem dimension")
    grid = nominal.grid
    xb, ub = nominal.states, nominal.controls
    h = grid.h_step

    g2 = np.asarray(problem.g_d2(ub), float)
    if np.any(~(g2 > 0)):
        i = int(np.argmax(~(g2 > 0)))
        raise StrongConvexityError(f"strong convexity violated: g''(u) <= 0 at node {i}")
    g0 = np.asarray(problem.g_eval(ub), float)
    g1 = np.asarray(problem.g_d1(ub), float)

    f0 = np.asarray(problem.f_eval(xb), float)
    f1 = np.asarray(problem.f_grad(xb), float)
    H = np.asarray(problem.f_hess(xb), float)
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    Hx = np.einsum("ijk,ik->ij", H, xb)

    A = np.asarray(problem.h_jac_x(xb, ub), float)
    B = np.asarray(problem.h_jac_u(xb, ub), float)
    hv = np.asarray(problem.h_eval(xb, ub), float)
    c = hv - np.einsum("ijk,ik->ij", A, xb) - B * ub[:, None]

    omega = f1 - Hx
    r = g1 - g2 * ub
    const = (f0 - np.sum(f1 * xb, axis=1) + 0.5 * np.sum(xb * Hx, axis=1)
             + g0 - g1 * ub + 0.5 * g2 * ub * ub)
    offset = float(np.sum(const[:-1]) * h)

    alpha, beta = problem.bounds(grid)
    for name, arr in (("omega", omega), ("r", r), ("A", A), ("B", B), ("c", c), ("W", H)):
        bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
        if bad.any():
            raise ValueError(f"non-finite coefficient {name} at node {int(np.argmax(bad))}")

    return LqProblem(
        grid=grid, W=H, omega=omega, R=g2, r=r, A=A, B=B, c=c,
        alpha=alpha, beta=beta, x0=problem.x0, E=problem.E, e_f=problem.e_f,
        objective_offset=offset,
    )


def lq_objective(lq: LqProblem, traj: Trajectory) -> float:
    """Rectangle-rule LQ cost of ``traj`` plus the expansion offset."""
    if traj.grid.n_nodes != lq.grid.n_nodes or traj.state_dim != lq.state_dim:
        raise ValueError("trajectory does not conform to the LQ problem")
    x = traj.states[:-1]
    u = traj.controls[:-1]
    W, om = lq.W[:-1], lq.omega[:-1]
    R, r = lq.R[:-1], lq.r[:-1]
    stage = (0.5 * np.einsum("ij,ijk,ik->i", x, W, x) + np.sum(om * x, axis=1)
             + 0.5 * R * u * u + r * u)
    return float(np.sum(stage) * lq.grid.h_step + lq.objective_offset)

"""Problem and trajectory data model, time grids and trajectory norms.

All problem callbacks are vectorized over a leading node axis: state
arguments have shape ``(m, n)`` and control arguments shape ``(m,)``.
Infinite control bounds are stored as ``-inf`` / ``+inf``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

Bound = Union[float, Callable[[np.ndarray], np.ndarray]]

UNBOUNDED = np.inf


class ProblemDefinitionError(ValueError):
    """Raised when problem data violate a structural assumption."""


class DynamicsBlowUp(FloatingPointError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = t0 + i * h_step`` for ``i = 0..n_intervals``."""

    t0: float
    tf: float
    n_intervals: int

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError(f"need tf > t0, got t0={self.t0}, tf={self.tf}")
        if int(self.n_intervals) != self.n_intervals or self.n_intervals < 2:
            raise ValueError(f"n_intervals must be an integer >= 2, got {self.n_intervals}")
        object.__setattr__(self, "n_intervals", int(self.n_intervals))

    @property
    def h_step(self) -> float:
        return (self.tf - self.t0) / self.n_intervals

    @property
    def n_nodes(self) -> int:
        return self.n_intervals + 1

    @property
    def times(self) -> np.ndarray:
        t = self.t0 + self.h_step * np.arange(self.n_nodes)
        t[-1] = self.tf
        return t


def _as_bound_fn(b: Optional[Bound], default: float) -> Callable[[np.ndarray], np.ndarray]:
    if b is None:
        b = default
    if callable(b):
        return lambda t: np.broadcast_to(np.asarray(b(np.asarray(t, float)), float), np.shape(t)).copy()
    val = float(b)
    return lambda t: np.full(np.shape(t), val)


@dataclass(frozen=True, eq=False)
class NlpProblem:
    """Box-control-constrained nonlinear optimal control problem.

    Minimizes the integral of ``f(x) + g(u)`` subject to ``x' = h(x, u)``,
    ``x(t0) = x0``, ``E x(tf) = e_f`` and ``alpha(t) <= u(t) <= beta(t)``.
    An ``E`` with zero rows encodes a free terminal state.

    Callbacks are vectorized over nodes (see module docstring).  ``g_d3`` is
    optional and only used by the curvature diagnostic.
    """

    state_dim: int
    t0: float
    tf: float
    f_eval: Callable
    f_grad: Callable
    f_hess: Callable
    g_eval: Callable
    g_d1: Callable
    g_d2: Callable
    h_eval: Callable
    h_jac_x: Callable
    h_jac_u: Callable
    x0: np.ndarray
    E: Optional[np.ndarray] = None
    e_f: Optional[np.ndarray] = None
    alpha: Optional[Bound] = None
    beta: Optional[Bound] = None
    g_d3: Optional[Callable] = None
    name: str = "problem"
    check: bool = True
    _alpha_fn: Callable = field(init=False, repr=False)
    _beta_fn: Callable = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.state_dim)
        if n < 1:
            raise ProblemDefinitionError("state_dim must be positive")
        x0 = np.asarray(self.x0, float).reshape(-1)
        if x0.shape != (n,):
            raise ProblemDefinitionError(f"x0 must have length {n}")
        E = np.zeros((0, n)) if self.E is None else np.atleast_2d(np.asarray(self.E, float))
        if E.size == 0:
            E = np.zeros((0, n))
        if E.shape[1] != n:
            raise ProblemDefinitionError(f"E must have {n} columns")
        e_f = np.zeros(E.shape[0]) if self.e_f is None else np.asarray(self.e_f, float).reshape(-1)
        if e_f.shape != (E.shape[0],):
            raise ProblemDefinitionError("e_f length must equal the row count of E")
        object.__setattr__(self, "state_dim", n)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "e_f", e_f)
        object.__setattr__(self, "_alpha_fn", _as_bound_fn(self.alpha, -UNBOUNDED))
        object.__setattr__(self, "_beta_fn", _as_bound_fn(self.beta, UNBOUNDED))
        if not self.t0 < self.tf:
            raise ProblemDefinitionError("need t0 < tf")
        if self.check:
            _validate_problem(self)

    @property
    def n_terminal(self) -> int:
        return self.E.shape[0]

    def grid(self, n_intervals: int) -> TimeGrid:
        return TimeGrid(self.t0, self.tf, n_intervals)

    def bounds(self, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
        t = grid.times
        return self._alpha_fn(t), self._beta_fn(t)

    def objective(self, traj: "Trajectory") -> float:
        """Rectangle-rule value of the integral of ``f(x) + g(u)``."""
        x = traj.states[:-1]
        u = traj.controls[:-1]
        return float(np.sum(self.f_eval(x) + self.g_eval(u)) * traj.grid.h_step)


def _validate_problem(p: NlpProblem, seed: int = 12345) -> None:
    n = p.state_dim
    grid = TimeGrid(p.t0, p.tf, 50)
    lo, hi = p.bounds(grid)
    if np.any(lo > hi):
        i = int(np.argmax(lo > hi))
        raise ProblemDefinitionError(f"alpha > beta at node {i} (t={grid.times[i]:g})")

    # strong convexity of g sampled on the (windowed) control box
    lo_w = np.maximum(lo, -10.0)
    hi_w = np.minimum(hi, 10.0)
    s = np.linspace(0.0, 1.0, 21)
    us = (lo_w[:, None] + (hi_w - lo_w)[:, None] * s[None, :]).ravel()
    d2 = np.asarray(p.g_d2(us), float)
    if np.any(~(d2 > 0)):
        raise ProblemDefinitionError("g is not strongly convex on the control box (g'' <= 0 sampled)")

    rng = np.random.default_rng(seed)
    scale = 0.1 * (1.0 + np.abs(p.x0))
    X = p.x0 + scale * rng.uniform(-1.0, 1.0, size=(3, n))
    ulo = np.where(np.isfinite(lo[:3]), lo[:3], -1.0)
    uhi = np.where(np.isfinite(hi[:3]), hi[:3], 1.0)
    U = ulo + (uhi - ulo) * rng.uniform(0.1, 0.9, size=3)

    H = np.asarray(p.f_hess(X), float)
    asym = np.max(np.abs(H - np.swapaxes(H, -1, -2)))
    if asym > 1e-8 * (1.0 + np.max(np.abs(H))):
        raise ProblemDefinitionError(f"f_hess is not symmetric (max asymmetry {asym:.3g})")

    _fd_check(p, X, U)


def _rel_err(a, b) -> float:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(b))))


def _fd_check(p: NlpProblem, X: np.ndarray, U: np.ndarray, tol: float = 1e-5) -> None:
    """Central-difference check of the user derivatives at the sample points."""
    n = p.state_dim
    eps = 1e-6
    m = X.shape[0]
    fd_grad = np.empty((m, n))
    fd_hess = np.empty((m, n, n))
    fd_jx = np.empty((m, n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = eps
        fd_grad[:, j] = (p.f_eval(X + e) - p.f_eval(X - e)) / (2 * eps)
        fd_hess[:, :, j] = (p.f_grad(X + e) - p.f_grad(X - e)) / (2 * eps)
        fd_jx[:, :, j] = (p.h_eval(X + e, U) - p.h_eval(X - e, U)) / (2 * eps)
    fd_ju = (p.h_eval(X, U + eps) - p.h_eval(X, U - eps)) / (2 * eps)
    fd_g1 = (p.g_eval(U + eps) - p.g_eval(U - eps)) / (2 * eps)
    fd_g2 = (p.g_d1(U + eps) - p.g_d1(U - eps)) / (2 * eps)
    checks = [
        ("f_grad", p.f_grad(X), fd_grad),
        ("f_hess", p.f_hess(X), fd_hess),
        ("h_jac_x", p.h_jac_x(X, U), fd_jx),
        ("h_jac_u", p.h_jac_u(X, U), fd_ju),
        ("g_d1", p.g_d1(U), fd_g1),
        ("g_d2", p.g_d2(U), fd_g2),
    ]
    if p.g_d3 is not None:
        checks.append(("g_d3", p.g_d3(U), (p.g_d2(U + eps) - p.g_d2(U - eps)) / (2 * eps)))
    for name, analytic, fd in checks:
        err = _rel_err(analytic, fd)
        if not err <= tol:
            raise ProblemDefinitionError(
                f"derivative callback {name} disagrees with finite differences (rel. error {err:.2e})"
            )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Node samples of the state and control on a uniform grid.

    ``controls[i]`` is held constant on ``[t_i, t_{i+1})``; the last entry
    only exists for plotting and never enters the dynamics.
    """

    grid: TimeGrid
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        x = np.array(self.states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        u = np.array(self.controls, dtype=float).reshape(-1)
        if x.shape[0] != self.grid.n_nodes:
            raise ValueError(f"states have {x.shape[0]} rows, grid has {self.grid.n_nodes} nodes")
        if u.shape[0] != self.grid.n_nodes:
            raise ValueError(f"controls have length {u.shape[0]}, grid has {self.grid.n_nodes} nodes")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            raise ValueError("trajectory contains non-finite values")
        x.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "controls", u)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    def combine(self, other: "Trajectory", kappa: float) -> "Trajectory":
        """Node-wise ``self + kappa * (other - self)``."""
        return Trajectory(
            self.grid,
            self.states + kappa * (other.states - self.states),
            self.controls + kappa * (other.controls - self.controls),
        )

    def to_csv(self, path) -> None:
        n = self.state_dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{j + 1}" for j in range(n)] + ["u"])
            for t, xi, ui in zip(self.grid.times, self.states, self.controls):
                w.writerow([_fmt(t)] + [_fmt(v) for v in xi] + [_fmt(ui)])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        if header[0] != "t" or header[-1] != "u":
            raise ValueError(f"unexpected trajectory header {header}")
        t = body[:, 0]
        grid = TimeGrid(float(t[0]), float(t[-1]), len(t) - 1)
        return cls(grid, body[:, 1:-1], body[:, -1])


@dataclass(frozen=True, eq=False)
class CostateTrajectory:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.n_nodes:
            raise ValueError(f"costate has {v.shape[0]} rows, grid has {self.grid.n_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("costate contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def sup_norm(values) -> float:
    """Max over components and nodes of the absolute value."""
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        raise ValueError("empty trajectory")
    return float(np.max(np.abs(a)))


def _check_dims(traj: Trajectory, problem: NlpProblem) -> None:
    if traj.state_dim != problem.state_dim:
        raise ValueError(
            f"trajectory state dimension {traj.state_dim} != problem dimension {problem.state_dim}"
        )


def dynamics_defect(traj: Trajectory, problem: NlpProblem) -> np.ndarray:
    """Per-interval ``(x_{i+1} - x_i)/h - h(x_i, u_i)``, shape ``(N, n)``."""
    _check_dims(traj, problem)
    x, u, h = traj.states, traj.controls, traj.grid.h_step
    return (x[1:] - x[:-1]) / h - problem.h_eval(x[:-1], u[:-1])


def l1_defect_norm(traj: Trajectory, problem: NlpProblem) -> float:
    """Discrete L1 norm of the dynamics defect (forward differences)."""
    d = dynamics_defect(traj, problem)
    return float(np.sum(np.abs(d)) * traj.grid.h_step)


def rollout(problem: NlpProblem, controls, grid: TimeGrid) -> Trajectory:
    """Forward Euler simulation from ``problem.x0`` under node-held controls."""
    u = np.asarray(controls, dtype=float).reshape(-1)
    if u.shape[0] != grid.n_nodes:
        raise ValueError(f"controls length {u.shape[0]} != node count {grid.n_nodes}")
    h = grid.h_step
    x = np.empty((grid.n_nodes, problem.state_dim))
    x[0] = problem.x0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.n_intervals):
            x[i + 1] = x[i] + h * problem.h_eval(x[i : i + 1], u[i : i + 1])[0]
            if not np.all(np.isfinite(x[i + 1])):
                raise DynamicsBlowUp(f"dynamics blow-up at node {i + 1}")
    return Trajectory(grid, x, u)

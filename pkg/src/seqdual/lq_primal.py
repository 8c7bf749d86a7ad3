"""Euler transcription of the LQ subproblem and primal optimality residuals.

Discrete costate convention: the multiplier of the dynamics row linking
``x_i`` to ``x_{i+1}`` is the costate at node ``i + 1`` (sign flipped),
which makes the backward stencil

    lambda_i = lambda_{i+1} + h (A_i^T lambda_{i+1} + W_i x_i + omega_i)

the exact algebraic adjoint of the forward state stencil.  The optimal
control on interval ``i`` is then ``Pr((-B_i^T lambda_{i+1} - r_i) / R_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .banded import assemble, block_triplets
from .core import CostateTrajectory, TimeGrid, Trajectory
from .quasilin import LqProblem


class RankDeficiencyError(ValueError):
    pass


def project_control(v, lo, hi):
    """Projection of ``v`` onto ``[lo, hi]`` (either bound may be infinite)."""
    lo_a, hi_a = np.asarray(lo, float), np.asarray(hi, float)
    if np.any(lo_a > hi_a):
        raise ValueError("empty interval: lo > hi")
    out = np.minimum(np.maximum(v, lo_a), hi_a)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class TranscribedQp:
    """``min 1/2 z'Pz + q'z + const  s.t.  G z = b,  lo <= u <= hi``.

    Decision layout ``z = [x_0 .. x_N, u_0 .. u_{N-1}]``; rows are the
    initial rows, then the ``N`` dynamics blocks, then the terminal rows.
    """

    lq: LqProblem
    P: sp.csr_matrix
    q: np.ndarray
    const: float
    G: sp.csr_matrix
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    var_keys: np.ndarray = field(repr=False)
    row_keys: np.ndarray = field(repr=False)

    @property
    def grid(self) -> TimeGrid:
        return self.lq.grid

    @property
    def n(self) -> int:
        return self.lq.state_dim

    @property
    def n_intervals(self) -> int:
        return self.lq.grid.n_intervals

    @property
    def n_var(self) -> int:
        return self.P.shape[0]

    @property
    def n_state_vars(self) -> int:
        return self.n * (self.n_intervals + 1)

    @property
    def n_terminal_rows(self) -> int:
        return self.lq.n_terminal

    @property
    def n_dynamics_rows(self) -> int:
        return self.n * self.n_intervals

    @property
    def u_index(self) -> np.ndarray:
        return np.arange(self.n_state_vars, self.n_var)

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n, N = self.n, self.n_intervals
        x = z[: n * (N + 1)].reshape(N + 1, n)
        u = z[n * (N + 1):]
        return x, u

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ (self.P @ z) + self.q @ z + self.const)

    def dump_triplets(self, path) -> None:
        """Write the QP as ``row col value`` triplets under section headers."""
        with open(path, "w") as fh:
            fh.write(f"# seqdual QP nvar={self.n_var} neq={self.G.shape[0]} "
                     f"nbox={self.lo.size} const={self.const!r}\n")
            for name, M in (("P", self.P), ("G", self.G)):
                C = sp.coo_matrix(M)
                fh.write(f"[{name}] {C.shape[0]} {C.shape[1]} {C.nnz}\n")
                for i, j, v in zip(C.row, C.col, C.data):
                    fh.write(f"{i} {j} {v!r}\n")
            for name, vec in (("q", self.q), ("b", self.b), ("lo", self.lo), ("hi", self.hi)):
                fh.write(f"[{name}] {vec.size}\n")
                for i, v in enumerate(vec):
                    fh.write(f"{i} 0 {float(v)!r}\n")


def _reachability_rank(lq: LqProblem) -> int:
    h = lq.grid.h_step
    N, n = lq.grid.n_intervals, lq.state_dim
    M = np.eye(n)
    cols = np.empty((n, N))
    for i in range(N - 1, -1, -1):
        cols[:, i] = M @ (h * lq.B[i])
        M = M @ (np.eye(n) + h * lq.A[i])
        s = np.abs(M).max()
        if s > 1e100:
            M /= s
            cols /= s
    S = lq.E @ cols
    return int(np.linalg.matrix_rank(S)) if S.size else 0


def transcribe(lq: LqProblem, check_rank: bool = True) -> TranscribedQp:
    """Forward-Euler transcription into a sparse box-constrained QP."""
    grid = lq.grid
    n, N, k = lq.state_dim, grid.n_intervals, lq.n_terminal
    h = grid.h_step
    nx = n * (N + 1)
    nz = nx + N
    if np.any(lq.alpha[:N] > lq.beta[:N]):
        raise ValueError("infeasible boxes: alpha > beta")
    if check_rank and k:
        if np.linalg.matrix_rank(lq.E) < k or _reachability_rank(lq) < k:
            raise RankDeficiencyError(
                "terminal constraint rows are rank deficient (system not controllable to E x = e_f)")

    # Hessian: x_0..x_{N-1} carry h W_i, x_N nothing, u_i carries h R_i
    idx = np.arange(N)
    P = assemble([
        block_triplets(h * lq.W[:N], n * idx, n * idx),
        (nx + idx, nx + idx, h * lq.R[:N]),
    ], (nz, nz))
    q = np.concatenate([(h * lq.omega[:N]).ravel(), np.zeros(n), h * lq.r[:N]])

    I = np.broadcast_to(np.eye(n), (N, n, n))
    r0 = n + n * idx
    trip = [
        block_triplets(np.eye(n)[None], [0], [0]),
        block_triplets(I, r0, n * (idx + 1)),
        block_triplets(-(I + h * lq.A[:N]), r0, n * idx),
        block_triplets(-h * lq.B[:N], r0, nx + idx),
    ]
    if k:
        trip.append(block_triplets(lq.E[None], [n + n * N], [n * N]))
    m = n + n * N + k
    G = assemble(trip, (m, nz))
    b = np.concatenate([lq.x0, (h * lq.c[:N]).ravel(), lq.e_f])

    var_keys = np.concatenate([np.repeat(3 * np.arange(N + 1) + 1, n), 3 * np.arange(N) + 2])
    row_keys = np.concatenate([np.zeros(n, int), np.repeat(3 * np.arange(N) + 3, n),
                               np.full(k, 3 * N + 2)])
    return TranscribedQp(
        lq=lq, P=P, q=q, const=lq.objective_offset, G=G, b=b,
        lo=np.array(lq.alpha[:N], float), hi=np.array(lq.beta[:N], float),
        var_keys=var_keys, row_keys=row_keys,
    )


@dataclass(frozen=True, eq=False)
class PrimalLqSolution:
    """Solution of a transcribed LQ subproblem with its multipliers.

    ``lower_mult`` / ``upper_mult`` are the bound multipliers in
    function-space scaling (divided by the step size).
    """

    traj: Trajectory
    costate: CostateTrajectory
    eta: np.ndarray
    objective: float
    kkt_residual: float
    lower_mult: Optional[np.ndarray] = None
    upper_mult: Optional[np.ndarray] = None
    iterations: int = 0
    status: str = "optimal"
    barrier_history: tuple = ()


def solution_from_kkt(qp: TranscribedQp, z: np.ndarray, nu: np.ndarray,
                      zl: Optional[np.ndarray] = None, zu: Optional[np.ndarray] = None,
                      **extra) -> PrimalLqSolution:
    """Map a primal-dual QP point to trajectory, costate and terminal multiplier."""
    n, N, k = qp.n, qp.n_intervals, qp.n_terminal_rows
    x, u = qp.split(z)
    lam = np.empty((N + 1, n))
    lam[0] = -nu[:n]
    lam[1:] = -nu[n: n + n * N].reshape(N, n)
    eta = np.array(nu[n + n * N: n + n * N + k], float)
    controls = np.append(u, u[-1])
    traj = Trajectory(qp.grid, x, controls)
    costate = CostateTrajectory(qp.grid, lam)
    h = qp.grid.h_step
    provisional = PrimalLqSolution(traj, costate, eta, qp.objective(z), 0.0)
    res = primal_kkt_residual(qp.lq, provisional)
    return PrimalLqSolution(
        traj=traj, costate=costate, eta=eta, objective=qp.objective(z), kkt_residual=res,
        lower_mult=None if zl is None else zl / h,
        upper_mult=None if zu is None else zu / h,
        **extra,
    )


def primal_kkt_residual(lq: LqProblem, sol: PrimalLqSolution) -> float:
    """Sup norm of the discrete optimality conditions (rate-scaled)."""
    try:
        x = np.asarray(sol.traj.states, float)
        u = np.asarray(sol.traj.controls, float)
        lam = np.asarray(sol.costate.values, float)
        eta = np.asarray(sol.eta, float).reshape(-1)
        if not all(np.all(np.isfinite(a)) for a in (x, u, lam, eta)):
            return float("inf")
        h = lq.grid.h_step
        N = lq.grid.n_intervals
        A, B, W = lq.A[:N], lq.B[:N], lq.W[:N]
        lam_next = lam[1:]
        costate = ((lam[:-1] - lam_next) / h
                   - np.einsum("ikj,ik->ij", A, lam_next)
                   - np.einsum("ijk,ik->ij", W, x[:-1]) - lq.omega[:N])
        terminal = lam[-1] - lq.E.T @ eta
        target = (-np.sum(B * lam_next, axis=1) - lq.r[:N]) / lq.R[:N]
        control = u[:N] - project_control(target, lq.alpha[:N], lq.beta[:N])
        dyn = ((x[1:] - x[:-1]) / h - np.einsum("ijk,ik->ij", A, x[:-1])
               - B * u[:N, None] - lq.c[:N])
        boundary = np.concatenate([x[0] - lq.x0, lq.E @ x[-1] - lq.e_f])
        parts = [costate, terminal, control, dyn, boundary]
        val = max(float(np.max(np.abs(p))) if np.size(p) else 0.0 for p in parts)
        return val if np.isfinite(val) else float("inf")
    except (ValueError, FloatingPointError):
        return float("inf")

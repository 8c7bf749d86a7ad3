"""Shared builders for small linear-quadratic test instances."""

from __future__ import annotations

import sys

import numpy as np
import pytest

from seqdual.core import NlpProblem, TimeGrid
from seqdual.quasilin import LqProblem


def random_lq(rng: np.random.Generator, n: int = 2, N: int = 4, terminal: int = 0,
              bounded: bool = True, tf: float = 1.0, w_rank: int | None = None) -> LqProblem:
    """Well-scaled random instance: PSD ``W``, positive ``R``, moderate dynamics."""
    grid = TimeGrid(0.0, tf, N)
    m = N + 1
    k = n if w_rank is None else w_rank
    F = rng.normal(size=(m, n, k))
    W = np.einsum("ijk,ilk->ijl", F, F) / k
    A = 0.5 * rng.normal(size=(m, n, n))
    B = rng.normal(size=(m, n))
    B[:, -1] += 2.0  # keep the last state directly actuated
    if bounded:
        alpha = -rng.uniform(0.2, 1.0, size=m)
        beta = rng.uniform(0.2, 1.0, size=m)
    else:
        alpha = np.full(m, -np.inf)
        beta = np.full(m, np.inf)
    E = np.eye(n)[:terminal]
    return LqProblem(
        grid=grid, W=W, omega=0.5 * rng.normal(size=(m, n)), R=rng.uniform(0.5, 2.0, size=m),
        r=0.3 * rng.normal(size=m), A=A, B=B, c=0.3 * rng.normal(size=(m, n)),
        alpha=alpha, beta=beta, x0=rng.normal(size=n), E=E,
        e_f=0.1 * rng.normal(size=terminal),
    )


def scalar_lq(N: int = 2, W=1.0, A=0.0, B=1.0, c=0.0, omega=0.0, R=1.0, r=0.0,
              alpha=-np.inf, beta=np.inf, x0=1.0, tf=None, E=None, e_f=None) -> LqProblem:
    """Scalar instance with constant coefficients; ``tf`` defaults to ``N`` (unit steps)."""
    grid = TimeGrid(0.0, float(N if tf is None else tf), N)
    m = N + 1
    full = lambda v: np.full(m, float(v))  # noqa: E731
    return LqProblem(
        grid=grid, W=full(W)[:, None, None], omega=full(omega)[:, None], R=full(R), r=full(r),
        A=full(A)[:, None, None], B=full(B)[:, None], c=full(c)[:, None],
        alpha=full(alpha), beta=full(beta), x0=np.array([x0]),
        E=np.zeros((0, 1)) if E is None else E, e_f=np.zeros(0) if e_f is None else e_f,
    )


def lq_as_nlp(Q, R, A, B, x0, tf=1.0, alpha=None, beta=None, E=None, e_f=None) -> NlpProblem:
    """Constant-coefficient LQ problem posed through the nonlinear interface."""
    Q, A, B = np.asarray(Q, float), np.asarray(A, float), np.asarray(B, float)
    n = Q.shape[0]
    return NlpProblem(
        state_dim=n, t0=0.0, tf=tf,
        f_eval=lambda X: 0.5 * np.einsum("ij,jk,ik->i", X, Q, X),
        f_grad=lambda X: X @ Q,
        f_hess=lambda X: np.broadcast_to(Q, (X.shape[0], n, n)).copy(),
        g_eval=lambda U: 0.5 * R * np.asarray(U) ** 2,
        g_d1=lambda U: R * np.asarray(U, float),
        g_d2=lambda U: np.full(np.shape(U), float(R)),
        g_d3=lambda U: np.zeros(np.shape(U)),
        h_eval=lambda X, U: X @ A.T + np.outer(U, B),
        h_jac_x=lambda X, U: np.broadcast_to(A, (X.shape[0], n, n)).copy(),
        h_jac_u=lambda X, U: np.broadcast_to(B, (X.shape[0], n)).copy(),
        x0=np.asarray(x0, float), alpha=alpha, beta=beta, E=E, e_f=e_f, name="lq",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

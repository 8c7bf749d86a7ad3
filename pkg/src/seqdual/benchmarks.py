"""The five benchmark problems with analytic, vectorized derivatives."""

from __future__ import annotations

import numpy as np

from .core import NlpProblem

EXAMPLE_IDS = (1, 2, 3, 4, 5)


def _zeros_like_u(u):
    return np.zeros_like(np.asarray(u, float))


def _half_sq_state():
    def f(x):
        return 0.5 * np.sum(x * x, axis=-1)

    def grad(x):
        return np.array(x, dtype=float)

    def hess(x):
        m, n = x.shape
        return np.broadcast_to(np.eye(n), (m, n, n)).copy()

    return f, grad, hess


def _quadratic_control(weight):
    """``g(u) = weight * u**2``."""
    return (
        lambda u: weight * np.asarray(u, float) ** 2,
        lambda u: 2.0 * weight * np.asarray(u, float),
        lambda u: np.full(np.shape(u), 2.0 * weight),
        _zeros_like_u,
    )


def _example1() -> NlpProblem:
    f, fg, fh = _half_sq_state()
    g, g1, g2, g3 = _quadratic_control(0.5)

    def h(x, u):
        x1, x2 = x[:, 0], x[:, 1]
        c = 2.0 + np.cos(2.0 * x1)
        return np.stack([-x1 + x2, -0.5 * x1 - 0.5 * x2 * (1.0 - c * c) + c * u], axis=-1)

    def hx(x, u):
        x1, x2 = x[:, 0], x[:, 1]
        c = 2.0 + np.cos(2.0 * x1)
        dc = -2.0 * np.sin(2.0 * x1)
        J = np.empty((x.shape[0], 2, 2))
        J[:, 0, 0] = -1.0
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = -0.5 + x2 * c * dc + dc * u
        J[:, 1, 1] = -0.5 * (1.0 - c * c)
        return J

    def hu(x, u):
        c = 2.0 + np.cos(2.0 * x[:, 0])
        return np.stack([np.zeros_like(c), c], axis=-1)

    return NlpProblem(
        state_dim=2, t0=0.0, tf=5.0,
        f_eval=f, f_grad=fg, f_hess=fh,
        g_eval=g, g_d1=g1, g_d2=g2, g_d3=g3,
        h_eval=h, h_jac_x=hx, h_jac_u=hu,
        x0=np.array([np.pi / 3.0, np.pi / 4.0]),
        name="example1",
    )


def _example2() -> NlpProblem:
    # continuous stirred tank reactor
    def f(x):
        return np.sum(x * x, axis=-1)

    def fg(x):
        return 2.0 * np.asarray(x, float)

    def fh(x):
        return np.broadcast_to(2.0 * np.eye(2), (x.shape[0], 2, 2)).copy()

    g, g1, g2, g3 = _quadratic_control(0.1)

    def _rate(x1):
        q = np.exp(25.0 * x1 / (x1 + 2.0))
        return q, 50.0 * q / (x1 + 2.0) ** 2

    def h(x, u):
        x1, x2 = x[:, 0], x[:, 1]
        q, _ = _rate(x1)
        a, b = x1 + 0.25, x2 + 0.5
        return np.stack([-2.0 * a + b * q - a * u, 0.5 - x2 - b * q], axis=-1)

    def hx(x, u):
        x1, x2 = x[:, 0], x[:, 1]
        q, dq = _rate(x1)
        b = x2 + 0.5
        J = np.empty((x.shape[0], 2, 2))
        J[:, 0, 0] = -2.0 + b * dq - u
        J[:, 0, 1] = q
        J[:, 1, 0] = -b * dq
        J[:, 1, 1] = -1.0 - q
        return J

    def hu(x, u):
        return np.stack([-(x[:, 0] + 0.25), np.zeros(x.shape[0])], axis=-1)

    return NlpProblem(
        state_dim=2, t0=0.0, tf=0.78,
        f_eval=f, f_grad=fg, f_hess=fh,
        g_eval=g, g_d1=g1, g_d2=g2, g_d3=g3,
        h_eval=h, h_jac_x=hx, h_jac_u=hu,
        x0=np.array([0.05, 0.0]), alpha=-1.0, beta=1.0,
        name="example2",
    )


def _example3() -> NlpProblem:
    # Rayleigh problem
    def f(x):
        return 0.5 * x[:, 0] ** 2

    def fg(x):
        out = np.zeros_like(x, dtype=float)
        out[:, 0] = x[:, 0]
        return out

    def fh(x):
        H = np.zeros((x.shape[0], 2, 2))
        H[:, 0, 0] = 1.0
        return H

    g, g1, g2, g3 = _quadratic_control(0.5)

    def h(x, u):
        x1, x2 = x[:, 0], x[:, 1]
        return np.stack([x2, (1.4 - 0.14 * x2 * x2) * x2 - x1 + 4.0 * u], axis=-1)

    def hx(x, u):
        x2 = x[:, 1]
        J = np.zeros((x.shape[0], 2, 2))
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = -1.0
        J[:, 1, 1] = 1.4 - 0.42 * x2 * x2
        return J

    def hu(x, u):
        out = np.zeros((x.shape[0], 2))
        out[:, 1] = 4.0
        return out

    return NlpProblem(
        state_dim=2, t0=0.0, tf=4.5,
        f_eval=f, f_grad=fg, f_hess=fh,
        g_eval=g, g_d1=g1, g_d2=g2, g_d3=g3,
        h_eval=h, h_jac_x=hx, h_jac_u=hu,
        x0=np.array([-5.0, -5.0]), alpha=-1.0, beta=1.0,
        name="example3",
    )


def _van_der_pol():
    def h(x, u):
        x1, x2 = x[:, 0], x[:, 1]
        return np.stack([x2, (1.0 - x1 * x1) * x2 - x1 + u], axis=-1)

    def hx(x, u):
        x1, x2 = x[:, 0], x[:, 1]
        J = np.zeros((x.shape[0], 2, 2))
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = -2.0 * x1 * x2 - 1.0
        J[:, 1, 1] = 1.0 - x1 * x1
        return J

    def hu(x, u):
        out = np.zeros((x.shape[0], 2))
        out[:, 1] = 1.0
        return out

    return h, hx, hu


def _example4() -> NlpProblem:
    f, fg, fh = _half_sq_state()
    g, g1, g2, g3 = _quadratic_control(0.5)
    h, hx, hu = _van_der_pol()
    return NlpProblem(
        state_dim=2, t0=0.0, tf=5.0,
        f_eval=f, f_grad=fg, f_hess=fh,
        g_eval=g, g_d1=g1, g_d2=g2, g_d3=g3,
        h_eval=h, h_jac_x=hx, h_jac_u=hu,
        x0=np.array([1.0, 0.0]), E=np.eye(2), e_f=np.array([-1.0, 0.0]),
        alpha=-0.75, beta=0.75,
        name="example4",
    )


def _example5() -> NlpProblem:
    f, fg, fh = _half_sq_state()
    h, hx, hu = _van_der_pol()

    def g(u):
        u = np.asarray(u, float)
        return 0.5 * (u**4 + u**2)

    def g1(u):
        u = np.asarray(u, float)
        return 2.0 * u**3 + u

    def g2(u):
        u = np.asarray(u, float)
        return 6.0 * u**2 + 1.0

    def g3(u):
        return 12.0 * np.asarray(u, float)

    # terminal target as displayed with the problem: x(2.4) = (0, 0)
    return NlpProblem(
        state_dim=2, t0=0.0, tf=2.4,
        f_eval=f, f_grad=fg, f_hess=fh,
        g_eval=g, g_d1=g1, g_d2=g2, g_d3=g3,
        h_eval=h, h_jac_x=hx, h_jac_u=hu,
        x0=np.array([1.0, 0.0]), E=np.eye(2), e_f=np.zeros(2),
        alpha=-0.25, beta=1.0,
        name="example5",
    )


_BUILDERS = {1: _example1, 2: _example2, 3: _example3, 4: _example4, 5: _example5}


def make_example(example_id: int) -> NlpProblem:
    """Return benchmark problem ``example_id`` (1..5)."""
    try:
        builder = _BUILDERS[int(example_id)]
    except (KeyError, ValueError, TypeError):
        raise ValueError(f"unknown example id {example_id!r}; expected one of {EXAMPLE_IDS}") from None
    return builder()

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqdual.benchmarks import make_example
from seqdual.lq_dual import (DualSolverConfig, DualVariables, PsiParams, UnboundedDualError,
                             dual_gradient, dual_objective, propagate_dual_state, psi_deriv,
                             psi_eval, psi_second, recover_primal, solve_dual)
from seqdual.lq_primal import project_control, transcribe
from seqdual.qp_engine import dense_kkt_oracle, solve_box_qp
from seqdual.quasilin import build_subproblem
from seqdual.seqopt import OuterConfig, default_initial_guess, solve

from conftest import random_lq, scalar_lq

UNIT = PsiParams(1.0, 0.0, -1.0, 1.0)


def first_subproblem(eid, N):
    p = make_example(eid)
    return build_subproblem(p, default_initial_guess(p, p.grid(N)))


class TestPsi:
    def test_values(self):
        assert psi_eval(0.5, UNIT) == pytest.approx(0.125)
        assert psi_eval(2.0, UNIT) == pytest.approx(1.5)
        assert psi_eval(-2.0, UNIT) == pytest.approx(1.5)

    def test_breakpoint(self):
        assert psi_eval(1.0, UNIT) == pytest.approx(0.5)
        assert psi_eval(1.0 + 1e-12, UNIT) == pytest.approx(0.5, abs=1e-11)

    def test_derivative(self):
        prm = PsiParams(2.0, 1.0, -1.0, 1.0)
        assert psi_deriv(2.0, prm) == pytest.approx(0.5)
        assert psi_deriv(10.0, prm) == 1.0

    def test_second(self):
        assert psi_second(0.5, UNIT) == 1.0
        assert psi_second(3.0, UNIT) == 0.0

    def test_unbounded_is_quadratic(self):
        prm = PsiParams(2.0, 1.0, -np.inf, np.inf)
        assert psi_eval(5.0, prm) == pytest.approx(16.0 / 4.0)

    def test_conjugate_by_brute_force(self):
        # psi(v) = max over [alpha, beta] of v u - R/2 u^2 - r u
        prm = PsiParams(1.5, -0.3, -0.4, 0.8)
        u = np.linspace(-0.4, 0.8, 200001)
        for v in (-3.0, -0.5, 0.0, 0.4, 2.5):
            brute = np.max(v * u - 0.75 * u * u + 0.3 * u)
            assert psi_eval(v, prm) == pytest.approx(brute, abs=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 5),
           st.floats(-50, 50))
    def test_derivative_matches_fd(self, R, r, lo, width, v):
        prm = PsiParams(R, r, lo, lo + width)
        w = (v - r) / R
        eps = 1e-6
        if min(abs(w - lo), abs(w - lo - width)) * R < 10 * eps:
            return
        fd = (psi_eval(v + eps, prm) - psi_eval(v - eps, prm)) / (2 * eps)
        assert fd == pytest.approx(psi_deriv(v, prm), abs=1e-6 * (1 + abs(v)))


class TestPropagation:
    def test_zero(self):
        lq = scalar_lq(N=4, W=0.0, A=0.0)
        p = propagate_dual_state(lq, np.ones((5, 1)), np.zeros(0))
        np.testing.assert_array_equal(p.values, 0.0)

    def test_backward_sums(self):
        lq = scalar_lq(N=2, tf=1.0, W=1.0, A=0.0)
        p = propagate_dual_state(lq, np.ones((3, 1)), np.zeros(0))
        np.testing.assert_allclose(p.values[:, 0], [-1.0, -0.5, 0.0])

    def test_ex4_against_loop(self, rng):
        lq = first_subproblem(4, 50)
        y, eta = rng.normal(size=(51, 2)), rng.normal(size=2)
        h = lq.grid.h_step
        p = -lq.E.T @ eta
        ref = [p]
        for i in range(49, -1, -1):
            p = (np.eye(2) + h * lq.A[i].T) @ p - h * (lq.W[i] @ y[i] + lq.omega[i])
            ref.append(p)
        np.testing.assert_allclose(propagate_dual_state(lq, y, eta).values, ref[::-1],
                                   rtol=1e-14, atol=1e-14)


class TestDualObjective:
    def test_zero(self):
        lq = scalar_lq(N=2, W=0.0, x0=0.0)
        vars = DualVariables.from_free(lq, np.zeros((3, 1)), np.zeros(0))
        assert dual_objective(lq, vars) == 0.0

    @pytest.mark.parametrize("pairing", ["adjoint", "collocated"])
    def test_gradient_fd(self, pairing, rng):
        lq = random_lq(rng, n=2, N=5, terminal=1)
        y, eta = rng.normal(size=(6, 2)), rng.normal(size=1)
        gy, geta = dual_gradient(lq, y, eta, pairing)

        def D(yy, ee):
            return dual_objective(lq, DualVariables.from_free(lq, yy, ee), pairing)

        eps = 1e-6
        for idx in np.ndindex(5, 2):
            e = np.zeros_like(y)
            e[idx] = eps
            fd = (D(y + e, eta) - D(y - e, eta)) / (2 * eps)
            assert fd == pytest.approx(gy[idx], abs=1e-6 * (1 + abs(fd)))
        fd_eta = (D(y, eta + eps) - D(y, eta - eps)) / (2 * eps)
        assert fd_eta == pytest.approx(geta[0], abs=1e-6 * (1 + abs(fd_eta)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_weak_duality(self, seed):
        rng = np.random.default_rng(seed)
        # a terminal row with tight boxes can be infeasible, so it comes without boxes
        k = int(seed % 2)
        lq = random_lq(rng, n=2, N=4, terminal=k, bounded=not k)
        primal = dense_kkt_oracle(transcribe(lq)).objective - lq.objective_offset
        y, eta = 3 * rng.normal(size=(5, 2)), 3 * rng.normal(size=lq.n_terminal)
        D = dual_objective(lq, DualVariables.from_free(lq, y, eta))
        assert primal + D >= -1e-10 * (1 + abs(primal))


class TestSolveDual:
    def test_scalar_instance_against_grid_search(self):
        lq = scalar_lq(N=2, tf=1.0)

        def D(y0, y1):
            return dual_objective(lq, DualVariables.from_free(lq, [[y0], [y1], [0.0]], []))

        c, width = np.zeros(2), 4.0
        best = None
        for _ in range(12):
            g = np.linspace(-width, width, 41)
            vals = np.array([[D(c[0] + a, c[1] + b) for b in g] for a in g])
            i, j = np.unravel_index(np.argmin(vals), vals.shape)
            c, best, width = c + [g[i], g[j]], vals[i, j], width / 8
        _, _, rep = solve_dual(lq)
        assert rep.dual_value == pytest.approx(best, abs=1e-6)

    def test_recovery_matches_oracle(self):
        lq = scalar_lq(N=2, tf=1.0, r=0.4, alpha=-0.5, beta=0.5)
        ref = dense_kkt_oracle(transcribe(lq))
        _, rec, rep = solve_dual(lq)
        np.testing.assert_allclose(rec.traj.states, ref.traj.states, atol=1e-8)
        np.testing.assert_allclose(rec.traj.controls, ref.traj.controls, atol=1e-8)
        assert ref.objective + rep.dual_value == pytest.approx(0.0, abs=1e-10)

    def test_zero_costate_gives_projected_zero(self):
        lq = scalar_lq(N=3, W=0.0, alpha=0.2, beta=1.0)
        vars = DualVariables.from_free(lq, np.zeros((4, 1)), [])
        rec = recover_primal(lq, vars)
        np.testing.assert_allclose(rec.traj.controls, project_control(0.0, 0.2, 1.0))

    def test_strong_duality_ex1(self):
        lq = first_subproblem(1, 200)
        primal = solve_box_qp(transcribe(lq)).objective - lq.objective_offset
        _, _, rep = solve_dual(lq)
        assert rep.dp_value == pytest.approx(primal, abs=1e-4 * (1 + abs(primal)))

    def test_gap_at_fine_grid(self):
        lq = first_subproblem(1, 1000)
        _, rec, rep = solve_dual(lq)
        assert rep.duality_gap <= 1e-5 * (1 + abs(rec.objective))

    def test_singular_state_weight(self):
        lq = first_subproblem(3, 100)
        assert np.linalg.matrix_rank(lq.W[0]) < 2
        _, rec, rep = solve_dual(lq)
        primal = solve_box_qp(transcribe(lq)).objective
        assert rec.objective == pytest.approx(primal, rel=1e-7)

    def test_terminal_constraint_met(self):
        lq = first_subproblem(5, 100)
        _, rec, _ = solve_dual(lq)
        np.testing.assert_allclose(lq.E @ rec.traj.states[-1], lq.e_f, atol=1e-8)

    def test_infeasible_data_reported_unbounded(self):
        lq = scalar_lq(N=2, tf=1.0, W=0.0, alpha=-1.0, beta=1.0, x0=0.0,
                       E=np.array([[1.0]]), e_f=np.array([5.0]))
        with pytest.raises(UnboundedDualError):
            solve_dual(lq)

    def test_history_dump(self, tmp_path):
        lq = first_subproblem(2, 50)
        solve_dual(lq, DualSolverConfig(dump_path=str(tmp_path / "h.csv")))
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "iter,dual_value,grad_norm,step" and len(lines) > 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DualSolverConfig(pairing="other")


@pytest.mark.xfail(strict=True, reason="coarse-grid outer counts come from an O(h)-inconsistent "
                   "dual discretization; this transcription needs 6 iterations at N=50")
def test_ex1_outer_count_at_coarse_grid():
    _, rep = solve(make_example(1), OuterConfig(n_intervals=50, method="seq_dual"))
    assert 3 <= rep.outer_iterations <= 4

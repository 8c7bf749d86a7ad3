import numpy as np
import pytest

from seqdual.benchmarks import make_example
from seqdual.core import CostateTrajectory, NlpProblem, Trajectory, rollout
from seqdual.diagnostics import check_h1, duality_gap_audit, np_kkt_residual, write_audit_csv
from seqdual.quasilin import build_subproblem
from seqdual.seqopt import OuterConfig, default_initial_guess, solve

from conftest import lq_as_nlp, random_lq


@pytest.fixture(scope="module")
def ex1():
    return solve(make_example(1), OuterConfig(n_intervals=1000))


class TestKktResidual:
    def test_converged_ex1(self, ex1):
        traj, rep = ex1
        assert np_kkt_residual(make_example(1), traj, rep.costate, rep.eta) <= 1e-4

    def test_vacuous_problem(self):
        p = NlpProblem(
            state_dim=1, t0=0, tf=1, f_eval=lambda X: np.zeros(len(X)),
            f_grad=lambda X: np.zeros_like(X), f_hess=lambda X: np.zeros((len(X), 1, 1)),
            g_eval=lambda U: np.zeros(np.shape(U)), g_d1=lambda U: np.zeros(np.shape(U)),
            g_d2=lambda U: np.ones(np.shape(U)), h_eval=lambda X, U: np.zeros_like(X),
            h_jac_x=lambda X, U: np.zeros((len(X), 1, 1)),
            h_jac_u=lambda X, U: np.zeros((len(X), 1)), x0=[0.5], check=False)
        grid = p.grid(10)
        traj = rollout(p, np.zeros(11), grid)
        assert np_kkt_residual(p, traj, CostateTrajectory(grid, np.zeros(11))) == 0.0

    def test_perturbed_control(self, ex1):
        traj, rep = ex1
        u = np.array(traj.controls)
        u[500] += 0.1
        bad = Trajectory(traj.grid, traj.states, u)
        assert np_kkt_residual(make_example(1), bad, rep.costate, rep.eta) >= 1e-3

    def test_shape_mismatch(self, ex1):
        traj, _ = ex1
        with pytest.raises(ValueError):
            np_kkt_residual(make_example(1), traj, CostateTrajectory(traj.grid, np.zeros(1001)))


class TestGapAudit:
    def test_oracle_regime(self, tmp_path):
        p = make_example(1)
        lq = build_subproblem(p, default_initial_guess(p, p.grid(4)))
        rows = duality_gap_audit(lq, [4], csv_path=tmp_path / "gap.csv")
        assert abs(rows[0].gap) <= 1e-6 * (1 + abs(rows[0].primal_objective))
        assert (tmp_path / "gap.csv").read_text().startswith("n_intervals,primal_objective")

    def test_collocated_gap_shrinks(self):
        p = make_example(3)
        lq = build_subproblem(p, default_initial_guess(p, p.grid(200)))
        a, b = duality_gap_audit(lq, [200, 400], pairing="collocated")
        assert abs(b.gap) / abs(a.gap) <= 0.75

    def test_smooth_case(self, rng):
        lq = random_lq(rng, n=2, N=50, bounded=False)
        lq = type(lq)(lq.grid, lq.W + 0.5 * np.eye(2), lq.omega, lq.R, lq.r, lq.A, lq.B, lq.c,
                      lq.alpha, lq.beta, lq.x0, lq.E, lq.e_f)
        (row,) = duality_gap_audit(lq, [50])
        assert abs(row.gap) <= 1e-7 * (1 + abs(row.primal_objective))

    def test_csv_writer(self, tmp_path):
        write_audit_csv([], tmp_path / "empty.csv")
        assert (tmp_path / "empty.csv").read_text().count("\n") == 1


class TestH1:
    def test_quadratic(self):
        p = lq_as_nlp(np.eye(1), 2.0, [[0.0]], [1.0], x0=[0.0])
        assert check_h1(p, (-3, 3)) == 0.0

    def test_ex5(self):
        assert check_h1(make_example(5), (-1, 1), samples=2001) >= 36 / 49 - 1e-12

    def test_single_point(self):
        assert check_h1(make_example(5), (1, 1)) == pytest.approx(36 / 49)

    def test_missing_third_derivative(self):
        p = make_example(5)
        q = NlpProblem(**{**{f: getattr(p, f) for f in (
            "state_dim", "t0", "tf", "f_eval", "f_grad", "f_hess", "g_eval", "g_d1", "g_d2",
            "h_eval", "h_jac_x", "h_jac_u", "x0")}, "check": False})
        with pytest.raises(ValueError, match="third derivative unavailable"):
            check_h1(q, (-1, 1))

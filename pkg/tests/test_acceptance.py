"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line; pytest prints them in an
"acceptance criteria" section at the end of the run.  Running this file as
a script prints the same lines without pytest.
"""

from __future__ import annotations

import sys
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from seqdual.benchmarks import EXAMPLE_IDS, make_example  # noqa: E402
from seqdual.diagnostics import duality_gap_audit, np_kkt_residual  # noqa: E402
from seqdual.lq_dual import DualVariables, PsiParams, dual_gradient, dual_objective  # noqa: E402
from seqdual.lq_dual import psi_deriv, psi_eval  # noqa: E402
from seqdual.lq_primal import transcribe  # noqa: E402
from seqdual.qp_engine import dense_kkt_oracle, solve_box_qp  # noqa: E402
from seqdual.quasilin import build_subproblem  # noqa: E402
from seqdual.seqopt import OuterConfig, default_initial_guess, solve  # noqa: E402

from conftest import random_lq  # noqa: E402

RESULT_LINES: list[str] = []
METHODS = {"primal": "seq_primal", "dual": "seq_dual"}

# published outer-iteration counts at N=1000 as (primal, dual)
PUBLISHED_OUTER = {1: (6, 4), 2: (11, 11), 3: (12, 11), 4: (5, 4), 5: (5, 5)}


@lru_cache(maxsize=None)
def run(eid: int, n: int, method: str):
    t0 = time.perf_counter()
    traj, rep = solve(make_example(eid), OuterConfig(n_intervals=n, method=METHODS[method]))
    return traj, rep, time.perf_counter() - t0


def record(label, title: str, ok: bool, detail: str) -> None:
    tag = f"criterion {label:>2}" if isinstance(label, int) else label
    RESULT_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {tag}: {title}: {detail}")
    assert ok, detail


def first_subproblem(eid: int, n: int):
    p = make_example(eid)
    return build_subproblem(p, default_initial_guess(p, p.grid(n)))


def test_criterion_01_table_values():
    cases = [(1, 1000, "primal", 0.5855, 2e-3), (2, 1000, "primal", 0.0290, 5e-4),
             (3, 500, "primal", 22.4413, 5e-2), (4, 1000, "primal", 2.1391, 1e-2),
             (4, 1000, "dual", 2.1341, 1e-2), (5, 1000, "primal", 2.4167, 1e-2)]
    parts, ok = [], True
    for eid, n, method, ref, tol in cases:
        _, rep, secs = run(eid, n, method)
        good = abs(rep.objective - ref) <= tol and secs <= 30.0
        ok &= good
        parts.append(f"ex{eid}/{method}/n={n} {rep.objective:.4f} vs {ref} ({secs:.1f}s)"
                     + ("" if good else " <-"))
    record(1, "published objectives", ok, "; ".join(parts))


def test_criterion_02_method_agreement():
    parts, ok = [], True
    for eid in EXAMPLE_IDS:
        a = run(eid, 10000, "primal")[1].objective
        b = run(eid, 10000, "dual")[1].objective
        good = abs(a - b) <= 5e-3 * (1 + abs(a))
        ok &= good
        parts.append(f"ex{eid} |{a:.5f}-{b:.5f}|={abs(a - b):.1e}" + ("" if good else " <-"))
    record(2, "primal/dual agreement at n=10000", ok, "; ".join(parts))


def test_criterion_03_outer_iterations():
    parts, ok = [], True
    for eid in EXAMPLE_IDS:
        for k, method in enumerate(("primal", "dual")):
            bound = PUBLISHED_OUTER[eid][k] + 2
            got = run(eid, 1000, method)[1].outer_iterations
            good = got <= bound
            ok &= good
            parts.append(f"ex{eid}/{method} {got}<={bound}" + ("" if good else " <-"))
    record(3, "outer iterations within published+2", ok, "; ".join(parts))


def test_criterion_04_strong_duality():
    (row,) = duality_gap_audit(first_subproblem(1, 4), [4], primal="oracle")
    small = abs(row.gap) <= 1e-6 * (1 + abs(row.primal_objective))
    rows = duality_gap_audit(first_subproblem(3, 200), [200, 400, 800, 1600], pairing="collocated")
    gaps = [abs(r.gap) for r in rows]
    ratios = [b / a for a, b in zip(gaps, gaps[1:])]
    shrink = all(r <= 0.75 for r in ratios)
    record(4, "duality gap", small and shrink,
           f"ex1 Nn=4 gap {row.gap:.1e}; ex3 gaps {', '.join(f'{g:.3g}' for g in gaps)} "
           f"ratios {', '.join(f'{r:.2f}' for r in ratios)}")


def test_criterion_05_oracle_equivalence():
    worst_obj = worst_var = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        # every fifth instance adds a terminal row; its boxes are dropped to stay feasible
        terminal = int(seed % 5 == 0)
        qp = transcribe(random_lq(rng, n=2, N=4, terminal=terminal, bounded=not terminal))
        a, b = solve_box_qp(qp), dense_kkt_oracle(qp)
        worst_obj = max(worst_obj, abs(a.objective - b.objective))
        worst_var = max(worst_var, np.max(np.abs(a.traj.states - b.traj.states)),
                        np.max(np.abs(a.traj.controls - b.traj.controls)))
    record(5, "interior point vs dense KKT oracle", worst_obj <= 1e-8 and worst_var <= 1e-6,
           f"50 instances, max objective diff {worst_obj:.1e}, max variable diff {worst_var:.1e}")


def test_criterion_06_psi():
    rng = np.random.default_rng(6)
    cont = dcont = fd_err = 0.0
    for _ in range(1000):
        R, r = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        lo = rng.uniform(-5, 5)
        hi = lo + rng.uniform(0.01, 5)
        prm = PsiParams(R, r, lo, hi)
        for b in (lo, hi):
            v = r + R * b
            d = 1e-13 * (1 + abs(v))
            cont = max(cont, abs(psi_eval(v + d, prm) - psi_eval(v - d, prm)))
            dcont = max(dcont, abs(psi_deriv(v + d, prm) - psi_deriv(v - d, prm)))
        v = rng.uniform(-60, 60)
        if min(abs(v - r - R * lo), abs(v - r - R * hi)) > 1e-4:
            eps = 1e-6
            fd = (psi_eval(v + eps, prm) - psi_eval(v - eps, prm)) / (2 * eps)
            fd_err = max(fd_err, abs(fd - psi_deriv(v, prm)))
    record(6, "psi continuity and derivative", cont <= 1e-9 and dcont <= 1e-9 and fd_err <= 1e-6,
           f"value jump {cont:.1e}, derivative jump {dcont:.1e}, FD error {fd_err:.1e}")


def test_criterion_07_dual_gradient():
    worst = 0.0
    eps = 1e-6
    for seed in range(20):
        rng = np.random.default_rng(700 + seed)
        lq = random_lq(rng, n=2, N=6, terminal=int(seed % 2))
        y, eta = rng.normal(size=(7, 2)), rng.normal(size=lq.n_terminal)
        gy, geta = dual_gradient(lq, y, eta)

        def D(yy, ee):
            return dual_objective(lq, DualVariables.from_free(lq, yy, ee))

        fd_y = np.zeros_like(y)
        for idx in np.ndindex(6, 2):
            e = np.zeros_like(y)
            e[idx] = eps
            fd_y[idx] = (D(y + e, eta) - D(y - e, eta)) / (2 * eps)
        fd_eta = np.array([(D(y, eta + eps * e) - D(y, eta - eps * e)) / (2 * eps)
                           for e in np.eye(lq.n_terminal)])
        fd = np.concatenate([fd_y.ravel(), fd_eta])
        g = np.concatenate([gy.ravel(), geta])
        worst = max(worst, np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd))))
    record(7, "dual gradient vs finite differences", worst <= 1e-6,
           f"20 instances, max relative error {worst:.1e}")


def test_criterion_08_np_optimality():
    parts, ok = [], True
    for eid in EXAMPLE_IDS:
        for method in ("primal", "dual"):
            traj, rep, _ = run(eid, 1000, method)
            res = np_kkt_residual(make_example(eid), traj, rep.costate, rep.eta)
            good = rep.status == "converged" and res <= 1e-3
            ok &= good
            parts.append(f"ex{eid}/{method} {res:.1e}" + ("" if good else " <-"))
    record(8, "NP residual at n=1000", ok, "; ".join(parts))


def test_criterion_09_merit_monotone():
    parts, ok = [], True
    for eid in (4, 5):
        for method in ("primal", "dual"):
            rep = run(eid, 1000, method)[1]
            m = [r.merit for r in rep.records]
            good = rep.algorithm == 2 and all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(m, m[1:]))
            ok &= good
            parts.append(f"ex{eid}/{method} {m[0]:.4g}->{m[-1]:.4g}" + ("" if good else " <-"))
    record(9, "merit non-increasing", ok, "; ".join(parts))


def test_criterion_10_euler_order():
    n_ref = 10000
    ref = run(1, n_ref, "primal")[1].objective
    ns = (500, 1000, 2000, 5000)
    err = {n: run(1, n, "primal")[1].objective - ref for n in ns}
    ratios = {(a, b): err[a] / err[b] for a, b in zip(ns, ns[1:])}
    # exact first order with a finite reference: err(n) ~ C (1/n - 1/n_ref)
    predicted = {(a, b): (1 / a - 1 / n_ref) / (1 / b - 1 / n_ref) for a, b in ratios}
    doubling = [(500, 1000), (1000, 2000)]
    ok = all(abs(ratios[k] - 2.0) <= 0.4 for k in doubling)
    # 2000 -> 5000 is a 2.5x refinement, so it is held to the first-order prediction instead
    ok &= abs(ratios[2000, 5000] / predicted[2000, 5000] - 1.0) <= 0.2
    record(10, "first-order Euler convergence on ex1", ok,
           "; ".join(f"{a}->{b} ratio {ratios[a, b]:.2f} (first-order prediction "
                     f"{predicted[a, b]:.2f})" for a, b in ratios))


def test_timing_dual_vs_primal():
    p = make_example(1)

    def best(method):
        times = []
        for _ in range(3):
            t0 = time.perf_counter()
            solve(p, OuterConfig(n_intervals=5000, method=method))
            times.append(time.perf_counter() - t0)
        return min(times)

    tp, td = best("seq_primal"), best("seq_dual")
    record("timing check", "dual at most 2x slower than primal (ex1, n=5000)", td <= 2 * tp,
           f"primal {tp:.2f}s, dual {td:.2f}s")


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_") and callable(v)]
    failed = 0
    for t in tests:
        try:
            t()
        except AssertionError:
            failed += 1
    print("\n".join(RESULT_LINES))
    sys.exit(1 if failed else 0)

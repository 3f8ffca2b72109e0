"""Dense QP solver tests: reduction algebra, projected iteration, oracle."""

import numpy as np
import pytest

from gapracer.bench import adversarial_qp, random_feasible_qp
from gapracer.qp import (
    CONVERGED,
    FALLBACK,
    HAVE_KERNEL,
    INFEASIBLE,
    ITERATION_CAP,
    OPTIMAL,
    DenseQp,
    PtcConfig,
    PtcSolver,
    QpSolution,
    _iterate_python,
    dump_problem,
    kkt_residual,
    load_problem,
    oracle_solve,
    ptc_solve,
    reduce_qp,
    split_rows,
)

TERMINAL = {CONVERGED, ITERATION_CAP, FALLBACK}


def solve_ptc(qp, **kw):
    cfg = PtcConfig(**kw)
    return ptc_solve(reduce_qp(qp, cfg), cfg)


class TestReduce:
    def test_identity_algebra(self):
        # P = I, q = 0, no equalities, D = I: G' = I/(1+eps1), h' = 0.
        n = 4
        qp = DenseQp(P=np.eye(n), q=np.zeros(n), A=np.eye(n),
                     l=np.full(n, -np.inf), u=np.ones(n))
        cfg = PtcConfig(eps1=1e-8)
        sys_ = reduce_qp(qp, cfg)
        assert np.allclose(sys_.G, np.eye(n) / (1 + 1e-8), atol=1e-12)
        assert np.allclose(sys_.h_free, 0.0)

    def test_equalities_satisfied(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            qp = random_feasible_qp(rng, n_max=20, m_max=40)
            C, p, *_ = split_rows(qp)
            if not len(p):
                continue
            sol = solve_ptc(qp)
            assert np.max(np.abs(C @ sol.z - p)) < 1e-6

    def test_eps1_insensitivity_on_wellconditioned(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            qp = random_feasible_qp(rng, n_max=15, m_max=20)
            za = solve_ptc(qp, eps1=1e-8).z
            zb = solve_ptc(qp, eps1=1e-6).z
            assert np.max(np.abs(za - zb)) < 1e-4

    def test_two_sided_rows_split(self):
        qp = DenseQp(P=np.eye(2), q=np.zeros(2),
                     A=np.array([[1.0, 0.0], [0.0, 1.0]]),
                     l=np.array([-1.0, 2.0]), u=np.array([1.0, 2.0]))
        C, p, D, q_ineq, row_map = split_rows(qp)
        assert C.shape == (1, 2) and p[0] == 2.0       # l == u row
        assert D.shape == (2, 2)                        # split pair
        assert list(q_ineq) == [1.0, 1.0]
        assert row_map == [(0, 1), (0, -1)]


class TestPtcSolve:
    def test_hand_kkt_lower_bound(self):
        # min 1/2 z^2 subject to z >= 1.
        qp = DenseQp(P=[[1.0]], q=[0.0], A=[[1.0]], l=[1.0], u=[np.inf])
        sol = solve_ptc(qp, polish=False)
        assert sol.status == CONVERGED
        assert sol.z[0] == pytest.approx(1.0, abs=1e-6)
        assert sol.lam[0] == pytest.approx(1.0, abs=1e-6)
        sys_ = reduce_qp(qp, PtcConfig())
        assert np.max(np.abs(sys_.residual(sol.lam))) <= 1e-6

    def test_inactive_constraint(self):
        qp = DenseQp(P=[[1.0]], q=[0.0], A=[[1.0]], l=[-np.inf], u=[5.0])
        sol = solve_ptc(qp, polish=False)
        assert sol.status == CONVERGED
        assert sol.iterations == 0
        assert sol.z[0] == pytest.approx(0.0, abs=1e-9)
        assert sol.lam[0] == 0.0

    def test_random_suite_matches_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            qp = random_feasible_qp(rng)
            sol = solve_ptc(qp)
            ref = oracle_solve(qp)
            assert ref.status == OPTIMAL
            assert sol.status in TERMINAL
            rel = abs(sol.objective - ref.objective) / (1 + abs(ref.objective))
            assert rel <= 1e-4
            assert qp.violation(sol.z) <= 1e-5

    def test_lambda_nonnegative_and_budget(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            qp = random_feasible_qp(rng, n_max=15, m_max=30)
            sol = solve_ptc(qp)
            assert np.all(sol.lam >= 0.0)
            assert sol.iterations <= 200

    def test_nan_triggers_fallback(self):
        qp = DenseQp(P=[[1.0]], q=[0.0], A=[[1.0]], l=[-np.inf], u=[5.0])
        cfg = PtcConfig(polish=False)
        sys_ = reduce_qp(qp, cfg)
        sys_.b[:] = np.nan
        sol = ptc_solve(sys_, cfg)
        assert sol.status == FALLBACK
        assert np.array_equal(sol.lam, np.zeros(1))
        assert np.allclose(sol.z, sys_.h_free)

    def test_adversarial_suite_always_returns_finite(self):
        rng = np.random.default_rng(4)
        solver = PtcSolver(PtcConfig())
        for _ in range(100):
            qp = adversarial_qp(rng)
            sol = solver.solve(qp)
            assert sol.status in TERMINAL
            assert np.isfinite(sol.z).all()
            assert sol.iterations <= 200

    def test_warm_start_never_worse(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            qp = random_feasible_qp(rng, n_max=12, m_max=25)
            solver = PtcSolver(PtcConfig(polish=False))
            first = solver.solve(qp)
            second = solver.solve(qp)
            assert second.residual <= first.residual + 1e-12
            assert second.iterations <= first.iterations

    def test_residual_trend_decreases(self):
        # Median residual across a fixed suite decreases along iterations.
        rng = np.random.default_rng(6)
        curves = []
        for _ in range(40):
            qp = random_feasible_qp(rng, n_max=15, m_max=30)
            cfg = PtcConfig(polish=False)
            sys_ = reduce_qp(qp, cfg)
            lam = np.zeros(sys_.m)
            curve = []
            for _ in range(60):
                f = sys_.residual(lam)
                curve.append(np.max(np.abs(f)) if len(f) else 0.0)
                lam = np.maximum(lam - sys_.gamma * f, 0.0)
            curves.append(curve)
        med = np.median(np.array(curves), axis=0)
        assert med[-1] < med[0]
        # Trend check: late-phase median below early-phase median.
        assert np.median(med[40:]) <= np.median(med[:10])

    def test_python_and_kernel_agree(self):
        if not HAVE_KERNEL:
            pytest.skip("compiled kernel not built")
        rng = np.random.default_rng(7)
        for _ in range(30):
            qp = random_feasible_qp(rng, n_max=15, m_max=30)
            sol_c = solve_ptc(qp, kernel="compiled", polish=False)
            sol_p = solve_ptc(qp, kernel="python", polish=False)
            assert sol_c.iterations == sol_p.iterations
            assert np.allclose(sol_c.lam, sol_p.lam, atol=1e-10)
            assert np.allclose(sol_c.z, sol_p.z, atol=1e-10)

    def test_polish_tightens_agreement(self):
        # Budget-limited solves get refined to (near) machine accuracy.
        rng = np.random.default_rng(8)
        diffs = []
        for _ in range(40):
            qp = random_feasible_qp(rng, n_max=15, m_max=30)
            sol = solve_ptc(qp, polish=True)
            if not sol.polished:
                continue
            ref = oracle_solve(qp)
            diffs.append(abs(sol.objective - ref.objective)
                         / (1 + abs(ref.objective)))
        # The floor is set by the eps1 Tikhonov shift (~1e-8 relative) and
        # the oracle's own tolerance, not by the refinement itself.
        assert len(diffs) >= 5
        assert np.median(diffs) < 1e-7

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PtcConfig(h=0.0)
        with pytest.raises(ValueError):
            PtcConfig(k_max=0)
        with pytest.raises(ValueError):
            PtcConfig(kernel="weird")


class TestOracle:
    def test_equality_only_matches_kkt_solve(self):
        rng = np.random.default_rng(9)
        n, me = 6, 3
        a_fac = rng.normal(size=(n, n))
        P = a_fac @ a_fac.T + np.eye(n)
        q = rng.normal(size=n)
        C = rng.normal(size=(me, n))
        p = rng.normal(size=me)
        qp = DenseQp(P=P, q=q, A=C, l=p, u=p)
        sol = oracle_solve(qp)
        assert sol.status == OPTIMAL
        kkt = np.block([[P, C.T], [C, np.zeros((me, me))]])
        ref = np.linalg.solve(kkt, np.concatenate([-q, p]))[:n]
        assert np.max(np.abs(sol.z - ref)) < 1e-6

    def test_box_only_diagonal_is_clamp(self):
        rng = np.random.default_rng(10)
        n = 5
        dvals = rng.uniform(0.5, 3.0, n)
        q = rng.normal(size=n)
        lo = np.full(n, -0.4)
        hi = np.full(n, 0.4)
        qp = DenseQp(P=np.diag(dvals), q=q, A=np.eye(n), l=lo, u=hi)
        sol = oracle_solve(qp)
        ref = np.clip(-q / dvals, lo, hi)
        assert np.max(np.abs(sol.z - ref)) < 1e-7

    def test_kkt_residuals_on_suite(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            qp = random_feasible_qp(rng, n_max=20, m_max=40)
            sol = oracle_solve(qp)
            assert sol.status == OPTIMAL
            res = kkt_residual(qp, sol.z, sol.lam,
                               sol.diagnostics.get("nu"))
            assert res["stationarity"] < 1e-7
            assert res["primal"] < 1e-7
            assert abs(res["complementarity"]) < 1e-7
            assert res["dual"] >= -1e-9

    def test_infeasible_reported(self):
        qp = DenseQp(P=np.eye(1), q=np.zeros(1),
                     A=np.array([[1.0], [-1.0]]),
                     l=np.array([-np.inf, -np.inf]),
                     u=np.array([-1.0, -1.0]))  # z <= -1 and z >= 1
        sol = oracle_solve(qp)
        assert sol.status == INFEASIBLE


class TestDump:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        qp = random_feasible_qp(rng, n_max=8, m_max=10)
        cfg = PtcConfig(tol=1e-7)
        path = tmp_path / "dump.json"
        dump_problem(qp, cfg, path)
        qp2, cfg2 = load_problem(path)
        assert np.allclose(qp.P, qp2.P)
        assert np.allclose(qp.q, qp2.q)
        assert np.allclose(qp.A, qp2.A)
        assert np.array_equal(np.isfinite(qp.l), np.isfinite(qp2.l))
        assert np.allclose(qp.l[np.isfinite(qp.l)],
                           qp2.l[np.isfinite(qp2.l)])
        assert cfg2.tol == 1e-7
        sol = PtcSolver(cfg2).solve(qp2)
        assert sol.status in TERMINAL

    def test_validation(self):
        with pytest.raises(ValueError):
            DenseQp(P=np.eye(2), q=np.zeros(2), A=np.eye(2),
                    l=np.array([1.0, 0.0]), u=np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            DenseQp(P=np.array([[1.0, 0.5], [0.0, 1.0]]), q=np.zeros(2),
                    A=np.zeros((0, 2)), l=np.zeros(0), u=np.zeros(0))

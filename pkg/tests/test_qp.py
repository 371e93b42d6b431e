import numpy as np
import pytest
from hypothesis import given, strategies as st

from platoon_perl import qp
from platoon_perl.qp import QpError, QpProblem, QpSolution, check_kkt, solve

from oracles import dual_projected_gradient, enumerate_active_sets, random_qp

EYE2 = 2 * np.eye(2)
Q = np.array([-2.0, -4.0])


def test_unconstrained():
    sol = solve(QpProblem(EYE2, Q))
    assert sol.ok
    np.testing.assert_allclose(sol.x_star, [1, 2], atol=1e-12)


def test_halfplane_active():
    pr = QpProblem(EYE2, Q, [[1, 1]], [1])
    sol = solve(pr)
    assert sol.ok and sol.active_set == [0]
    np.testing.assert_allclose(sol.x_star, [0, 1], atol=1e-12)
    np.testing.assert_allclose(sol.duals, [2], atol=1e-12)
    assert check_kkt(pr, sol).passed


def test_halfplane_matches_grid_search():
    pr = QpProblem(EYE2, Q, [[1, 1]], [1])
    g = np.linspace(-2, 3, 1001)
    xx, yy = np.meshgrid(g, g)
    f = xx ** 2 + yy ** 2 - 2 * xx - 4 * yy
    f[xx + yy > 1 + 1e-12] = np.inf
    i = np.unravel_index(np.argmin(f), f.shape)
    np.testing.assert_allclose(solve(pr).x_star, [xx[i], yy[i]], atol=5e-3)


def test_contradictory_box_is_infeasible():
    pr = QpProblem(EYE2, Q, [[1, 0], [-1, 0]], [-1, -2])
    sol = solve(pr)
    assert sol.status == qp.INFEASIBLE and not sol.ok
    y = sol.certificate
    assert y is not None and np.all(y >= 0)
    np.testing.assert_allclose(pr.g_mat.T @ y, 0, atol=1e-12)
    assert pr.h_vec @ y < 0


def test_check_kkt_rejects_perturbation():
    pr = QpProblem(EYE2, Q, [[1, 1]], [1])
    sol = solve(pr)
    moved = QpSolution(sol.x_star + 0.1 * np.array([1.0, 1.0]), sol.duals, sol.status,
                       sol.kkt_residuals)
    rep = check_kkt(pr, moved)
    assert not rep.passed
    assert rep.residuals.primal > 1e-6 or rep.residuals.stationarity > 1e-6


def test_check_kkt_zero_problem():
    pr = QpProblem(np.zeros((2, 2)), np.zeros(2))
    sol = QpSolution(np.zeros(2), np.zeros(0), qp.OPTIMAL, None)
    assert check_kkt(pr, sol).passed


def test_semidefinite_needs_regularization():
    pr = QpProblem(np.zeros((2, 2)), np.zeros(2), [[1, 0]], [1])
    with pytest.raises(QpError):
        solve(pr, regularization=0.0)
    sol = solve(pr)
    assert sol.ok


@pytest.mark.parametrize("kw", [
    {"p_mat": np.eye(3), "q_vec": np.zeros(2)},
    {"p_mat": np.eye(2), "q_vec": np.zeros(2), "g_mat": np.ones((2, 2)), "h_vec": np.ones(3)},
    {"p_mat": [[1, 1], [0, 1]], "q_vec": np.zeros(2)},
])
def test_problem_validation(kw):
    with pytest.raises(QpError):
        QpProblem(**kw)


def test_against_enumeration_oracle():
    rng = np.random.default_rng(0)
    worst_kkt = worst_obj = 0.0
    checked = 0
    for _ in range(250):
        pr = random_qp(rng)
        sol = solve(pr)
        best = enumerate_active_sets(pr)
        if best is None:
            assert sol.status == qp.INFEASIBLE
            continue
        assert sol.ok
        assert check_kkt(pr, sol, 1e-6).passed
        worst_kkt = max(worst_kkt, sol.kkt_residuals.max())
        worst_obj = max(worst_obj, abs(pr.objective(sol.x_star) - best[0]))
        checked += 1
    assert checked >= 200
    assert worst_kkt <= 1e-6 and worst_obj <= 1e-5


def test_weak_duality_against_dual_ascent():
    rng = np.random.default_rng(1)
    for _ in range(30):
        pr = random_qp(rng, m=int(rng.integers(1, 5)))
        sol = solve(pr)
        if not sol.ok:
            continue
        lower, _ = dual_projected_gradient(pr, iters=3000)
        assert lower <= pr.objective(sol.x_star) + 1e-8


@given(st.integers(0, 10 ** 6))
def test_dump_load_roundtrip(tmp_path_factory, seed):
    pr = random_qp(np.random.default_rng(seed))
    path = tmp_path_factory.mktemp("qp") / "p.txt"
    pr.dump(path)
    back = QpProblem.load(path)
    for a, b in [(pr.p_mat, back.p_mat), (pr.q_vec, back.q_vec), (pr.g_mat, back.g_mat),
                 (pr.h_vec, back.h_vec)]:
        np.testing.assert_array_equal(a, b)


def test_load_rejects_short_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 1\n1 0\n0 1\n0 0\n")
    with pytest.raises(QpError):
        QpProblem.load(path)


def test_deterministic():
    pr = random_qp(np.random.default_rng(7), 5, 8)
    a, b = solve(pr), solve(pr)
    np.testing.assert_array_equal(a.x_star, b.x_star)
    np.testing.assert_array_equal(a.duals, b.duals)


def test_warm_start_never_worse():
    rng = np.random.default_rng(3)
    for _ in range(100):
        pr = random_qp(rng)
        cold = solve(pr)
        if not cold.ok:
            continue
        warm = solve(pr, warm_start=cold.x_star)
        assert warm.ok
        assert warm.kkt_residuals.max() <= max(cold.kkt_residuals.max(), 1e-9)
        assert warm.iterations <= cold.iterations

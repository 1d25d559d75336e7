import numpy as np
import pytest

from kinoplan.dynamics import get_model, rollout
from kinoplan.trajopt import (
    OptProblem,
    OptWeights,
    angle_diff,
    defects,
    objective,
    objective_gradient,
    optimize,
    shrink_horizon,
    straight_line_guess,
    _point_rect_distance,
)
from kinoplan.world import ProblemInstance


def free_problem(model, q_s, q_g, T, **kw):
    return OptProblem(model=model, q_s=q_s, q_g=q_g, horizon=T, inst=None, **kw)


class TestDefects:
    def test_consistent_rollout_is_zero(self):
        m = get_model("unicycle1")
        rng = np.random.default_rng(0)
        U = rng.uniform(m.u_lo, m.u_hi, size=(12, 2))
        Q = rollout(m, [0, 0, 0.3], U)
        assert np.max(np.abs(defects(m, Q, U))) == 0.0

    def test_perturbation_sparsity(self):
        m = get_model("unicycle1")
        U = np.tile([0.3, 0.1], (8, 1))
        Q = rollout(m, [0, 0, 0], U)
        k = 4
        Q[k, 0] += 0.01
        d = defects(m, Q, U).reshape(8, 3)
        nz = {t for t in range(8) if np.any(d[t] != 0)}
        # residual blocks t = k-1 (prediction of Q[k]) and t = k (from Q[k])
        assert nz == {k - 1, k}

    def test_angle_aware(self):
        m = get_model("unicycle1")
        Q = np.array([[0, 0, np.pi - 0.01], [0, 0, -np.pi + 0.01]])
        U = np.array([[0.0, 0.2]])
        d = defects(m, Q, U)
        assert np.max(np.abs(d)) == pytest.approx(0.0, abs=1e-12)


class TestPointRectDistance:
    def test_outside_face(self):
        d, g = _point_rect_distance(np.array([[3.0, 0.0]]), np.array([[0, 0, 1.0, 1.0]]))
        assert d[0, 0] == pytest.approx(2.0)
        np.testing.assert_allclose(g[0, 0], [1.0, 0.0])

    def test_outside_corner(self):
        d, g = _point_rect_distance(np.array([[2.0, 2.0]]), np.array([[0, 0, 1.0, 1.0]]))
        assert d[0, 0] == pytest.approx(np.sqrt(2))
        np.testing.assert_allclose(g[0, 0], [np.sqrt(0.5), np.sqrt(0.5)])

    def test_inside(self):
        d, g = _point_rect_distance(np.array([[0.5, 0.0]]), np.array([[0, 0, 1.0, 1.0]]))
        assert d[0, 0] == pytest.approx(-0.5)
        np.testing.assert_allclose(g[0, 0], [1.0, 0.0])

    def test_tie_subgradient_zero(self):
        d, g = _point_rect_distance(np.array([[0.0, 0.0]]), np.array([[0, 0, 1.0, 1.0]]))
        np.testing.assert_allclose(g[0, 0], [0.0, 0.0])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        rects = rng.uniform([-1, -1, 0.2, 0.2], [1, 1, 1.5, 1.5], size=(5, 4))
        h = 1e-7
        for _ in range(50):
            p = rng.uniform(-3, 3, size=(1, 2))
            d, g = _point_rect_distance(p, rects)
            for k in range(2):
                e = np.zeros((1, 2))
                e[0, k] = h
                dp, _ = _point_rect_distance(p + e, rects)
                dm, _ = _point_rect_distance(p - e, rects)
                np.testing.assert_allclose(g[:, :, k], (dp - dm) / (2 * h), atol=1e-5)


class TestGradientOracle:
    @pytest.mark.parametrize("mid", ["unicycle1", "unicycle2", "car_trailer"])
    def test_objective_gradient_matches_fd(self, mid):
        m = get_model(mid)
        rng = np.random.default_rng(11)
        T = 5
        inst = ProblemInstance(
            model_id=mid, width=6, height=6,
            obstacles=np.array([[3.0, 3.0, 0.8, 0.8]]),
            start=np.zeros(m.d_q) + np.array([1, 1] + [0] * (m.d_q - 2), dtype=float),
            goal=np.array([5, 5] + [0] * (m.d_q - 2), dtype=float))
        for _ in range(10):
            q_s = inst.start
            q_g = inst.goal
            prob = OptProblem(model=m, q_s=q_s, q_g=q_g, horizon=T, inst=inst)
            Q = rng.uniform(0.5, 5.5, size=(T + 1, m.d_q))
            Q[0] = q_s
            for i in m.angle_indices:
                Q[:, i] = rng.uniform(-2.5, 2.5, size=T + 1)
            U = rng.uniform(m.u_lo, m.u_hi, size=(T, m.d_u)) * 0.9
            g = objective_gradient(prob, Q, U)
            z0 = np.concatenate([Q[1:].ravel(), U.ravel()])
            h = 1e-6
            fd = np.zeros_like(z0)
            for j in range(len(z0)):
                zp, zm = z0.copy(), z0.copy()
                zp[j] += h
                zm[j] -= h
                Qp = np.vstack([q_s, zp[: T * m.d_q].reshape(T, m.d_q)])
                Qm = np.vstack([q_s, zm[: T * m.d_q].reshape(T, m.d_q)])
                Up = zp[T * m.d_q:].reshape(T, m.d_u)
                Um = zm[T * m.d_q:].reshape(T, m.d_u)
                fd[j] = (objective(prob, Qp, Up) - objective(prob, Qm, Um)) / (2 * h)
            scale = max(1.0, np.max(np.abs(fd)))
            assert np.max(np.abs(g - fd)) / scale < 1e-4


class TestOptimize:
    def test_feasible_guess_fixed_point(self):
        m = get_model("unicycle1")
        U = np.tile([0.4, 0.0], (20, 1))
        Q = rollout(m, [0, 0, 0], U)
        prob = free_problem(m, Q[0], Q[-1], 20, guess_Q=Q, guess_U=U)
        res = optimize(prob)
        assert res.feasible
        assert res.max_defect <= 1e-4
        np.testing.assert_allclose(res.U, U, atol=0.05)

    def test_straight_line_bvp_unicycle1(self):
        m = get_model("unicycle1")
        q_s = np.array([0.0, 0.0, 0.0])
        q_g = np.array([0.8, 0.0, 0.0])  # inside the 1.0 m reachable disc
        res = optimize(free_problem(m, q_s, q_g, 20))
        assert res.feasible
        assert res.goal_err <= 1e-3

    def test_junction_repair_smoke(self):
        # a 0.5-discontinuity in open space is repaired to defect <= 1e-4;
        # segments run below max speed so the horizon has slack to absorb
        # the extra path length the jump requires
        m = get_model("unicycle1")
        U1 = np.tile([0.3, 0.0], (12, 1))
        Q1 = rollout(m, [0, 0, 0], U1)
        q_mid = Q1[-1] + np.array([0.0, 0.5, 0.0])  # jump
        U2 = np.tile([0.3, 0.0], (12, 1))
        Q2 = rollout(m, q_mid, U2)
        Qg = np.vstack([Q1, Q2[1:]])
        Ug = np.vstack([U1, U2])
        prob = free_problem(m, Q1[0], Q2[-1], 24, guess_Q=Qg, guess_U=Ug)
        res = optimize(prob)
        assert res.feasible
        assert res.max_defect <= 1e-4

    def test_objective_monotone_within_rounds(self):
        m = get_model("unicycle2")
        q_s = np.zeros(5)
        q_g = np.array([0.6, 0.3, 0.0, 0.0, 0.0])
        res = optimize(free_problem(m, q_s, q_g, 25))
        for round_hist in res.objective_history:
            diffs = np.diff(round_hist)
            assert np.all(diffs <= 1e-12)

    def test_obstacle_avoidance(self):
        m = get_model("unicycle1")
        inst = ProblemInstance(
            model_id="unicycle1", width=8, height=4,
            obstacles=np.array([[4.0, 2.0, 0.3, 0.9]]),
            start=np.array([1.5, 2.0, 0.0]), goal=np.array([6.5, 2.0, 0.0]))
        prob = OptProblem(model=m, q_s=inst.start, q_g=inst.goal, horizon=90, inst=inst)
        res = optimize(prob)
        if res.feasible:  # repair must produce a collision-free path
            from kinoplan.world import collides_batch
            assert not np.any(collides_batch(inst, res.Q))

    def test_bounds_respected(self):
        m = get_model("unicycle1")
        res = optimize(free_problem(m, np.zeros(3), np.array([0.9, 0.0, 0.0]), 20))
        assert np.all(res.U >= m.u_lo - 1e-12)
        assert np.all(res.U <= m.u_hi + 1e-12)


class TestShrinkHorizon:
    def test_padded_solution_shrinks(self):
        m = get_model("unicycle1")
        U = np.vstack([np.tile([0.5, 0.0], (10, 1)), np.zeros((10, 2))])
        Q = rollout(m, [0, 0, 0], U)
        prob = free_problem(m, Q[0], Q[-1], 20, guess_Q=Q, guess_U=U)
        res = optimize(prob)
        assert res.feasible
        shrunk = shrink_horizon(prob, res)
        assert shrunk.feasible
        assert len(shrunk.U) <= 12  # at least 8 of the 10 padding steps dropped
        assert shrunk.cost <= res.cost

    def test_minimal_horizon_unchanged(self):
        m = get_model("unicycle1")
        U = np.tile([0.5, 0.0], (10, 1))
        Q = rollout(m, [0, 0, 0], U)
        prob = free_problem(m, Q[0], Q[-1], 10, guess_Q=Q, guess_U=U)
        res = optimize(prob)
        shrunk = shrink_horizon(prob, res)
        assert shrunk.cost <= res.cost
        # 10 steps at full speed is already minimal; cannot shrink below ~10
        assert len(shrunk.U) >= 9

    def test_cost_never_increases(self):
        m = get_model("unicycle2")
        q_g = np.array([0.5, 0.0, 0.0, 0.0, 0.0])
        prob = free_problem(m, np.zeros(5), q_g, 30)
        res = optimize(prob)
        if res.feasible:
            shrunk = shrink_horizon(prob, res)
            assert shrunk.cost <= res.cost


class TestGuess:
    def test_straight_line_wraps(self):
        m = get_model("unicycle1")
        Q, U = straight_line_guess(
            m, np.array([0, 0, np.pi - 0.1]), np.array([1, 1, -np.pi + 0.1]), 10)
        assert np.all(np.abs(np.diff(np.unwrap(Q[:, 2]))) < 0.1)
        assert U.shape == (10, 2)

    def test_angle_diff_wraps(self):
        m = get_model("unicycle1")
        d = angle_diff(m, np.array([0, 0, np.pi - 0.01]), np.array([0, 0, -np.pi + 0.01]))
        assert d[2] == pytest.approx(-0.02)

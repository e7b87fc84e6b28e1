"""Partial transport solvers against the vertex-enumeration oracle."""

import numpy as np
import pytest

from potpda.pot import (
    SolverConfig,
    TransportPlan,
    brute_force_partial_ot,
    entropic_partial_ot,
    exact_partial_ot,
    pw_distance,
)

# Oracle-confirmed instance: optimum fills the zero-cost cell to its row cap
# and routes the remainder through the cheapest remaining cell.
A2 = np.array([0.6, 0.4])
B2 = np.array([0.5, 0.5])
C2 = np.array([[1.0, 2.0], [3.0, 0.0]])
ALPHA2 = 0.5
COST2 = 0.1


def random_tiny_instance(rng):
    shapes = [(1, 1), (1, 2), (2, 1), (2, 2), (2, 3), (3, 2), (1, 6), (6, 1)]
    m, n = shapes[rng.integers(len(shapes))]
    a = rng.random(m) + 0.05
    b = rng.random(n) + 0.05
    C = rng.random((m, n)) * rng.choice([0.5, 1.0, 5.0])
    alpha = rng.uniform(0.05, 1.0) * min(a.sum(), b.sum())
    return a, b, C, alpha


def random_geometry_instance(rng, m=5, n=7, dim=5):
    x = rng.normal(size=(m, dim))
    y = rng.normal(size=(n, dim))
    C = np.linalg.norm(x[:, None] - y[None], axis=2)
    a = rng.uniform(0.5, 1.5, m) * 2.0 / m
    b = rng.uniform(0.5, 1.5, n) / n
    alpha = 0.5 * min(a.sum(), b.sum())
    return a, b, C, alpha


class TestExactPartialOt:
    def test_single_cell_forced(self):
        plan, cost = exact_partial_ot([1.0], [1.0], [[3.0]], 1.0)
        assert cost == pytest.approx(3.0, abs=1e-12)
        np.testing.assert_allclose(plan.matrix, [[1.0]])

    def test_zero_cost_matrix(self):
        rng = np.random.default_rng(0)
        a = rng.random(4) + 0.1
        _, cost = exact_partial_ot(a, a, np.zeros((4, 4)), 0.5 * a.sum())
        assert cost == pytest.approx(0.0, abs=1e-12)

    def test_derived_two_by_two(self):
        plan, cost = exact_partial_ot(A2, B2, C2, ALPHA2)
        assert cost == pytest.approx(COST2, abs=1e-9)
        np.testing.assert_allclose(plan.matrix, [[0.1, 0.0], [0.0, 0.4]], atol=1e-9)

    def test_balanced_degenerate_mass(self):
        # alpha equal to both total masses: every cap becomes an equality
        rng = np.random.default_rng(5)
        a = rng.random(3) + 0.1
        b = rng.random(4) + 0.1
        b *= a.sum() / b.sum()
        C = rng.random((3, 4))
        plan, _ = exact_partial_ot(a, b, C, a.sum())
        np.testing.assert_allclose(plan.matrix.sum(axis=1), a, atol=1e-9)
        np.testing.assert_allclose(plan.matrix.sum(axis=0), b, atol=1e-9)

    def test_infeasible_alpha(self):
        with pytest.raises(ValueError, match="infeasible"):
            exact_partial_ot([0.5], [0.5], [[1.0]], 0.9)

    def test_negative_masses(self):
        with pytest.raises(ValueError):
            exact_partial_ot([-0.1, 0.5], [0.4], [[1.0], [1.0]], 0.2)

    def test_feasibility_invariants(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a, b, C, alpha = random_geometry_instance(rng)
            plan, _ = exact_partial_ot(a, b, C, alpha)
            assert plan.max_violation() <= 1e-9


class TestBruteForceOracle:
    def test_single_cell(self):
        _, cost = brute_force_partial_ot([1.0], [1.0], [[3.0]], 0.7)
        assert cost == pytest.approx(0.7 * 3.0, abs=1e-12)

    def test_one_by_two_picks_cheaper_column(self):
        _, cost = brute_force_partial_ot([1.0], [0.6, 0.6], [[2.0, 5.0]], 0.6)
        assert cost == pytest.approx(0.6 * 2.0, abs=1e-10)

    def test_alpha_zero_rejected(self):
        with pytest.raises(ValueError):
            brute_force_partial_ot([1.0], [1.0], [[1.0]], 0.0)

    def test_instance_too_large(self):
        with pytest.raises(ValueError, match="instance too large"):
            brute_force_partial_ot(np.ones(3), np.ones(3), np.ones((3, 3)), 1.0)

    def test_agrees_with_exact_on_random_instances(self):
        rng = np.random.default_rng(123)
        for _ in range(150):
            a, b, C, alpha = random_tiny_instance(rng)
            _, exact_cost = exact_partial_ot(a, b, C, alpha)
            _, oracle_cost = brute_force_partial_ot(a, b, C, alpha)
            assert exact_cost == pytest.approx(oracle_cost, abs=1e-8)


class TestEntropicPartialOt:
    def test_zero_cost_any_eps(self):
        for eps in (0.1, 1.0, 50.0):
            plan = entropic_partial_ot(A2, B2, np.zeros((2, 2)), 0.5, SolverConfig(eps=eps))
            assert plan.cost(np.zeros((2, 2))) == pytest.approx(0.0, abs=1e-12)

    def test_derived_instance_small_eps(self):
        cfg = SolverConfig(eps=0.01 * C2.max())
        plan = entropic_partial_ot(A2, B2, C2, ALPHA2, cfg)
        assert plan.converged
        assert plan.cost(C2) == pytest.approx(COST2, rel=0.02)

    def test_default_config_recorded(self):
        cfg = SolverConfig()
        assert cfg.eps == 7.0 and cfg.max_iter == 5000
        plan = entropic_partial_ot(A2, B2, C2, ALPHA2, cfg)
        assert plan.epsilon == 7.0

    def test_plan_feasibility(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            a, b, C, alpha = random_geometry_instance(rng)
            plan = entropic_partial_ot(a, b, C, alpha, SolverConfig(eps=0.05 * C.max()))
            assert plan.max_violation() <= 1e-6
            assert abs(plan.matrix.sum() - alpha) <= 1e-8

    def test_eps_to_zero_trend(self):
        rng = np.random.default_rng(33)
        a, b, C, alpha = random_geometry_instance(rng)
        _, exact_cost = exact_partial_ot(a, b, C, alpha)
        gaps = []
        for eps in C.max() * np.array([0.64, 0.16, 0.04, 0.01]):
            plan = entropic_partial_ot(a, b, C, alpha, SolverConfig(eps=eps, max_iter=20000))
            gaps.append(plan.cost(C) - exact_cost)
        assert gaps[-1] <= 0.02 * exact_cost
        for earlier, later in zip(gaps, gaps[1:]):
            assert later <= earlier * 1.05 + 1e-9

    def test_nonconvergence_flagged_not_raised(self):
        plan = entropic_partial_ot(A2, B2, C2, ALPHA2, SolverConfig(eps=0.03, max_iter=2))
        assert not plan.converged

    def test_nonfinite_cost_rejected(self):
        C = np.array([[np.inf, 1.0], [1.0, 1.0]])
        with pytest.raises(ValueError, match="finite"):
            entropic_partial_ot(A2, B2, C, 0.5)


class TestPwDistance:
    def test_identical_supports_zero(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(5, 3))
        C = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        a = np.full(5, 0.2)
        assert pw_distance(a, a, C, 1.0) == pytest.approx(0.0, abs=1e-10)

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            a, b, C, alpha = random_geometry_instance(rng)
            alpha_small = 0.5 * alpha
            assert pw_distance(a, b, C, alpha_small) <= pw_distance(a, b, C, alpha) + 1e-9

    def test_scale_equivariance(self):
        rng = np.random.default_rng(19)
        a, b, C, alpha = random_geometry_instance(rng)
        t = 3.7
        assert pw_distance(a, b, t * C, alpha) == pytest.approx(
            t * pw_distance(a, b, C, alpha), abs=1e-9)

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            a, b, C, alpha = random_geometry_instance(rng)
            assert pw_distance(a, b, C, alpha) == pytest.approx(
                pw_distance(b, a, C.T, alpha), abs=1e-9)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            pw_distance(A2, B2, C2, 0.5, method="magic")


class TestTransportPlanType:
    def test_validate_raises_on_violation(self):
        plan = TransportPlan(np.array([[0.6]]), np.array([0.5]), np.array([1.0]), 0.6)
        with pytest.raises(ValueError, match="infeasible"):
            plan.validate(1e-9)

    def test_solver_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(eps=0.0)
        with pytest.raises(ValueError):
            SolverConfig(max_iter=0)

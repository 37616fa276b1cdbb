import numpy as np
import pytest

from datalqg.dynamics import LinearModel, make_model, rollout
from datalqg.openloop import (CostSpec, OptimizerConfig, RolloutCounter,
                              evaluate_cost, fd_gradient, gradient_descent)


def scalar_chain():
    """x+ = x + u, the simplest integrator plant."""
    return LinearModel(np.array([[1.0]]), np.array([[1.0]]))


def control_only_cost(n_x=1, n_u=1):
    """J = sum ||u_k||^2 (R = 2 I with the 1/2 stage factor), no state terms."""
    return CostSpec(q_inc=np.zeros((n_x, n_x)), r=2.0 * np.eye(n_u),
                    q_terminal=np.zeros((n_x, n_x)), target=np.zeros(n_x))


def lqr_open_loop_oracle(a, b, q, r_std, q_n, x0, horizon):
    """Optimal open-loop controls of a deterministic LQ problem via a
    backward Riccati sweep (independent of the feedback module)."""
    n = a.shape[0]
    p = q_n.copy()
    gains = []
    for _ in range(horizon):
        s = r_std + b.T @ p @ b
        k = np.linalg.solve(s, b.T @ p @ a)
        p = q + a.T @ p @ (a - b @ k)
        gains.append(k)
    gains.reverse()
    x = x0.copy()
    controls = np.empty((horizon, b.shape[1]))
    for t in range(horizon):
        controls[t] = -gains[t] @ x
        x = a @ x + b @ controls[t]
    return controls


class TestEvaluateCost:
    def test_equilibrium_zero(self):
        model = make_model("cartpole")
        cost = CostSpec(q_inc=np.eye(4), r=np.eye(1), q_terminal=np.eye(4),
                        target=np.zeros(4))
        assert evaluate_cost(model, cost, np.zeros(4), np.zeros((30, 1))) == 0.0

    def test_hand_evaluated_scalar(self):
        # x+ = x + u, x0 = 1, U = [-1]: stage 0.5 * 1 * R=1, terminal 0
        model = scalar_chain()
        cost = CostSpec(q_inc=np.zeros((1, 1)), r=np.eye(1),
                        q_terminal=np.eye(1), target=np.zeros(1))
        J = evaluate_cost(model, cost, np.array([1.0]), np.array([[-1.0]]))
        assert J == pytest.approx(0.5, abs=1e-12)

    def test_terminal_weight_linearity(self):
        model = make_model("cartpole")
        x0 = np.array([0.0, 0.3, 0.0, 0.0])
        u = np.zeros((40, 1))
        base = CostSpec(q_inc=np.zeros((4, 4)), r=np.eye(1),
                        q_terminal=np.eye(4), target=np.zeros(4))
        doubled = CostSpec(q_inc=np.zeros((4, 4)), r=np.eye(1),
                           q_terminal=2.0 * np.eye(4), target=np.zeros(4))
        j1 = evaluate_cost(model, base, x0, u)
        j2 = evaluate_cost(model, doubled, x0, u)
        assert j2 == pytest.approx(2.0 * j1, rel=1e-12)

    def test_counter(self):
        model = scalar_chain()
        counter = RolloutCounter()
        evaluate_cost(model, control_only_cost(), np.zeros(1), np.zeros((4, 1)),
                      counter)
        assert counter.rollouts == 1


class TestFdGradient:
    def test_quadratic_exact_forward_difference(self):
        # J = ||U||^2 so (J(u_i + h) - J)/h = 2 u_i + h exactly
        model = scalar_chain()
        rng = np.random.default_rng(0)
        u = rng.normal(size=(6, 1))
        h = 1e-3
        g = fd_gradient(model, control_only_cost(), np.zeros(1), u, h)
        np.testing.assert_allclose(g, 2.0 * u + h, atol=1e-9)

    def test_unreachable_state_component_zero(self):
        # two decoupled states, terminal cost only on the unforced one
        a = np.diag([0.5, 0.5])
        b = np.array([[1.0], [0.0]])
        model = LinearModel(a, b)
        cost = CostSpec(q_inc=np.zeros((2, 2)), r=1e-12 * np.eye(1),
                        q_terminal=np.diag([0.0, 1.0]), target=np.zeros(2))
        g = fd_gradient(model, cost, np.array([1.0, 1.0]), np.zeros((5, 1)), 1e-6)
        np.testing.assert_allclose(g, np.zeros((5, 1)), atol=1e-5)

    def test_rollout_budget(self):
        model = scalar_chain()
        counter = RolloutCounter()
        u = np.zeros((7, 1))
        fd_gradient(model, control_only_cost(), np.zeros(1), u, 1e-4,
                    counter=counter)
        assert counter.rollouts == 7 * 1 + 1

    def test_against_central_difference_cartpole(self):
        model = make_model("cartpole")
        cost = CostSpec(q_inc=0.1 * np.eye(4), r=0.1 * np.eye(1),
                        q_terminal=10.0 * np.eye(4), target=np.zeros(4))
        x0 = np.array([0.0, np.pi / 4, 0.0, 0.0])
        rng = np.random.default_rng(1)
        u = 0.5 * rng.normal(size=(50, 1))
        h = 1e-5
        g = fd_gradient(model, cost, x0, u, h)
        central = np.empty_like(g)
        for i in range(len(u)):
            up, um = u.copy(), u.copy()
            up[i, 0] += h / 10
            um[i, 0] -= h / 10
            central[i, 0] = (evaluate_cost(model, cost, x0, up)
                             - evaluate_cost(model, cost, x0, um)) / (2 * h / 10)
        assert np.linalg.norm(g - central) / np.linalg.norm(central) < 1e-3


class TestGradientDescent:
    def test_zero_iterations_when_converged(self):
        model = scalar_chain()
        config = OptimizerConfig(tolerance=1.0, max_iterations=50)
        u0 = 0.01 * np.ones((4, 1))
        res = gradient_descent(model, control_only_cost(), np.zeros(1), u0, config)
        assert res.converged and res.iterations == 0
        np.testing.assert_array_equal(res.controls, u0)

    def test_fixed_step_contraction(self):
        # J = ||U||^2 with alpha = 0.25 contracts U by 1/2 each iteration
        model = scalar_chain()
        u0 = np.ones((5, 1))
        config = OptimizerConfig(step_size=0.25, fd_step=1e-8,
                                 tolerance=1e-12, max_iterations=3,
                                 backtracking=False)
        res = gradient_descent(model, control_only_cost(), np.zeros(1), u0, config)
        np.testing.assert_allclose(res.controls, 0.5 ** 3 * u0, atol=1e-6)

    def test_converges_to_zero_quadratic(self):
        model = scalar_chain()
        config = OptimizerConfig(step_size=0.25, fd_step=1e-9, tolerance=1e-6,
                                 max_iterations=200, backtracking=False)
        res = gradient_descent(model, control_only_cost(), np.zeros(1),
                               np.ones((4, 1)), config)
        assert res.converged
        np.testing.assert_allclose(res.controls, np.zeros((4, 1)), atol=1e-6)

    @pytest.mark.parametrize("method", ["gd", "lbfgs"])
    def test_scalar_lq_matches_riccati_oracle(self, method):
        a = np.array([[0.9]])
        b = np.array([[0.5]])
        model = LinearModel(a, b)
        # stage (x-0)' q x + 0.5 u' r u maps to standard LQ with r_std = r/2
        cost = CostSpec(q_inc=np.eye(1), r=2.0 * np.eye(1),
                        q_terminal=5.0 * np.eye(1), target=np.zeros(1))
        x0 = np.array([1.0])
        horizon = 12
        oracle_u = lqr_open_loop_oracle(a, b, np.eye(1), np.eye(1),
                                        5.0 * np.eye(1), x0, horizon)
        oracle_cost = evaluate_cost(model, cost, x0, oracle_u)
        config = OptimizerConfig(step_size=0.1, fd_step=1e-7, tolerance=1e-7,
                                 max_iterations=3000, method=method)
        res = gradient_descent(model, cost, x0, np.zeros((horizon, 1)), config)
        assert res.cost <= oracle_cost * 1.01

    def test_backtracking_monotone_cost(self):
        model = make_model("cartpole")
        cost = CostSpec(q_inc=0.1 * np.eye(4), r=0.1 * np.eye(1),
                        q_terminal=50.0 * np.eye(4), target=np.zeros(4))
        config = OptimizerConfig(step_size=1e-2, fd_step=1e-6, tolerance=1e-9,
                                 max_iterations=25)
        res = gradient_descent(model, cost, np.array([0.0, 0.5, 0.0, 0.0]),
                               np.zeros((40, 1)), config)
        diffs = np.diff(res.cost_history)
        assert np.all(diffs <= 0)

    def test_rollout_accounting_per_iteration(self):
        model = scalar_chain()
        config = OptimizerConfig(step_size=0.1, fd_step=1e-6, tolerance=1e-12,
                                 max_iterations=10)
        n, n_u = 6, 1
        res = gradient_descent(model, control_only_cost(), np.zeros(1),
                               np.ones((n, n_u)), config)
        per_iter = np.diff(res.rollout_history)
        assert np.all(per_iter >= n * n_u + 1)
        assert np.all(per_iter <= n * n_u + 1 + 8)  # a few line-search evals

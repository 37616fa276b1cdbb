import math

import numpy as np
import pytest

from datalqg import dynamics
from datalqg.dynamics import (AcrobotParams, CartPoleParams, CartTwoPoleParams,
                              LinearModel, Trajectory, make_model, rollout)
from datalqg.errors import ConfigError, NumericalFailure
from datalqg.sysid import linearize_fd


def cartpole_energy(p: CartPoleParams, x):
    pos, th, vel, om = x
    ke = (0.5 * (p.cart_mass + p.pole_mass) * vel ** 2
          + p.pole_mass * p.pole_length * vel * om * math.cos(th)
          + 0.5 * p.pole_mass * p.pole_length ** 2 * om ** 2)
    pe = p.pole_mass * p.gravity * p.pole_length * math.cos(th)
    return ke + pe


def cart2pole_energy(p: CartTwoPoleParams, x):
    pos, t1, t2, v, o1, o2 = x
    m, m1, m2, l1, l2, g = (p.cart_mass, p.mass_1, p.mass_2, p.length_1,
                            p.length_2, p.gravity)
    ke = (0.5 * m * v * v
          + 0.5 * m1 * (v * v + 2 * l1 * o1 * math.cos(t1) * v + l1 * l1 * o1 * o1)
          + 0.5 * m2 * (v * v + l1 * l1 * o1 * o1 + l2 * l2 * o2 * o2
                        + 2 * l1 * v * o1 * math.cos(t1)
                        + 2 * l2 * v * o2 * math.cos(t2)
                        + 2 * l1 * l2 * o1 * o2 * math.cos(t1 - t2)))
    pe = m1 * g * l1 * math.cos(t1) + m2 * g * (l1 * math.cos(t1) + l2 * math.cos(t2))
    return ke + pe


def acrobot_energy(p: AcrobotParams, x):
    t1, t2, o1, o2 = x
    m1, m2, l1, l2, g = p.mass_1, p.mass_2, p.length_1, p.length_2, p.gravity
    a2dot = o1 + o2
    ke = (0.5 * m1 * l1 * l1 * o1 * o1
          + 0.5 * m2 * (l1 * l1 * o1 * o1 + l2 * l2 * a2dot * a2dot
                        + 2 * l1 * l2 * o1 * a2dot * math.cos(t2)))
    pe = m1 * g * l1 * math.cos(t1) + m2 * g * (l1 * math.cos(t1)
                                                + l2 * math.cos(t1 + t2))
    return ke + pe


class TestDerivatives:
    def test_cartpole_equilibrium(self):
        d = dynamics.cartpole_step(CartPoleParams(), np.zeros(4), np.zeros(1))
        np.testing.assert_array_equal(d, np.zeros(4))

    def test_cartpole_force_sign(self):
        for force in (1.0, -2.5):
            d = dynamics.cartpole_step(CartPoleParams(), np.zeros(4),
                                       np.array([force]))
            assert np.sign(d[2]) == np.sign(force)

    @pytest.mark.parametrize("name", ["cartpole", "cart2pole", "acrobot"])
    def test_upright_is_fixed_point(self, name):
        model = make_model(name)
        x = np.zeros(model.n_x)
        np.testing.assert_allclose(model.step(x, np.zeros(1)), x, atol=1e-12)

    def test_energy_conservation_acrobot_frictionless(self):
        p = AcrobotParams(friction_1=0.0, friction_2=0.0)
        model = dynamics.BenchmarkModel("acrobot", 2, p, dt=1e-3)
        x0 = np.array([0.9, -0.5, 0.3, 0.2])
        traj = rollout(model, x0, np.zeros((5000, 1)))
        e = np.array([acrobot_energy(p, s) for s in traj.states])
        assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-4

    def test_energy_conservation_cartpole(self):
        p = CartPoleParams()
        model = dynamics.BenchmarkModel("cartpole", 0, p, dt=1e-3)
        traj = rollout(model, np.array([0.2, 0.7, 0.1, -0.3]), np.zeros((5000, 1)))
        e = np.array([cartpole_energy(p, s) for s in traj.states])
        assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-4

    def test_energy_conservation_cart2pole(self):
        p = CartTwoPoleParams()
        model = dynamics.BenchmarkModel("cart2pole", 1, p, dt=1e-3)
        x0 = np.array([0.0, 0.6, -0.4, 0.2, 0.5, -0.1])
        traj = rollout(model, x0, np.zeros((5000, 1)))
        e = np.array([cart2pole_energy(p, s) for s in traj.states])
        assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-4


class TestMakeModel:
    def test_unknown_benchmark(self):
        with pytest.raises(ConfigError):
            make_model("pendulum")

    def test_bad_dt(self):
        with pytest.raises(ConfigError):
            make_model("cartpole", dt=0.0)

    def test_horizon_arithmetic(self):
        assert dynamics.horizon_steps(3.5, 0.01) == 350
        assert dynamics.horizon_steps(5.0, 0.01) == 500

    def test_determinism(self):
        model = make_model("cartpole", dt=0.01)
        rng = np.random.default_rng(0)
        u = rng.normal(size=(40, 1))
        t1 = rollout(model, np.zeros(4), u)
        t2 = rollout(model, np.zeros(4), u)
        np.testing.assert_array_equal(t1.states, t2.states)

    def test_noise_enters_control_channel(self):
        # step(x, u, w) - step(x, u, 0) ~ eps * B_d * w for small w
        eps = 0.5
        model = make_model("cartpole", dt=0.01, noise_scale=eps)
        x = np.array([0.1, 0.3, -0.2, 0.4])
        u = np.array([1.0])
        nominal = Trajectory(states=np.vstack([x, model.step(x, u)]),
                             controls=u[None, :])
        _, b_seq = linearize_fd(model, nominal, h=1e-6)
        w = np.array([1e-4])
        delta = model.step(x, u, w) - model.step(x, u)
        np.testing.assert_allclose(delta, eps * b_seq[0] @ w, atol=1e-10)


class TestRollout:
    def test_empty_horizon_rejected(self):
        model = make_model("cartpole")
        with pytest.raises(ValueError):
            rollout(model, np.zeros(4), np.zeros((0, 1)))

    def test_constant_at_equilibrium(self):
        model = make_model("acrobot")
        traj = rollout(model, np.zeros(4), np.zeros((25, 1)))
        np.testing.assert_array_equal(traj.states, np.zeros((26, 4)))

    def test_bit_reproducible(self):
        model = make_model("cart2pole")
        u = np.random.default_rng(5).normal(size=(60, 1))
        s1 = rollout(model, np.zeros(6), u).states
        s2 = rollout(model, np.zeros(6), u).states
        np.testing.assert_array_equal(s1, s2)

    def test_impulse_matches_markov_convolution(self):
        # linear model response == sum_j h_{k,j} du_j with h = C A^{k-1-j} B
        rng = np.random.default_rng(9)
        a = np.array([[0.9, 0.1], [0.0, 0.8]])
        b = np.array([[0.0], [1.0]])
        model = LinearModel(a, b)
        u = rng.normal(size=(12, 1))
        traj = rollout(model, np.zeros(2), u)
        for k in range(13):
            expect = np.zeros(2)
            for j in range(k):
                expect += np.linalg.matrix_power(a, k - 1 - j) @ b @ u[j]
            np.testing.assert_allclose(traj.states[k], expect, atol=1e-12)

    def test_nonfinite_failure_reports_step(self):
        model = LinearModel(np.array([[1e160]]), np.array([[0.0]]))
        with pytest.raises(NumericalFailure, match="step"):
            rollout(model, np.array([1.0]), np.zeros((5, 1)))

    def test_trajectory_invariant(self):
        with pytest.raises(ValueError):
            Trajectory(states=np.zeros((5, 2)), controls=np.zeros((5, 1)))

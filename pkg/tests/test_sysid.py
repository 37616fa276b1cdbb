import numpy as np
import pytest

from datalqg.dynamics import LinearModel, Trajectory, make_model, rollout
from datalqg.errors import IdentificationError
from datalqg.sysid import (MarkovParamSet, RankDeficiencyWarning, build_hankel,
                           collect_rollouts, default_block_counts, era_step,
                           estimate_markov, hessian_fd, identify_ltv,
                           linearize_fd, realize_ltv)
from util import random_ltv, scalar_lti, true_markov, zero_nominal


def scalar_markov_set(n_steps=6, a=0.5):
    """Exact Markov parameters of the scalar LTI x+ = a x + u, y = x."""
    params = np.zeros((n_steps + 1, n_steps, 1, 1))
    for k in range(1, n_steps + 1):
        for j in range(k):
            params[k, j, 0, 0] = a ** (k - 1 - j)
    return MarkovParamSet(horizon=n_steps, n_y=1, n_u=1, params=params)


class TestCollectRollouts:
    def test_determinism(self):
        model = scalar_lti()
        nominal = zero_nominal(model, 8)
        d1 = collect_rollouts(model, nominal, 10, 0.01, seed=3)
        d2 = collect_rollouts(model, nominal, 10, 0.01, seed=3)
        np.testing.assert_array_equal(d1.input_dev, d2.input_dev)
        np.testing.assert_array_equal(d1.output_dev, d2.output_dev)

    def test_small_perturbation_small_outputs(self):
        model = scalar_lti()
        nominal = zero_nominal(model, 6)
        data = collect_rollouts(model, nominal, 8, 1e-9, seed=0)
        assert np.max(np.abs(data.output_dev)) < 1e-7

    def test_convolution_oracle_linear(self):
        # on a linear system delta-y_k = sum_j h_{k,j} delta-u_j exactly
        rng = np.random.default_rng(4)
        model = random_ltv(rng, n_x=3, n_u=2, horizon=7)
        nominal = zero_nominal(model, 7)
        data = collect_rollouts(model, nominal, 20, 0.1, seed=1)
        for m in range(3):
            for k in range(8):
                expect = np.zeros(3)
                for j in range(k):
                    expect += true_markov(model, k, j) @ data.input_dev[m, j]
                np.testing.assert_allclose(data.output_dev[m, k], expect,
                                           atol=1e-10)

    def test_requires_enough_experiments(self):
        model = scalar_lti()
        with pytest.raises(ValueError):
            collect_rollouts(model, zero_nominal(model, 10), 5, 0.01, seed=0)

    def test_benchmark_kernel_path_matches_generic(self):
        model = make_model("cartpole", dt=0.02)
        controls = 0.1 * np.random.default_rng(0).normal(size=(20, 1))
        nominal = rollout(model, np.array([0.0, 0.2, 0.0, 0.0]), controls)
        data = collect_rollouts(model, nominal, 25, 0.01, seed=5)
        # re-simulate one experiment through the step interface
        traj = rollout(model, nominal.states[0],
                       nominal.controls + data.input_dev[3])
        np.testing.assert_allclose(data.output_dev[3],
                                   traj.states - nominal.states, atol=1e-12)


class TestEstimateMarkov:
    def test_scalar_lti_products(self):
        model = scalar_lti(a=0.5)
        nominal = zero_nominal(model, 6)
        data = collect_rollouts(model, nominal, 40, 0.5, seed=2)
        markov = estimate_markov(data)
        for k in range(1, 7):
            assert markov.h(k, k - 1)[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert markov.h(3, 1)[0, 0] == pytest.approx(0.5, abs=1e-9)
        assert markov.h(4, 1)[0, 0] == pytest.approx(0.25, abs=1e-9)

    def test_exact_recovery_random_ltv(self):
        rng = np.random.default_rng(12)
        model = random_ltv(rng, n_x=3, n_u=2, horizon=8)
        nominal = zero_nominal(model, 8)
        data = collect_rollouts(model, nominal, 8 * 2 + 30, 0.3, seed=7)
        markov = estimate_markov(data)
        for k in range(1, 9):
            for j in range(k):
                np.testing.assert_allclose(markov.h(k, j),
                                           true_markov(model, k, j), atol=1e-8)

    def test_zero_outputs_zero_markov(self):
        model = scalar_lti()
        nominal = zero_nominal(model, 5)
        data = collect_rollouts(model, nominal, 20, 0.1, seed=0)
        data.output_dev[:] = 0.0
        markov = estimate_markov(data)
        assert np.max(np.abs(markov.params)) == 0.0

    def test_causality_residual_small(self):
        rng = np.random.default_rng(3)
        model = random_ltv(rng, n_x=2, n_u=1, horizon=10)
        data = collect_rollouts(model, zero_nominal(model, 10), 60, 0.2, seed=9)
        markov = estimate_markov(data)
        scale = np.max([np.linalg.norm(markov.h(k, j))
                        for k in range(1, 11) for j in range(k)])
        assert np.max(markov.causality_residuals) < 1e-6 * scale

    def test_monotone_in_experiment_count(self):
        rng = np.random.default_rng(8)
        model = random_ltv(rng, n_x=2, n_u=1, horizon=12)
        nominal = zero_nominal(model, 12)

        def err(n_experiments):
            data = collect_rollouts(model, nominal, n_experiments, 0.2, seed=11)
            markov = estimate_markov(data)
            return max(np.max(np.abs(markov.h(k, j) - true_markov(model, k, j)))
                       for k in range(1, 13) for j in range(k))

        # noiseless linear data: more experiments never hurt (machine slack)
        assert err(40) <= err(14) + 1e-10

    def test_rank_deficient_stack(self):
        model = scalar_lti()
        nominal = zero_nominal(model, 4)
        data = collect_rollouts(model, nominal, 10, 0.1, seed=0)
        data.input_dev[:, 2, :] = data.input_dev[:, 1, :]  # duplicate a step
        with pytest.raises(IdentificationError, match="step"):
            estimate_markov(data)


class TestBuildHankel:
    def test_single_block(self):
        markov = scalar_markov_set()
        h = build_hankel(markov, 3, 1, 1)
        assert h.shape == (1, 1)
        assert h[0, 0] == markov.h(3, 2)[0, 0]

    def test_scalar_lti_two_by_two(self):
        markov = scalar_markov_set(a=0.5)
        h = build_hankel(markov, 2, 2, 2)
        np.testing.assert_allclose(h, [[1.0, 0.5], [0.5, 0.25]])

    def test_pre_horizon_zero_fill(self):
        markov = scalar_markov_set()
        h = build_hankel(markov, 1, 2, 2)
        assert h[0, 1] == 0.0 and h[1, 1] == 0.0  # j = -1 column

    def test_window_error(self):
        markov = scalar_markov_set(n_steps=5)
        with pytest.raises(ValueError):
            build_hankel(markov, 5, 2, 2)


class TestEraStep:
    def test_rank_one_scalar_realization(self):
        markov = scalar_markov_set(a=0.5)
        h1 = build_hankel(markov, 1, 2, 2)
        h2 = build_hankel(markov, 2, 2, 2)
        h3 = build_hankel(markov, 3, 2, 2)
        _, b1, _ = era_step(h1, h2, 1, n_y=1, n_u=1)
        _, _, c2 = era_step(h2, h3, 1, n_y=1, n_u=1)
        assert (c2 @ b1)[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_partial_realization_full_order(self):
        rng = np.random.default_rng(21)
        model = random_ltv(rng, n_x=3, n_u=1, horizon=14)
        data = collect_rollouts(model, zero_nominal(model, 14), 50, 0.3, seed=3)
        rom = identify_ltv(data, n_r=3)
        markov = estimate_markov(data)
        for k in range(rom.k_lo, rom.k_hi + 2):
            for j in range(max(0, rom.k_lo - 1), min(k, rom.k_hi + 1)):
                np.testing.assert_allclose(rom.markov(k, j), markov.h(k, j),
                                           atol=1e-8)

    def test_zero_hankel_error(self):
        zero = np.zeros((4, 4))
        with pytest.raises(IdentificationError):
            era_step(zero, zero, 1, n_y=2, n_u=2)

    def test_rank_warning(self):
        markov = scalar_markov_set(a=0.5)
        h2 = build_hankel(markov, 2, 2, 2)  # rank 1
        h3 = build_hankel(markov, 3, 2, 2)
        with pytest.warns(RankDeficiencyWarning):
            era_step(h2, h3, 2, n_y=1, n_u=1)


class TestIdentifyLtv:
    def test_window_endpoints(self):
        rng = np.random.default_rng(2)
        model = random_ltv(rng, n_x=2, n_u=1, horizon=12)
        data = collect_rollouts(model, zero_nominal(model, 12), 40, 0.2, seed=1)
        rom = identify_ltv(data, p=3, q=4, n_r=2)
        assert rom.k_lo == 1
        assert rom.k_hi == 12 - 3

    def test_auto_order_and_reconstruction(self):
        rng = np.random.default_rng(31)
        model = random_ltv(rng, n_x=3, n_u=2, horizon=16)
        data = collect_rollouts(model, zero_nominal(model, 16), 70, 0.25, seed=4)
        rom = identify_ltv(data)
        assert rom.order == 3
        for k in range(rom.k_lo, rom.k_hi + 2):
            for j in range(max(0, rom.k_lo - 1), min(k, rom.k_hi + 1)):
                np.testing.assert_allclose(rom.markov(k, j),
                                           true_markov(model, k, j), atol=1e-6)

    def test_held_out_prediction(self):
        rng = np.random.default_rng(17)
        model = random_ltv(rng, n_x=3, n_u=1, horizon=15)
        data = collect_rollouts(model, zero_nominal(model, 15), 55, 0.3, seed=6)
        rom = identify_ltv(data, n_r=3)
        fresh = rng.normal(size=(15, 1))
        traj = rollout(model, np.zeros(3), fresh)
        predicted = rom.simulate(fresh)
        window = slice(rom.k_lo, rom.k_hi + 2)
        err = np.max(np.abs(predicted[window] - traj.states[window]))
        assert err < 1e-6 * max(1.0, np.max(np.abs(traj.states)))

    def test_similarity_invariance_across_datasets(self):
        # different random data -> possibly different coordinates, same
        # input-output behavior
        rng = np.random.default_rng(5)
        model = random_ltv(rng, n_x=2, n_u=1, horizon=12)
        nominal = zero_nominal(model, 12)
        rom1 = identify_ltv(collect_rollouts(model, nominal, 45, 0.2, seed=100), n_r=2)
        rom2 = identify_ltv(collect_rollouts(model, nominal, 45, 0.2, seed=200), n_r=2)
        for k in range(rom1.k_lo, rom1.k_hi + 2):
            for j in range(max(0, rom1.k_lo - 1), min(k, rom1.k_hi + 1)):
                np.testing.assert_allclose(rom1.markov(k, j), rom2.markov(k, j),
                                           atol=1e-8)

    def test_empty_window_rejected(self):
        model = scalar_lti()
        data = collect_rollouts(model, zero_nominal(model, 3), 10, 0.1, seed=0)
        with pytest.raises(IdentificationError):
            identify_ltv(data, p=3, q=2, n_r=1)

    def test_default_block_counts(self):
        p, q = default_block_counts(4, 1)
        assert p == 2 and q == 8
        p, q = default_block_counts(1, 1, n_r=1)
        assert p >= 2 and q >= 2


class TestLinearizeFd:
    def test_exact_on_linear_model(self):
        rng = np.random.default_rng(14)
        model = random_ltv(rng, n_x=3, n_u=2, horizon=6)
        nominal = zero_nominal(model, 6)
        a_fd, b_fd = linearize_fd(model, nominal, h=1e-6)
        for k in range(6):
            a_k, b_k = model.matrices(k)
            np.testing.assert_allclose(a_fd[k], a_k, atol=1e-9)
            np.testing.assert_allclose(b_fd[k], b_k, atol=1e-9)

    def test_second_order_convergence(self):
        model = make_model("cartpole", dt=0.02)
        controls = 0.2 * np.random.default_rng(2).normal(size=(10, 1))
        nominal = rollout(model, np.array([0.0, 0.4, 0.0, 0.0]), controls)
        a1, _ = linearize_fd(model, nominal, h=1e-3)
        a2, _ = linearize_fd(model, nominal, h=5e-4)
        a3, _ = linearize_fd(model, nominal, h=2.5e-4)
        # error ~ O(h^2): successive differences shrink ~4x
        d12 = np.max(np.abs(a1 - a2))
        d23 = np.max(np.abs(a2 - a3))
        assert d23 < d12 / 2.5

    def test_hessian_zero_on_linear(self):
        rng = np.random.default_rng(6)
        model = random_ltv(rng, n_x=2, n_u=1, horizon=4)
        hess = hessian_fd(model, zero_nominal(model, 4), h=1e-3)
        assert np.max(np.abs(hess)) < 1e-6

    def test_hessian_exact_on_quadratic_map(self):
        class QuadModel(LinearModel):
            def step(self, x, u, w=None, k=0):
                x = np.asarray(x, dtype=float)
                return np.array([x[0] ** 2 + 2.0 * x[0] * x[1], 3.0 * x[1] ** 2])

        model = QuadModel(np.eye(2), np.zeros((2, 1)))
        nominal = Trajectory(states=np.array([[0.3, -0.2], [0.0, 0.0]]),
                             controls=np.zeros((1, 1)))
        hess = hessian_fd(model, nominal, h=1e-4)
        expect = np.array([[[2.0, 2.0], [2.0, 0.0]], [[0.0, 0.0], [0.0, 6.0]]])
        np.testing.assert_allclose(hess[0], expect, atol=1e-5)

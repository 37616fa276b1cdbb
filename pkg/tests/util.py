"""Shared helpers for the test suite: synthetic LTV systems and oracles."""

import numpy as np

from datalqg.dynamics import LinearModel, Trajectory


def random_ltv(rng, n_x, n_u, horizon, spectral_radius=0.95, n_y=None):
    """Random stable-ish LTV system (A_k, B_k), C = I, as a LinearModel."""
    a_seq = np.empty((horizon, n_x, n_x))
    b_seq = np.empty((horizon, n_x, n_u))
    for k in range(horizon):
        a = rng.normal(size=(n_x, n_x))
        radius = max(abs(np.linalg.eigvals(a)))
        a_seq[k] = a * (spectral_radius / max(radius, 1e-9))
        b_seq[k] = rng.normal(size=(n_x, n_u))
    return LinearModel(a_seq, b_seq)


def true_markov(model: LinearModel, k: int, j: int) -> np.ndarray:
    """Exact h_{k,j} = A_{k-1} ... A_{j+1} B_j of a LinearModel (C = I)."""
    a_k, b_k = model.matrices(j)
    block = b_k
    for i in range(j + 1, k):
        a_i, _ = model.matrices(i)
        block = a_i @ block
    return block


def zero_nominal(model, horizon: int) -> Trajectory:
    """All-zero nominal trajectory (the origin is an equilibrium of LinearModel)."""
    return Trajectory(states=np.zeros((horizon + 1, model.n_x)),
                      controls=np.zeros((horizon, model.n_u)))


def scalar_lti(a=0.5, b=1.0):
    return LinearModel(np.array([[a]]), np.array([[b]]))


def lqr_oracle(a, b, q, r_std, q_n, horizon):
    """Independent backward Riccati recursion (standard convention).

    Returns (gains, values): u = -gains[k] x optimal for
    sum x'qx + u' r_std u + terminal x' q_n x.
    """
    p = np.asarray(q_n, dtype=float).copy()
    gains, values = [], [p.copy()]
    for _ in range(horizon):
        s = r_std + b.T @ p @ b
        k = np.linalg.solve(s, b.T @ p @ a)
        p = q + a.T @ p @ (a - b @ k)
        p = 0.5 * (p + p.T)
        gains.append(k)
        values.append(p.copy())
    gains.reverse()
    values.reverse()
    return np.array(gains), np.array(values)

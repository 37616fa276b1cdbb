"""Time-varying ERA identification of the perturbation LTV system.

Input-output data comes from noise-free rollouts of the nonlinear model
around the nominal trajectory with small Gaussian input deviations. The
generalized Markov parameters are recovered by per-step least squares, then
each step's Hankel matrix pair is factored by SVD to produce a reduced-order
triple (A_k, B_k, C_k). With the system fully observed the outputs are the
state deviations themselves (C = I in the data generator); the estimator
handles general output dimensions.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .dynamics import BenchmarkModel, SimModel, Trajectory, rollout
from .errors import IdentificationError
from . import backend


class RankDeficiencyWarning(UserWarning):
    """Raised when the requested ROM order exceeds the numerical Hankel rank."""

    def __init__(self, message, spectrum=None):
        super().__init__(message)
        self.spectrum = spectrum


@dataclass
class RolloutDataset:
    """Input and output deviations from M perturbation experiments."""

    input_dev: np.ndarray   # (M, N, n_u)
    output_dev: np.ndarray  # (M, N + 1, n_y); row k is delta-y at step k
    sigma_pert: float

    @property
    def n_experiments(self) -> int:
        return self.input_dev.shape[0]

    @property
    def horizon(self) -> int:
        return self.input_dev.shape[1]

    @property
    def n_u(self) -> int:
        return self.input_dev.shape[2]

    @property
    def n_y(self) -> int:
        return self.output_dev.shape[2]


@dataclass
class MarkovParamSet:
    """Generalized Markov parameters h[k, j] (n_y x n_u blocks), 0 <= j < k <= N.

    Entries with j >= k are identically zero (causality). causality_residuals
    holds the norm of the estimated coefficient of the same-step input, which
    is zero for a causal system and acts as an estimation diagnostic.
    """

    horizon: int
    n_y: int
    n_u: int
    params: np.ndarray  # (N + 1, N, n_y, n_u)
    causality_residuals: np.ndarray = None

    def h(self, k: int, j: int) -> np.ndarray:
        if j >= k:
            return np.zeros((self.n_y, self.n_u))
        return self.params[k, j]


@dataclass
class LtvRom:
    """Identified reduced-order LTV triple over a window of steps.

    A_seq covers k in [k_lo, k_hi], B_seq covers [k_lo - 1, k_hi], C_seq
    covers [k_lo, k_hi + 1]; the accessors extend outside those ranges by
    nearest neighbor. singular_values[i] is the retained spectrum of the
    Hankel matrix at window step k_lo + i.
    """

    order: int
    horizon: int
    n_y: int
    n_u: int
    k_lo: int
    k_hi: int
    a_seq: np.ndarray          # (k_hi - k_lo + 1, n_r, n_r)
    b_seq: np.ndarray          # (k_hi - k_lo + 2, n_r, n_u)
    c_seq: np.ndarray          # (k_hi - k_lo + 2, n_y, n_r)
    singular_values: np.ndarray  # (k_hi - k_lo + 1, n_r)
    p: int = 0
    q: int = 0

    def a(self, k: int) -> np.ndarray:
        i = min(max(k, self.k_lo), self.k_hi) - self.k_lo
        return self.a_seq[i]

    def b(self, k: int) -> np.ndarray:
        i = min(max(k, self.k_lo - 1), self.k_hi) - (self.k_lo - 1)
        return self.b_seq[i]

    def c(self, k: int) -> np.ndarray:
        i = min(max(k, self.k_lo), self.k_hi + 1) - self.k_lo
        return self.c_seq[i]

    def markov(self, k: int, j: int) -> np.ndarray:
        """Reconstructed Markov parameter C_k A_{k-1} ... A_{j+1} B_j."""
        if j >= k:
            return np.zeros((self.n_y, self.n_u))
        block = self.b(j)
        for i in range(j + 1, k):
            block = self.a(i) @ block
        return self.c(k) @ block

    def simulate(self, input_dev: np.ndarray) -> np.ndarray:
        """Output deviations of the ROM for one input-deviation sequence (zero initial state)."""
        input_dev = np.atleast_2d(np.asarray(input_dev, dtype=float))
        N = len(input_dev)
        a_state = np.zeros(self.order)
        out = np.zeros((N + 1, self.n_y))
        for k in range(N):
            out[k] = self.c(k) @ a_state
            a_state = self.a(k) @ a_state + self.b(k) @ input_dev[k]
        out[N] = self.c(N) @ a_state
        return out


def default_perturbation_std(u_nominal) -> float:
    """Perturbation scale: 1% of nominal control RMS with a 1e-3 floor."""
    u = np.asarray(u_nominal, dtype=float)
    rms = float(np.sqrt(np.mean(u ** 2))) if u.size else 0.0
    return max(0.01 * rms, 1e-3)


def default_experiment_count(horizon: int, n_u: int) -> int:
    """Smallest over-determined experiment count: N * n_u plus margin."""
    return horizon * n_u + 50


def collect_rollouts(model: SimModel, nominal: Trajectory, n_experiments: int,
                     sigma_pert: float, seed: int) -> RolloutDataset:
    """Run noise-free perturbation rollouts around the nominal trajectory.

    Each experiment applies controls u_bar + du with du i.i.d. Gaussian of
    standard deviation sigma_pert; outputs are the full-state deviations from
    the nominal (delta-y equals delta-x in this fully observed setting).
    """
    if sigma_pert <= 0:
        raise ValueError("sigma_pert must be positive")
    N = nominal.horizon
    n_u = nominal.controls.shape[1]
    if n_experiments < N * n_u:
        raise ValueError(
            f"need at least N * n_u = {N * n_u} experiments for the least-squares "
            f"stack, got {n_experiments}")
    rng = np.random.default_rng([seed, 1])
    input_dev = sigma_pert * rng.standard_normal((n_experiments, N, n_u))
    x0 = nominal.states[0]
    if isinstance(model, BenchmarkModel):
        u_batch = np.ascontiguousarray(nominal.controls[None, :, :] + input_dev)
        states = backend.kernels().rollout_batch(
            model.kind, model.param_vector,
            np.ascontiguousarray(x0, dtype=float), u_batch, model.dt)
        output_dev = states - nominal.states[None, :, :]
    else:
        output_dev = np.empty((n_experiments, N + 1, model.n_x))
        for m in range(n_experiments):
            traj = rollout(model, x0, nominal.controls + input_dev[m])
            output_dev[m] = traj.states - nominal.states
    return RolloutDataset(input_dev=input_dev, output_dev=output_dev,
                          sigma_pert=float(sigma_pert))


def estimate_markov(data: RolloutDataset, tol: float = numerics.DEFAULT_PINV_TOL) -> MarkovParamSet:
    """Recover the generalized Markov parameters by per-step least squares.

    For each output step k the regressor stacks the input deviations from
    step min(k, N-1) down to 0; the leading block (same-step coefficient,
    zero for a causal system) is estimated and recorded as a residual
    diagnostic.
    """
    M, N, n_u = data.input_dev.shape
    n_y = data.n_y
    params = np.zeros((N + 1, N, n_y, n_u))
    causality = np.zeros(N + 1)
    # Rows of the full reversed stack: block b holds du_{N-1-b}; the stack
    # for step k is its trailing slice starting at block N-1-min(k, N-1).
    u_rev = np.concatenate(
        [data.input_dev[:, N - 1 - b, :] for b in range(N)], axis=1).T  # (N*n_u, M)
    for k in range(1, N + 1):
        top = min(k, N - 1)
        stack = u_rev[(N - 1 - top) * n_u:, :]
        y_k = data.output_dev[:, k, :].T  # (n_y, M)
        res = numerics.svd(stack)
        s = res.singular_values
        if s[0] == 0.0 or s[-1] <= tol * s[0]:
            raise IdentificationError(
                "input stack is rank-deficient; increase the experiment count "
                "or the perturbation scale", step=k)
        h_all = (y_k @ (res.right / s)) @ res.left.T  # (n_y, (top+1)*n_u)
        blocks = h_all.reshape(n_y, top + 1, n_u).transpose(1, 0, 2)
        for b, j in enumerate(range(top, -1, -1)):
            if j == k:
                causality[k] = np.linalg.norm(blocks[b])
            else:
                params[k, j] = blocks[b]
    return MarkovParamSet(horizon=N, n_y=n_y, n_u=n_u, params=params,
                          causality_residuals=causality)


def build_hankel(markov: MarkovParamSet, k: int, p: int, q: int) -> np.ndarray:
    """Generalized Hankel matrix at step k: block (i, l) = h_{k+i, k-1-l}.

    Blocks referring to inputs before the start of the horizon (j < 0) are
    zero-filled: the initial deviation is zero and no inputs exist there.
    """
    if k < 1:
        raise ValueError("Hankel index k must be >= 1")
    if k + p - 1 > markov.horizon:
        raise ValueError(
            f"window [k, k+p-1] = [{k}, {k + p - 1}] exceeds horizon {markov.horizon}")
    n_y, n_u = markov.n_y, markov.n_u
    out = np.zeros((p * n_y, q * n_u))
    for i in range(p):
        for l in range(q):
            j = k - 1 - l
            if j >= 0:
                out[i * n_y:(i + 1) * n_y, l * n_u:(l + 1) * n_u] = markov.h(k + i, j)
    return out


def _factor_hankel(h_mat: np.ndarray, n_r: int):
    """Split H = O R with O = U sqrt(S), R = sqrt(S) V', truncated to rank n_r."""
    res = numerics.svd(h_mat)
    s = res.singular_values
    if s[0] == 0.0:
        raise IdentificationError("Hankel matrix is zero; no dynamics to identify")
    if n_r > len(s) or s[n_r - 1] <= 1e-12 * s[0]:
        warnings.warn(RankDeficiencyWarning(
            f"requested order {n_r} exceeds the numerical Hankel rank",
            spectrum=s.copy()))
    sqrt_s = np.sqrt(s[:n_r])
    obs = res.left[:, :n_r] * sqrt_s
    ctrl = (res.right[:, :n_r] * sqrt_s).T
    return obs, ctrl, s[:n_r]


def era_step(h_k: np.ndarray, h_k1: np.ndarray, n_r: int, n_y: int, n_u: int):
    """One step of time-varying ERA on a consecutive Hankel pair.

    Factors H_k = O_k R_{k-1} and H_{k+1} = O_{k+1} R_k, then
    A_k = pinv(first (p-1) n_y rows of O_{k+1}) @ (last (p-1) n_y rows of O_k),
    B_k = first n_u columns of R_k, C_k = first n_y rows of O_k. The block
    dimensions (n_y, n_u) determine how the Hankel matrices are partitioned.
    """
    h_k = np.asarray(h_k, dtype=float)
    h_k1 = np.asarray(h_k1, dtype=float)
    if h_k.shape != h_k1.shape:
        raise ValueError("the two Hankel matrices must have identical shapes")
    p = h_k.shape[0] // n_y
    if p * n_y != h_k.shape[0]:
        raise ValueError(f"Hankel row count {h_k.shape[0]} is not a multiple of n_y={n_y}")
    if p < 2:
        raise ValueError("need at least p = 2 block rows to shift the observability factor")
    if n_r > min(h_k.shape):
        raise ValueError(f"order {n_r} exceeds the Hankel dimensions {h_k.shape}")
    obs_k, _ctrl_km1, _spec = _factor_hankel(h_k, n_r)
    obs_k1, ctrl_k, _spec1 = _factor_hankel(h_k1, n_r)
    a_k = _shift_solve(obs_k, obs_k1, p, n_y)
    return a_k, ctrl_k[:, :n_u].copy(), obs_k[:n_y].copy()


def _shift_solve(obs_k: np.ndarray, obs_k1: np.ndarray, p: int, n_y: int) -> np.ndarray:
    rows = (p - 1) * n_y
    return numerics.pinv(obs_k1[:rows]) @ obs_k[-rows:]


def default_block_counts(n_y: int, n_u: int, n_r: int = None):
    """ERA window sizes: twice the expected order, enlarged to fit n_r."""
    p = max(-(-2 * n_y // n_y), 2)
    q = max(-(-2 * n_y // n_u), 2)
    if n_r is not None:
        p = max(p, -(-n_r // n_y))
        q = max(q, -(-n_r // n_u))
        # the shifted observability factor needs (p-1) n_y >= n_r
        while (p - 1) * n_y < n_r:
            p += 1
    return p, q


def _select_order(spectrum: np.ndarray, energy: float = 0.9999) -> int:
    total = float(np.sum(spectrum ** 2))
    if total == 0.0:
        raise IdentificationError("Hankel matrix is zero; no dynamics to identify")
    cum = np.cumsum(spectrum ** 2) / total
    return int(np.searchsorted(cum, energy) + 1)


def identify_ltv(data: RolloutDataset, p: int = None, q: int = None,
                 n_r: int = None) -> LtvRom:
    """Full identification pass: Markov estimation, then per-step ERA.

    The identification window is k in [1, N - p]. When n_r is None the order
    is chosen once, at the first step whose Hankel window is fully populated
    (k = q), as the smallest count capturing 99.99% of singular-value energy,
    and held fixed across the horizon.
    """
    markov = estimate_markov(data)
    return realize_ltv(markov, p=p, q=q, n_r=n_r)


def realize_ltv(markov: MarkovParamSet, p: int = None, q: int = None,
                n_r: int = None) -> LtvRom:
    """ERA realization from an already-estimated Markov parameter set."""
    N, n_y, n_u = markov.horizon, markov.n_y, markov.n_u
    p_def, q_def = default_block_counts(n_y, n_u, n_r)
    p = p_def if p is None else p
    q = q_def if q is None else q
    k_lo, k_hi = 1, N - p
    if k_hi < k_lo:
        raise IdentificationError(
            f"identification window [1, N - p] = [1, {k_hi}] is empty; "
            f"reduce p or extend the horizon")
    if n_r is not None and (p * n_y < n_r or q * n_u < n_r):
        raise IdentificationError(
            f"Hankel blocks ({p} x {q}) too small for order {n_r}")
    if n_r is None:
        k_rank = min(max(q, 1), k_hi)
        probe = numerics.svd(build_hankel(markov, k_rank, p, q)).singular_values
        n_r = min(_select_order(probe), (p - 1) * n_y, q * n_u)
    window = range(k_lo, k_hi + 2)  # Hankels needed at k_lo .. k_hi + 1
    obs = {}
    ctrl = {}
    spectra = {}
    for k in window:
        try:
            obs[k], ctrl[k - 1], spectra[k] = _factor_hankel(
                build_hankel(markov, k, p, q), n_r)
        except IdentificationError as exc:
            raise IdentificationError(str(exc), step=k) from None
    n_steps = k_hi - k_lo + 1
    a_seq = np.empty((n_steps, n_r, n_r))
    b_seq = np.empty((n_steps + 1, n_r, n_u))
    c_seq = np.empty((n_steps + 1, n_y, n_r))
    sv = np.empty((n_steps, n_r))
    for i, k in enumerate(range(k_lo, k_hi + 1)):
        a_seq[i] = _shift_solve(obs[k], obs[k + 1], p, n_y)
        sv[i] = spectra[k]
    for i, k in enumerate(range(k_lo - 1, k_hi + 1)):
        b_seq[i] = ctrl[k][:, :n_u]
    for i, k in enumerate(range(k_lo, k_hi + 2)):
        c_seq[i] = obs[k][:n_y]
    return LtvRom(order=n_r, horizon=N, n_y=n_y, n_u=n_u, k_lo=k_lo, k_hi=k_hi,
                  a_seq=a_seq, b_seq=b_seq, c_seq=c_seq, singular_values=sv,
                  p=p, q=q)


def linearize_fd(model: SimModel, nominal: Trajectory, h: float = 1e-6):
    """Central-difference Jacobians (A_k, B_k) of the step map along the nominal.

    Test and analysis utility only; the identification pipeline never uses
    model derivatives.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    N = nominal.horizon
    n_x = nominal.states.shape[1]
    n_u = nominal.controls.shape[1]
    a_seq = np.empty((N, n_x, n_x))
    b_seq = np.empty((N, n_x, n_u))
    for k in range(N):
        x, u = nominal.states[k], nominal.controls[k]
        for i in range(n_x):
            dx = np.zeros(n_x)
            dx[i] = h
            a_seq[k][:, i] = (model.step(x + dx, u) - model.step(x - dx, u)) / (2 * h)
        for j in range(n_u):
            du = np.zeros(n_u)
            du[j] = h
            b_seq[k][:, j] = (model.step(x, u + du) - model.step(x, u - du)) / (2 * h)
    return a_seq, b_seq


def hessian_fd(model: SimModel, nominal: Trajectory, h: float = 1e-4) -> np.ndarray:
    """Second state derivatives of the step map along the nominal.

    Returns a (N, n_x, n_x, n_x) tensor T[k, i, a, b] = d^2 f_i / dx_a dx_b
    at (x_bar_k, u_bar_k); feeds the residual-curvature term of the value
    recursion's analysis path.
    """
    N = nominal.horizon
    n_x = nominal.states.shape[1]
    out = np.empty((N, n_x, n_x, n_x))
    for k in range(N):
        x, u = nominal.states[k], nominal.controls[k]
        f0 = model.step(x, u)
        for a in range(n_x):
            ea = np.zeros(n_x)
            ea[a] = h
            faa = (model.step(x + ea, u) - 2 * f0 + model.step(x - ea, u)) / (h * h)
            out[k, :, a, a] = faa
            for b in range(a + 1, n_x):
                eb = np.zeros(n_x)
                eb[b] = h
                fab = (model.step(x + ea + eb, u) - model.step(x + ea - eb, u)
                       - model.step(x - ea + eb, u) + model.step(x - ea - eb, u)) / (4 * h * h)
                out[k, :, a, b] = fab
                out[k, :, b, a] = fab
    return out


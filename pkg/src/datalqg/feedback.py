"""Costate and value recursions, time-varying LQR design, and Kalman gains.

The shipped pipeline designs an output-weighted LQR plus a Kalman filter on
the identified reduced-order model (lqr_tv / kalman_gains / build_policy).
riccati_theorem1 is the analysis path for the coupled costate-value
recursions; it needs model Jacobians (and Hessians for the residual term)
that the data-based flow never has.
"""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory
from .errors import DesignFailure
from .numerics import symmetrize
from .openloop import CostSpec
from .sysid import LtvRom


def costate_recursion(stage_gradients, a_seq, terminal_gradient) -> np.ndarray:
    """Backward costate sweep G_k = L_k + G_{k+1} A_k with G_N given.

    stage_gradients has one row per step k = 0..N-1; the result has N+1 rows
    (row vectors, index k = 0..N).
    """
    stage_gradients = np.atleast_2d(np.asarray(stage_gradients, dtype=float))
    a_seq = np.asarray(a_seq, dtype=float)
    terminal_gradient = np.asarray(terminal_gradient, dtype=float)
    N, n = stage_gradients.shape
    if a_seq.shape != (N, n, n):
        raise ValueError(f"expected A sequence of shape {(N, n, n)}, got {a_seq.shape}")
    out = np.empty((N + 1, n))
    out[N] = terminal_gradient
    for k in range(N - 1, -1, -1):
        out[k] = stage_gradients[k] + out[k + 1] @ a_seq[k]
    return out


@dataclass
class StationarityReport:
    """Per-step first-order optimality residuals || R u_k + (G_{k+1} B_k)' ||."""

    residuals: np.ndarray
    max_residual: float
    scale: float  # max_k || R u_k ||

    @property
    def relative(self) -> float:
        return self.max_residual / self.scale if self.scale > 0 else self.max_residual


def check_stationarity(nominal: Trajectory, cost: CostSpec, a_seq, b_seq) -> StationarityReport:
    """First-order optimality of a nominal under the given linearization.

    At an exact optimum R u_k + B_k' G_{k+1}' vanishes for every k; the
    returned residuals measure how far the supplied nominal is from that.
    """
    a_seq = np.asarray(a_seq, dtype=float)
    b_seq = np.asarray(b_seq, dtype=float)
    N = nominal.horizon
    grads = np.stack([cost.stage_gradient(nominal.states[k]) for k in range(N)])
    costates = costate_recursion(grads, a_seq, cost.terminal_gradient(nominal.states[N]))
    residuals = np.empty(N)
    scale = 0.0
    for k in range(N):
        ru = cost.r @ nominal.controls[k]
        residuals[k] = np.linalg.norm(ru + b_seq[k].T @ costates[k + 1])
        scale = max(scale, float(np.linalg.norm(ru)))
    return StationarityReport(residuals=residuals,
                              max_residual=float(residuals.max()),
                              scale=scale)


@dataclass
class RiccatiSolution:
    """Backward value sweep: P_k (symmetric), gains K_k, and inner matrices S_k."""

    value: np.ndarray   # (N + 1, n, n)
    gains: np.ndarray   # (N, n_u, n)
    inner: np.ndarray   # (N, n_u, n_u)


def _spd_solve(m: np.ndarray, rhs: np.ndarray, what: str, step: int) -> np.ndarray:
    try:
        c = np.linalg.cholesky(symmetrize(m))
    except np.linalg.LinAlgError:
        raise DesignFailure(f"{what} is not positive definite", step=step) from None
    y = np.linalg.solve(c, rhs)
    return np.linalg.solve(c.T, y)


def riccati_theorem1(a_seq, b_seq, stage_hessians, r, costates,
                     residual_hessians=None, p_terminal=None,
                     gain_form: str = "derived") -> RiccatiSolution:
    """Coupled value recursion along an optimal nominal.

    Runs S_k = R/2 + B_k' P_{k+1} B_k, a gain K_k, and the substituted
    value update

        P_k = L_kk + K_k' R K_k / 2 + (A_k + B_k K_k)' P_{k+1} (A_k + B_k K_k)
              + sum_i G_{k+1, i} * H_i

    where H is the second-derivative tensor of the dynamics (residual
    curvature; zero when residual_hessians is None). gain_form picks the gain
    convention: "derived" uses K_k = -S_k^{-1} B_k' P_{k+1} A_k, which is
    what minimizing the quadratic stage value gives and reproduces the
    standard LQR recursion when the residual term vanishes; "verbatim" uses
    K_k = -S_k^{-1} (2 B_k' P_{k+1} A_k), under which the grouped update
    P_k = L_kk + A_k' P_{k+1} A_k + G R~ is recovered identically (the
    remaining K-dependent terms cancel because S = R/2 + B' P B).
    """
    if gain_form not in ("derived", "verbatim"):
        raise ValueError(f"unknown gain_form {gain_form!r}")
    a_seq = np.asarray(a_seq, dtype=float)
    b_seq = np.asarray(b_seq, dtype=float)
    stage_hessians = np.asarray(stage_hessians, dtype=float)
    r = np.atleast_2d(np.asarray(r, dtype=float))
    costates = np.asarray(costates, dtype=float)
    N, n, _ = a_seq.shape
    n_u = b_seq.shape[2]
    if stage_hessians.ndim == 2:
        stage_hessians = np.broadcast_to(stage_hessians, (N, n, n))
    if p_terminal is None:
        raise ValueError("p_terminal is required")
    value = np.empty((N + 1, n, n))
    gains = np.empty((N, n_u, n))
    inner = np.empty((N, n_u, n_u))
    value[N] = symmetrize(np.asarray(p_terminal, dtype=float))
    factor = 2.0 if gain_form == "verbatim" else 1.0
    for k in range(N - 1, -1, -1):
        a, b = a_seq[k], b_seq[k]
        p_next = value[k + 1]
        s = 0.5 * r + b.T @ p_next @ b
        gain = -_spd_solve(s, factor * (b.T @ p_next @ a), "S_k", k)
        closed = a + b @ gain
        p = stage_hessians[k] + 0.5 * (gain.T @ r @ gain) + closed.T @ p_next @ closed
        if residual_hessians is not None:
            p = p + np.einsum("i,iab->ab", costates[k + 1], residual_hessians[k])
        value[k] = symmetrize(p)
        gains[k] = gain
        inner[k] = s
    return RiccatiSolution(value=value, gains=gains, inner=inner)


def lqr_tv(a_seq, b_seq, q, r, q_terminal):
    """Standard discrete time-varying LQR.

    q may be a single matrix or a per-step sequence. Returns (gains, value)
    with u_k = -gains[k] @ x_k the optimal feedback and value[k] the
    symmetric PSD cost-to-go matrix.
    """
    a_seq = np.asarray(a_seq, dtype=float)
    b_seq = np.asarray(b_seq, dtype=float)
    r = np.atleast_2d(np.asarray(r, dtype=float))
    N, n, _ = a_seq.shape
    n_u = b_seq.shape[2]
    q = np.asarray(q, dtype=float)
    if q.ndim == 2:
        q = np.broadcast_to(q, (N, n, n))
    value = np.empty((N + 1, n, n))
    gains = np.empty((N, n_u, n))
    value[N] = symmetrize(np.asarray(q_terminal, dtype=float))
    for k in range(N - 1, -1, -1):
        a, b = a_seq[k], b_seq[k]
        p_next = value[k + 1]
        gain = _spd_solve(r + b.T @ p_next @ b, b.T @ p_next @ a,
                          "R + B'PB", k)
        value[k] = symmetrize(q[k] + a.T @ p_next @ (a - b @ gain))
        gains[k] = gain
    return gains, value


@dataclass
class KalmanGains:
    """Forward time-varying Kalman recursion products."""

    gains: np.ndarray      # (N, n, n_y)
    cov_predicted: np.ndarray  # (N + 1, n, n)
    cov_filtered: np.ndarray   # (N, n, n)


def kalman_gains(a_seq, b_seq, c_seq, w_process, v_meas, p0) -> KalmanGains:
    """Time-varying Kalman filter design with process noise through the input map.

    The model is x_{k+1} = A x + B (u + w), y = C x + v with cov(w) =
    w_process and cov(v) = v_meas, so the predicted covariance propagates as
    A P A' + B W B'.
    """
    a_seq = np.asarray(a_seq, dtype=float)
    b_seq = np.asarray(b_seq, dtype=float)
    c_seq = np.asarray(c_seq, dtype=float)
    w_process = np.atleast_2d(np.asarray(w_process, dtype=float))
    v_meas = np.atleast_2d(np.asarray(v_meas, dtype=float))
    N, n, _ = a_seq.shape
    n_y = c_seq.shape[1]
    gains = np.empty((N, n, n_y))
    cov_pred = np.empty((N + 1, n, n))
    cov_filt = np.empty((N, n, n))
    cov_pred[0] = symmetrize(np.atleast_2d(np.asarray(p0, dtype=float)))
    eye = np.eye(n)
    for k in range(N):
        c = c_seq[k]
        innov = c @ cov_pred[k] @ c.T + v_meas
        try:
            gain = np.linalg.solve(symmetrize(innov), c @ cov_pred[k]).T
        except np.linalg.LinAlgError:
            raise DesignFailure("innovation covariance is singular", step=k) from None
        cov_filt[k] = symmetrize((eye - gain @ c) @ cov_pred[k])
        cov_pred[k + 1] = symmetrize(
            a_seq[k] @ cov_filt[k] @ a_seq[k].T
            + b_seq[k] @ w_process @ b_seq[k].T)
        gains[k] = gain
    return KalmanGains(gains=gains, cov_predicted=cov_pred, cov_filtered=cov_filt)


@dataclass
class FeedbackPolicy:
    """Nominal trajectory plus ROM feedback and filter gains (u = u_bar - L a_hat)."""

    u_nominal: np.ndarray       # (N, n_u)
    x_nominal: np.ndarray       # (N + 1, n_x)
    gains: np.ndarray           # (N, n_u, n_r)
    kalman: KalmanGains
    rom: LtvRom

    @property
    def horizon(self) -> int:
        return len(self.u_nominal)

    @property
    def order(self) -> int:
        return self.rom.order


def rom_from_matrices(a, b, c=None, horizon: int = None) -> LtvRom:
    """Wrap exactly-known (possibly time-invariant) system matrices as an LtvRom.

    Useful for direct LQG design on a known plant and for tests; with
    time-invariant matrices the nearest-neighbor window extension is exact.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 2:
        if horizon is None:
            raise ValueError("horizon is required with time-invariant matrices")
        a = np.broadcast_to(a, (horizon, *a.shape)).copy()
        b = np.broadcast_to(b, (horizon, *b.shape)).copy()
    N = len(a)
    n = a.shape[1]
    n_u = b.shape[2]
    if c is None:
        c = np.broadcast_to(np.eye(n), (N + 1, n, n)).copy()
    else:
        c = np.asarray(c, dtype=float)
        if c.ndim == 2:
            c = np.broadcast_to(c, (N + 1, *c.shape)).copy()
    n_y = c.shape[1]
    # window [0, N-1]; pad the front of B so the index math of LtvRom holds
    b_seq = np.concatenate([b[:1], b], axis=0)
    sv = np.ones((N, min(n, 1)))
    return LtvRom(order=n, horizon=N, n_y=n_y, n_u=n_u, k_lo=0, k_hi=N - 1,
                  a_seq=a, b_seq=b_seq, c_seq=c, singular_values=sv)


def build_policy(nominal: Trajectory, rom: LtvRom, q_state, r_control,
                 v_meas=None, w_process=None, p0=1e-2,
                 q_state_terminal=None) -> FeedbackPolicy:
    """Assemble the tracking policy: LQR gains and Kalman gains on the ROM.

    q_state and q_state_terminal weight the measured outputs, so they are
    mapped into ROM coordinates through the output matrices (C' Q C); this
    keeps the design invariant to the ROM's internal coordinates. The filter
    starts from a-hat = 0 with predicted covariance p0 * I.
    """
    N = nominal.horizon
    n_u = nominal.controls.shape[1]
    n_y = rom.n_y
    n_r = rom.order
    q_state = _expand(q_state, n_y)
    q_term = q_state if q_state_terminal is None else _expand(q_state_terminal, n_y)
    r_control = _expand(r_control, n_u)
    v = _expand(1e-8 if v_meas is None else v_meas, n_y)
    w = _expand(1e-2 if w_process is None else w_process, n_u)
    a_seq = np.stack([rom.a(k) for k in range(N)])
    b_seq = np.stack([rom.b(k) for k in range(N)])
    c_seq = np.stack([rom.c(k) for k in range(N + 1)])
    q_seq = np.stack([c_seq[k].T @ q_state @ c_seq[k] for k in range(N)])
    q_terminal = c_seq[N].T @ q_term @ c_seq[N]
    gains, _value = lqr_tv(a_seq, b_seq, q_seq, r_control, q_terminal)
    p0_mat = p0 * np.eye(n_r) if np.isscalar(p0) else np.asarray(p0, dtype=float)
    kalman = kalman_gains(a_seq, b_seq, c_seq[:N], w, v, p0_mat)
    return FeedbackPolicy(u_nominal=nominal.controls.copy(),
                          x_nominal=nominal.states.copy(),
                          gains=gains, kalman=kalman, rom=rom)


def _expand(value, n: int) -> np.ndarray:
    if np.isscalar(value):
        return float(value) * np.eye(n)
    value = np.atleast_2d(np.asarray(value, dtype=float))
    if value.shape == (1, 1) and n != 1:
        return float(value[0, 0]) * np.eye(n)
    return value

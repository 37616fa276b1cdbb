"""Closed-loop execution, Monte Carlo sweeps over noise levels, and tail checks.

Every run owns a private noise stream derived from (master seed, stream id,
run index), so reports are bit-reproducible and independent of scheduling or
batch splits. Runs at different noise levels share the same underlying
standard-normal draws scaled by the level (common random numbers), which is
also what makes the paired ranking check meaningful.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import LinearModel, SimModel, Trajectory
from .errors import DataLqgError
from .feedback import FeedbackPolicy
from .openloop import CostSpec

_STREAM_MC = 3
_STREAM_TAIL = 4
_STREAM_RANK = 5


@dataclass(frozen=True)
class NoiseSetting:
    """Process-noise level: nsr is relative to the nominal control RMS, eps absolute."""

    nsr: float
    eps: float
    seed: int = 0


def nsr_to_noise(nsr: float, u_nominal, seed: int = 0) -> NoiseSetting:
    """Per-step noise standard deviation nsr * RMS(u_bar), packaged with the seed."""
    if nsr < 0:
        raise ValueError("nsr must be >= 0")
    u = np.asarray(u_nominal, dtype=float)
    rms = float(np.sqrt(np.mean(u ** 2))) if u.size else 0.0
    return NoiseSetting(nsr=float(nsr), eps=float(nsr) * rms, seed=seed)


@dataclass
class ClosedLoopResult:
    trajectory: Trajectory
    cost: float
    max_deviation: float
    terminal_error: float


def _run(model: SimModel, policy: FeedbackPolicy, cost: CostSpec,
         eps: float, normals: np.ndarray, feedback: bool) -> ClosedLoopResult:
    N = policy.horizon
    rom = policy.rom
    n_x = policy.x_nominal.shape[1]
    states = np.empty((N + 1, n_x))
    controls = np.empty_like(policy.u_nominal)
    x = policy.x_nominal[0].copy()
    states[0] = x
    a_hat = np.zeros(rom.order)
    max_dev = 0.0
    is_linear = isinstance(model, LinearModel)
    for k in range(N):
        u = policy.u_nominal[k]
        if feedback:
            dy = x - policy.x_nominal[k]
            c_k = rom.c(k)
            a_filt = a_hat + policy.kalman.gains[k] @ (dy - c_k @ a_hat)
            du = -(policy.gains[k] @ a_filt)
            u = u + du
            a_hat = rom.a(k) @ a_filt + rom.b(k) @ du
        controls[k] = u
        w = eps * normals[k] if eps > 0 else None
        x = model.step(x, u, w, k=k) if is_linear else model.step(x, u, w)
        states[k + 1] = x
        dev = float(np.linalg.norm(x - policy.x_nominal[k + 1]))
        if dev > max_dev:
            max_dev = dev
    traj = Trajectory(states=states, controls=controls)
    realized = cost.trajectory_cost(states, controls)
    terminal_error = float(np.linalg.norm(states[N] - cost.target))
    return ClosedLoopResult(trajectory=traj, cost=realized,
                            max_deviation=max_dev, terminal_error=terminal_error)


def _normals(seed: int, stream: int, run_index: int, shape) -> np.ndarray:
    return np.random.default_rng([seed, stream, run_index]).standard_normal(shape)


def run_closed_loop(model: SimModel, policy: FeedbackPolicy, cost: CostSpec,
                    noise: NoiseSetting, run_index: int = 0) -> ClosedLoopResult:
    """Execute the tracking policy under process noise.

    Per step: measure the state deviation, Kalman-update the ROM estimate,
    apply u = u_bar - L a_hat, and step the model with noise injected through
    the control channel. At eps = 0 the estimate stays at zero and the run
    reproduces the nominal trajectory exactly.
    """
    normals = _normals(noise.seed, _STREAM_MC, run_index,
                       (policy.horizon, policy.u_nominal.shape[1]))
    return _run(model, policy, cost, noise.eps, normals, feedback=True)


def run_open_loop_only(model: SimModel, policy: FeedbackPolicy, cost: CostSpec,
                       noise: NoiseSetting, run_index: int = 0) -> ClosedLoopResult:
    """Baseline: replay the nominal controls under the same noise, gains forced to zero."""
    normals = _normals(noise.seed, _STREAM_MC, run_index,
                       (policy.horizon, policy.u_nominal.shape[1]))
    return _run(model, policy, cost, noise.eps, normals, feedback=False)


@dataclass
class MonteCarloRow:
    nsr: float
    eps: float
    n_runs: int
    n_failures: int
    mean_cost: float
    std_cost: float
    success_rate: float
    mean_max_deviation: float


@dataclass
class MonteCarloReport:
    rows: list
    success_threshold: float
    retained: dict = field(default_factory=dict)  # nsr -> list of per-run tuples


def monte_carlo(model: SimModel, policy: FeedbackPolicy, cost: CostSpec,
                nsr_grid, n_runs: int, seed: int, success_threshold: float = 0.1,
                run_offset: int = 0, retain_runs: bool = False,
                open_loop: bool = False) -> MonteCarloReport:
    """Independent seeded closed-loop runs over a grid of noise-to-signal ratios.

    Run i uses the noise stream keyed by (seed, run_offset + i) at every grid
    point, so splitting a batch by run_offset and pooling reproduces the
    single-batch statistics exactly. Individual run failures are recorded,
    not fatal.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    shape = (policy.horizon, policy.u_nominal.shape[1])
    rows = []
    retained = {}
    for nsr in nsr_grid:
        setting = nsr_to_noise(nsr, policy.u_nominal, seed)
        costs, devs, succ = [], [], []
        failures = 0
        per_run = []
        for i in range(n_runs):
            normals = _normals(seed, _STREAM_MC, run_offset + i, shape)
            try:
                res = _run(model, policy, cost, setting.eps, normals,
                           feedback=not open_loop)
            except DataLqgError:
                failures += 1
                per_run.append((math.nan, math.nan, math.nan))
                continue
            costs.append(res.cost)
            devs.append(res.max_deviation)
            succ.append(res.terminal_error < success_threshold)
            per_run.append((res.cost, res.max_deviation, res.terminal_error))
        ok = len(costs)
        rows.append(MonteCarloRow(
            nsr=float(nsr), eps=setting.eps, n_runs=n_runs, n_failures=failures,
            mean_cost=float(np.mean(costs)) if ok else math.nan,
            std_cost=float(np.std(costs, ddof=1)) if ok > 1 else 0.0,
            success_rate=float(np.mean(succ)) if ok else 0.0,
            mean_max_deviation=float(np.mean(devs)) if ok else math.nan))
        if retain_runs:
            retained[float(nsr)] = per_run
    return MonteCarloReport(rows=rows, success_threshold=success_threshold,
                            retained=retained)


@dataclass
class TailEstimate:
    """Empirical large-deviation tail Prob(max_k ||dx_k|| > M) over a noise grid.

    The fit regresses log p on 1/eps^2 (excluding censored points), matching
    the exponential bound alpha * (eps / M) * exp(-beta M^2 / eps^2): the
    slope gives beta_hat = -slope / M^2 and the intercept absorbs the slowly
    varying prefactor into alpha_hat.
    """

    eps_grid: np.ndarray
    probabilities: np.ndarray
    censored: np.ndarray  # True where no exceedance was observed
    threshold: float
    n_runs: int
    slope: float
    alpha_hat: float
    beta_hat: float
    r_squared: float


def deviation_tail(model: SimModel, policy: FeedbackPolicy, cost: CostSpec,
                   eps_grid, threshold: float, n_runs: int, seed: int) -> TailEstimate:
    """Estimate exceedance probabilities of the max state deviation per noise level.

    Levels with zero observed exceedances are censored (upper bound 1/n_runs)
    and excluded from the log-probability fit.
    """
    eps_grid = np.asarray(sorted(float(e) for e in eps_grid))
    if len(eps_grid) and eps_grid[0] <= 0:
        raise ValueError("eps grid must be positive")
    if n_runs < 100:
        raise ValueError("need at least 100 runs per grid point")
    shape = (policy.horizon, policy.u_nominal.shape[1])
    probs = np.empty(len(eps_grid))
    all_normals = [_normals(seed, _STREAM_TAIL, i, shape) for i in range(n_runs)]
    for gi, eps in enumerate(eps_grid):
        exceed = 0
        for i in range(n_runs):
            res = _run(model, policy, cost, eps, all_normals[i], feedback=True)
            if res.max_deviation > threshold:
                exceed += 1
        probs[gi] = exceed / n_runs
    censored = probs == 0.0
    keep = ~censored
    slope = alpha_hat = beta_hat = r2 = math.nan
    if keep.sum() >= 2:
        x = 1.0 / eps_grid[keep] ** 2
        y = np.log(probs[keep])
        slope, intercept = np.polyfit(x, y, 1)
        fitted = slope * x + intercept
        ss_res = float(np.sum((y - fitted) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        alpha_hat = math.exp(intercept)
        beta_hat = -slope / threshold ** 2
    return TailEstimate(eps_grid=eps_grid, probabilities=probs,
                        censored=censored, threshold=threshold, n_runs=n_runs,
                        slope=float(slope), alpha_hat=float(alpha_hat),
                        beta_hat=float(beta_hat), r_squared=float(r2))


@dataclass
class RankingReport:
    """Paired-run ordering preservation between two policies."""

    eps: float
    n_runs: int
    nominal_cost_1: float
    nominal_cost_2: float
    preserved_fraction: float


def ranking_check(model: SimModel, cost: CostSpec, policy1: FeedbackPolicy,
                  policy2: FeedbackPolicy, eps: float, n_runs: int,
                  seed: int) -> RankingReport:
    """Fraction of paired runs where policy 1's realized cost stays below policy 2's.

    Both policies see identical noise draws per run (common random numbers);
    ties count as one half, so two identical policies score exactly 0.5.
    """
    j1 = cost.trajectory_cost(policy1.x_nominal, policy1.u_nominal)
    j2 = cost.trajectory_cost(policy2.x_nominal, policy2.u_nominal)
    shape = (policy1.horizon, policy1.u_nominal.shape[1])
    wins = 0.0
    for i in range(n_runs):
        normals = _normals(seed, _STREAM_RANK, i, shape)
        r1 = _run(model, policy1, cost, eps, normals, feedback=True)
        r2 = _run(model, policy2, cost, eps, normals, feedback=True)
        if r1.cost < r2.cost:
            wins += 1.0
        elif r1.cost == r2.cost:
            wins += 0.5
    return RankingReport(eps=float(eps), n_runs=n_runs,
                         nominal_cost_1=j1, nominal_cost_2=j2,
                         preserved_fraction=wins / n_runs)

"""Model-free open-loop trajectory optimization producing the nominal (u_bar, x_bar).

The optimizer touches the model only through full-rollout cost evaluations:
gradients are forward finite differences over the N * n_u control
coordinates, so every iteration costs N * n_u + O(1) simulated rollouts. Two
drivers share that evaluator: a fixed-step/backtracking gradient descent and
an L-BFGS driver for the stiffer swing-up problems (plain descent stalls on
them long before the stationarity tolerance is reached).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import backend
from .dynamics import BenchmarkModel, SimModel, rollout
from .errors import OptimizationFailure

ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 60


@dataclass
class CostSpec:
    """Quadratic cost c(x, u) = (x-t)' Q_inc (x-t) + 0.5 u' R u, terminal (x-t)' Q_N (x-t)."""

    q_inc: np.ndarray
    r: np.ndarray
    q_terminal: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        self.q_inc = np.atleast_2d(np.asarray(self.q_inc, dtype=float))
        self.r = np.atleast_2d(np.asarray(self.r, dtype=float))
        self.q_terminal = np.atleast_2d(np.asarray(self.q_terminal, dtype=float))
        self.target = np.atleast_1d(np.asarray(self.target, dtype=float))
        for name, m in (("q_inc", self.q_inc), ("r", self.r),
                        ("q_terminal", self.q_terminal)):
            if not np.allclose(m, m.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        for name, m in (("q_inc", self.q_inc), ("q_terminal", self.q_terminal)):
            if np.linalg.eigvalsh(m).min() < -1e-10:
                raise ValueError(f"{name} must be positive semi-definite")
        if np.linalg.eigvalsh(self.r).min() <= 0:
            raise ValueError("r must be positive definite")

    @property
    def n_x(self) -> int:
        return self.q_inc.shape[0]

    @property
    def n_u(self) -> int:
        return self.r.shape[0]

    def stage_cost(self, x, u) -> float:
        d = np.asarray(x, dtype=float) - self.target
        u = np.asarray(u, dtype=float)
        return float(d @ self.q_inc @ d + 0.5 * (u @ self.r @ u))

    def terminal_cost(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.target
        return float(d @ self.q_terminal @ d)

    def trajectory_cost(self, states, controls) -> float:
        states = np.asarray(states, dtype=float)
        controls = np.atleast_2d(np.asarray(controls, dtype=float))
        total = 0.0
        for k in range(len(controls)):
            total += self.stage_cost(states[k], controls[k])
        return total + self.terminal_cost(states[-1])

    # Expansion terms along a nominal: l(x) = (x-t)' Q (x-t) has gradient
    # 2 Q (x-t) and quadratic coefficient Q (no 1/2 factor in the form used
    # by the costate and value recursions).
    def stage_gradient(self, x) -> np.ndarray:
        return 2.0 * self.q_inc @ (np.asarray(x, dtype=float) - self.target)

    def terminal_gradient(self, x) -> np.ndarray:
        return 2.0 * self.q_terminal @ (np.asarray(x, dtype=float) - self.target)


@dataclass
class OptimizerConfig:
    """Descent parameters: step size, FD perturbation, tolerance, iteration cap.

    fd_step is relative to the control scale: the absolute perturbation is
    fd_step * max(1, rms(U)). tolerance is on the 2-norm of the full
    finite-difference gradient (the convergence epsilon, distinct from the
    process-noise scale).
    """

    step_size: float = 1e-2
    fd_step: float = 1e-4
    tolerance: float = 1e-3
    max_iterations: int = 1000
    backtracking: bool = True
    method: str = "gd"  # "gd" or "lbfgs"
    threads: int = 1

    def __post_init__(self):
        if self.step_size <= 0 or self.fd_step <= 0 or self.tolerance <= 0:
            raise ValueError("step_size, fd_step and tolerance must be positive")
        if self.method not in ("gd", "lbfgs"):
            raise ValueError(f"unknown optimizer method {self.method!r}")


@dataclass
class RolloutCounter:
    """Counts simulated rollouts (the learning-trials unit)."""

    rollouts: int = 0

    def add(self, n: int = 1):
        self.rollouts += n


@dataclass
class OptimizeResult:
    controls: np.ndarray
    states: np.ndarray
    cost: float
    cost_history: list
    grad_norm_history: list
    rollout_history: list  # cumulative rollouts after each recorded iteration
    iterations: int
    converged: bool
    status: str
    total_rollouts: int


def _cost_args(model: BenchmarkModel, cost: CostSpec):
    return (model.kind, model.param_vector), (
        np.ascontiguousarray(cost.q_inc), np.ascontiguousarray(cost.r),
        np.ascontiguousarray(cost.q_terminal), np.ascontiguousarray(cost.target))


def evaluate_cost(model: SimModel, cost: CostSpec, x0, controls,
                  counter: RolloutCounter = None) -> float:
    """Total cost along the noise-free rollout of a control sequence."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if counter is not None:
        counter.add(1)
    if isinstance(model, BenchmarkModel):
        (kind, pv), (qi, r, qn, t) = _cost_args(model, cost)
        return backend.kernels().rollout_cost(
            kind, pv, np.ascontiguousarray(x0, dtype=float),
            np.ascontiguousarray(controls), model.dt, qi, r, qn, t)
    traj = rollout(model, x0, controls)
    return cost.trajectory_cost(traj.states, traj.controls)


def fd_gradient(model: SimModel, cost: CostSpec, x0, controls, h: float,
                threads: int = 1, counter: RolloutCounter = None) -> np.ndarray:
    """Forward-difference gradient of the rollout cost w.r.t. every control entry.

    Costs exactly N * n_u + 1 rollouts; the perturbation rollouts are
    independent and run in parallel on the compiled backend.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    N, n_u = controls.shape
    if counter is not None:
        counter.add(N * n_u + 1)
    if isinstance(model, BenchmarkModel):
        (kind, pv), (qi, r, qn, t) = _cost_args(model, cost)
        grad, _ = backend.kernels().fd_gradient(
            kind, pv, np.ascontiguousarray(x0, dtype=float),
            np.ascontiguousarray(controls), model.dt, qi, r, qn, t, h,
            threads)
        return grad
    base = evaluate_cost(model, cost, x0, controls)
    grad = np.empty_like(controls)
    for i in range(N):
        for j in range(n_u):
            bumped = controls.copy()
            bumped[i, j] += h
            grad[i, j] = (evaluate_cost(model, cost, x0, bumped) - base) / h
    return grad


def _fd_scale(config: OptimizerConfig, controls: np.ndarray) -> float:
    rms = float(np.sqrt(np.mean(controls ** 2))) if controls.size else 0.0
    return config.fd_step * max(1.0, rms)


class _Converged(Exception):
    def __init__(self, controls, grad_norm):
        self.controls = controls
        self.grad_norm = grad_norm


def gradient_descent(model: SimModel, cost: CostSpec, x0, initial_controls,
                     config: OptimizerConfig = None) -> OptimizeResult:
    """Minimize the rollout cost over the control sequence.

    Iterates until the finite-difference gradient norm drops below
    config.tolerance or the iteration cap is reached; returns the best
    iterate seen. With backtracking enabled the cost history is
    non-increasing. A diverging fixed-step run raises OptimizationFailure
    carrying the last finite iterate.
    """
    config = config or OptimizerConfig()
    x0 = np.asarray(x0, dtype=float)
    U = np.atleast_2d(np.asarray(initial_controls, dtype=float)).copy()
    if config.method == "lbfgs":
        return _lbfgs_descent(model, cost, x0, U, config)
    return _plain_descent(model, cost, x0, U, config)


def _plain_descent(model, cost, x0, U, config) -> OptimizeResult:
    counter = RolloutCounter()
    J = evaluate_cost(model, cost, x0, U, counter)
    if not np.isfinite(J):
        raise OptimizationFailure("initial cost is not finite")
    costs, gnorms, rolls = [], [], []
    best_U, best_J = U.copy(), J
    alpha = config.step_size
    status = "max-iterations"
    converged = False
    iterations = 0
    for it in range(config.max_iterations + 1):
        h = _fd_scale(config, U)
        g = fd_gradient(model, cost, x0, U, h, config.threads, counter)
        gn = float(np.linalg.norm(g))
        costs.append(J)
        gnorms.append(gn)
        rolls.append(counter.rollouts)
        iterations = it
        if gn < config.tolerance:
            status, converged = "converged", True
            break
        if it == config.max_iterations:
            break
        if config.backtracking:
            a, accepted, bt = alpha, False, 0
            for bt in range(MAX_BACKTRACKS):
                U_new = U - a * g
                J_new = evaluate_cost(model, cost, x0, U_new, counter)
                if np.isfinite(J_new) and J_new <= J - ARMIJO_C1 * a * gn * gn:
                    accepted = True
                    break
                a *= 0.5
            if not accepted:
                status = "stalled"
                break
            U, J = U_new, J_new
            alpha = a * 2.0 if bt == 0 else a
        else:
            U = U - alpha * g
            J = evaluate_cost(model, cost, x0, U, counter)
            if not np.isfinite(J):
                raise OptimizationFailure(
                    "cost diverged under fixed-step descent",
                    last_controls=best_U, last_cost=best_J)
        if J < best_J:
            best_U, best_J = U.copy(), J
    if J < best_J:
        best_U, best_J = U.copy(), J
    traj = rollout(model, x0, best_U)
    return OptimizeResult(
        controls=best_U, states=traj.states, cost=best_J,
        cost_history=costs, grad_norm_history=gnorms, rollout_history=rolls,
        iterations=iterations, converged=converged, status=status,
        total_rollouts=counter.rollouts)


def _lbfgs_descent(model, cost, x0, U0, config) -> OptimizeResult:
    counter = RolloutCounter()
    shape = U0.shape
    costs, gnorms, rolls = [], [], []
    # L-BFGS-B evaluates fun and jac together at every trial point; the last
    # evaluation of a line search is the accepted iterate, so `last` holds
    # the values belonging to xk when the per-iteration callback fires.
    last = {"J": None, "g": None}

    def fun(uflat):
        J = evaluate_cost(model, cost, x0, uflat.reshape(shape), counter)
        last["J"] = J
        # L-BFGS-B cannot digest non-finite trial costs; a huge finite value
        # makes its line search back off instead.
        return J if np.isfinite(J) else 1e300

    def jac(uflat):
        U = uflat.reshape(shape)
        h = _fd_scale(config, U)
        g = fd_gradient(model, cost, x0, U, h, config.threads, counter)
        gn = float(np.linalg.norm(g))
        last["g"] = gn
        if gn < config.tolerance:
            raise _Converged(U.copy(), gn)
        return g.ravel()

    def record(_xk):
        costs.append(last["J"])
        gnorms.append(last["g"])
        rolls.append(counter.rollouts)

    converged = False
    status = "max-iterations"
    try:
        res = scipy.optimize.minimize(
            fun, U0.ravel(), jac=jac, method="L-BFGS-B", callback=record,
            options=dict(maxiter=config.max_iterations, ftol=1e-16,
                         gtol=1e-12, maxcor=30))
        best_U = res.x.reshape(shape)
        iterations = int(res.nit)
        if res.status == 0:
            # scipy's own convergence (flat progress) without hitting our
            # gradient tolerance
            status = "stalled"
    except _Converged as c:
        best_U = c.controls
        iterations = len(gnorms)
        status, converged = "converged", True
        costs.append(last["J"])
        gnorms.append(last["g"])
        rolls.append(counter.rollouts)
    best_J = evaluate_cost(model, cost, x0, best_U, counter)
    traj = rollout(model, x0, best_U)
    return OptimizeResult(
        controls=best_U, states=traj.states, cost=best_J,
        cost_history=costs, grad_norm_history=gnorms, rollout_history=rolls,
        iterations=iterations, converged=converged, status=status,
        total_rollouts=counter.rollouts)

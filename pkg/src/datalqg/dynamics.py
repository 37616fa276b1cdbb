"""Benchmark simulation models exposed through a black-box step interface.

The swing-up benchmarks (cart-pole, cart-two-pole, acrobot) use the standard
Lagrangian equations of motion with point masses at the link tips, integrated
with RK4. Angles are measured from the upright position so every target state
is the zero vector. Process noise enters additively through the control
channel: next = f(x, u + noise_scale * w).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import ConfigError, NumericalFailure


@dataclass(frozen=True)
class CartPoleParams:
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_length: float = 0.5
    gravity: float = 9.81

    def vector(self) -> np.ndarray:
        return np.array([self.cart_mass, self.pole_mass, self.pole_length,
                         self.gravity])


@dataclass(frozen=True)
class CartTwoPoleParams:
    cart_mass: float = 0.15
    mass_1: float = 0.6
    mass_2: float = 0.5
    length_1: float = 0.6
    length_2: float = 0.5
    gravity: float = 9.81

    def vector(self) -> np.ndarray:
        return np.array([self.cart_mass, self.mass_1, self.mass_2,
                         self.length_1, self.length_2, self.gravity])


@dataclass(frozen=True)
class AcrobotParams:
    mass_1: float = 1.0
    mass_2: float = 1.0
    length_1: float = 0.5
    length_2: float = 0.5
    friction_1: float = 0.05
    friction_2: float = 0.05
    gravity: float = 9.81

    def vector(self) -> np.ndarray:
        return np.array([self.mass_1, self.mass_2, self.length_1,
                         self.length_2, self.friction_1, self.friction_2,
                         self.gravity])


@dataclass
class Trajectory:
    """Time-indexed state and control sequences over a horizon of N steps."""

    states: np.ndarray   # (N + 1, n_x)
    controls: np.ndarray  # (N, n_u)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.states.ndim != 2 or self.controls.ndim != 2:
            raise ValueError("states and controls must be 2-d arrays")
        if len(self.states) != len(self.controls) + 1:
            raise ValueError(
                f"expected len(states) == len(controls) + 1, got "
                f"{len(self.states)} and {len(self.controls)}"
            )

    @property
    def horizon(self) -> int:
        return len(self.controls)


class SimModel:
    """Discrete-time simulation model: x_{k+1} = step(x_k, u_k, w_k).

    step is deterministic given (x, u, w); w is a zero-mean noise sample with
    covariance noise_cov, scaled by noise_scale and injected through the
    control channel.
    """

    n_x: int
    n_u: int
    dt: float
    noise_scale: float
    noise_cov: np.ndarray

    def step(self, x, u, w=None):
        raise NotImplementedError


class BenchmarkModel(SimModel):
    """One of the built-in mechanical benchmarks, backed by the kernel module."""

    def __init__(self, name, kind, params, dt, noise_scale=1.0, noise_cov=None):
        if dt <= 0:
            raise ConfigError("dt must be positive")
        self.name = name
        self.kind = kind
        self.params = params
        self.param_vector = np.ascontiguousarray(params.vector())
        self.dt = float(dt)
        self.n_x = backend.kernels().state_dim(kind)
        self.n_u = 1
        self.noise_scale = float(noise_scale)
        self.noise_cov = np.eye(self.n_u) if noise_cov is None else np.asarray(noise_cov, dtype=float)

    def deriv(self, x, u) -> np.ndarray:
        """Continuous-time state derivative."""
        out = backend.kernels().deriv(
            self.kind, self.param_vector,
            np.ascontiguousarray(x, dtype=float),
            np.ascontiguousarray(u, dtype=float))
        if not np.all(np.isfinite(out)):
            raise NumericalFailure("non-finite state derivative")
        return out

    def step(self, x, u, w=None):
        u = np.ascontiguousarray(u, dtype=float)
        if w is not None:
            u = u + self.noise_scale * np.asarray(w, dtype=float)
        return backend.kernels().step(
            self.kind, self.param_vector,
            np.ascontiguousarray(x, dtype=float), u, self.dt)


class LinearModel(SimModel):
    """Discrete linear (time-varying) model x_{k+1} = A_k x + B_k (u + scale * w).

    Used for the built-in validation system and as an exactly-known test
    plant. A and B may be single matrices or length-N sequences.
    """

    def __init__(self, a, b, dt=1.0, noise_scale=1.0, noise_cov=None):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        self._time_varying = a.ndim == 3
        if self._time_varying:
            if b.ndim != 3 or len(a) != len(b):
                raise ValueError("time-varying A and B must have equal length")
        self.a = a
        self.b = b
        self.n_x = a.shape[-1]
        self.n_u = b.shape[-1]
        self.dt = float(dt)
        self.noise_scale = float(noise_scale)
        self.noise_cov = np.eye(self.n_u) if noise_cov is None else np.asarray(noise_cov, dtype=float)

    def matrices(self, k: int):
        if self._time_varying:
            return self.a[k], self.b[k]
        return self.a, self.b

    def step(self, x, u, w=None, k: int = 0):
        a, b = self.matrices(k)
        u = np.asarray(u, dtype=float)
        if w is not None:
            u = u + self.noise_scale * np.asarray(w, dtype=float)
        return a @ np.asarray(x, dtype=float) + b @ u


def cartpole_step(params: CartPoleParams, x, u) -> np.ndarray:
    """Continuous-time derivative of the cart-pole equations of motion."""
    return _deriv(backend.kernels().KIND_CARTPOLE, params.vector(), x, u)


def cart2pole_step(params: CartTwoPoleParams, x, u) -> np.ndarray:
    """Continuous-time derivative of the cart-two-pole equations of motion."""
    return _deriv(backend.kernels().KIND_CART2POLE, params.vector(), x, u)


def acrobot_step(params: AcrobotParams, x, u) -> np.ndarray:
    """Continuous-time derivative of the acrobot equations of motion."""
    return _deriv(backend.kernels().KIND_ACROBOT, params.vector(), x, u)


def _deriv(kind, param_vector, x, u):
    out = backend.kernels().deriv(
        kind, np.ascontiguousarray(param_vector, dtype=float),
        np.ascontiguousarray(x, dtype=float),
        np.ascontiguousarray(u, dtype=float))
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite state derivative")
    return out


# Benchmark registry: paper-stated initial states, horizons, and parameters.
# The "linear" entry is the built-in validation system used by the toy
# optimizer tests and the large-deviation checks.
BENCHMARK_NAMES = ("cartpole", "cart2pole", "acrobot", "linear")

_BENCHMARK_META = {
    "cartpole": dict(
        kind=0,
        params=CartPoleParams(),
        initial_state=(0.0, math.pi / 4, 0.0, 0.0),
        horizon_seconds=3.5,
    ),
    "cart2pole": dict(
        kind=1,
        params=CartTwoPoleParams(),
        initial_state=(0.0, math.pi / 4, math.pi / 4, 0.0, 0.0, 0.0),
        horizon_seconds=3.0,
    ),
    "acrobot": dict(
        kind=2,
        params=AcrobotParams(),
        initial_state=(math.pi / 2, math.pi / 2, 0.0, 0.0),
        horizon_seconds=5.0,
    ),
}

LINEAR_VALIDATION_A = 0.9
LINEAR_VALIDATION_B = 1.0


def benchmark_defaults(name: str) -> dict:
    """Default initial state, horizon, and dimensions for a benchmark id."""
    if name == "linear":
        return dict(initial_state=(1.0,), horizon_seconds=60.0, n_x=1, n_u=1)
    if name not in _BENCHMARK_META:
        raise ConfigError(f"unknown benchmark {name!r}; expected one of {BENCHMARK_NAMES}")
    meta = _BENCHMARK_META[name]
    nx = backend.kernels().state_dim(meta["kind"])
    return dict(initial_state=meta["initial_state"],
                horizon_seconds=meta["horizon_seconds"], n_x=nx, n_u=1)


def make_model(name: str, dt: float = 0.01, noise_scale: float = 1.0,
               noise_cov=None) -> SimModel:
    """Construct a benchmark model by id ('cartpole', 'cart2pole', 'acrobot', 'linear')."""
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if name == "linear":
        return LinearModel(np.array([[LINEAR_VALIDATION_A]]),
                           np.array([[LINEAR_VALIDATION_B]]),
                           dt=dt, noise_scale=noise_scale, noise_cov=noise_cov)
    if name not in _BENCHMARK_META:
        raise ConfigError(f"unknown benchmark {name!r}; expected one of {BENCHMARK_NAMES}")
    meta = _BENCHMARK_META[name]
    return BenchmarkModel(name, meta["kind"], meta["params"], dt,
                          noise_scale=noise_scale, noise_cov=noise_cov)


def horizon_steps(horizon_seconds: float, dt: float) -> int:
    """Number of discrete steps covering a horizon given in seconds."""
    n = int(round(horizon_seconds / dt))
    if n < 1:
        raise ConfigError("horizon must cover at least one step")
    return n


def rollout(model: SimModel, x0, controls, noise=None) -> Trajectory:
    """Simulate the model under a control sequence (plus optional noise samples).

    noise, when given, is an (N, n_u) array of per-step samples w_k applied
    through the control channel. Raises on an empty horizon and propagates
    numerical failures with the offending step index.
    """
    x0 = np.asarray(x0, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape[0] < 1:
        raise ValueError("empty control sequence: horizon must be >= 1")
    if controls.shape[1] != model.n_u:
        raise ValueError(f"expected controls with {model.n_u} columns, got {controls.shape[1]}")
    if isinstance(model, BenchmarkModel):
        u_eff = controls
        if noise is not None:
            u_eff = controls + model.noise_scale * np.asarray(noise, dtype=float)
        states, bad = backend.kernels().rollout(
            model.kind, model.param_vector, np.ascontiguousarray(x0),
            np.ascontiguousarray(u_eff), model.dt)
        if bad >= 0:
            raise NumericalFailure(f"non-finite state at step {bad}")
        return Trajectory(states=states, controls=controls)
    states = np.empty((len(controls) + 1, model.n_x))
    states[0] = x0
    x = x0
    for k, u in enumerate(controls):
        w = None if noise is None else noise[k]
        try:
            x = model.step(x, u, w, k=k) if isinstance(model, LinearModel) \
                else model.step(x, u, w)
        except NumericalFailure as exc:
            raise NumericalFailure(f"step {k}: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise NumericalFailure(f"non-finite state at step {k}")
        states[k + 1] = x
    return Trajectory(states=states, controls=controls)

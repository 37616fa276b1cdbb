"""Pipeline configuration: a single INI-style file with one section per stage.

All module preconditions are validated up front and unknown sections or keys
are rejected, so a config that parses will run. Diagonal weight matrices are
written as comma lists; a single scalar means scalar * identity.
"""

import configparser
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import benchmark_defaults, horizon_steps, make_model
from .errors import ConfigError
from .openloop import CostSpec, OptimizerConfig

_SCHEMA = {
    "pipeline": {"benchmark", "dt", "horizon_seconds", "seed", "initial_state"},
    "cost": {"q_inc", "r", "q_terminal", "target"},
    "optimizer": {"method", "step_size", "fd_step", "tolerance",
                  "max_iterations", "backtracking", "initial_controls"},
    "sysid": {"experiments", "perturbation_std", "p", "q", "rom_order"},
    "feedback": {"q", "r", "meas_noise_std", "kf_process_noise", "p0"},
    "evaluation": {"nsr_grid", "n_runs", "success_threshold",
                   "open_loop_baseline", "tail", "tail_eps", "tail_threshold",
                   "tail_runs", "ranking_policy", "ranking_eps", "ranking_runs"},
}


@dataclass
class SysidConfig:
    experiments: int = None      # None = auto (N * n_u + 50)
    perturbation_std: float = None  # None = auto (1% of control RMS)
    p: int = None
    q: int = None
    rom_order: int = None        # None = auto rank selection


@dataclass
class FeedbackConfig:
    q_state: np.ndarray = None
    r_control: np.ndarray = None
    meas_noise_std: float = 1e-4
    kf_process_noise: float = 1e-2
    p0: float = 1e-2


@dataclass
class EvaluationConfig:
    nsr_grid: tuple = (0.0,)
    n_runs: int = 100
    success_threshold: float = 0.1
    open_loop_baseline: bool = False
    tail: bool = False
    tail_eps: tuple = ()
    tail_threshold: float = 1.0
    tail_runs: int = 1000
    ranking_policy: str = None
    ranking_eps: float = 0.01
    ranking_runs: int = 200


@dataclass
class PipelineConfig:
    benchmark: str
    dt: float
    horizon_seconds: float
    n_steps: int
    seed: int
    initial_state: np.ndarray
    initial_controls: str
    cost: CostSpec
    optimizer: OptimizerConfig
    sysid: SysidConfig
    feedback: FeedbackConfig
    evaluation: EvaluationConfig
    config_hash: str = ""

    def model(self):
        return make_model(self.benchmark, self.dt)

    def initial_control_sequence(self) -> np.ndarray:
        """Resolve the optimizer's initial guess spec into an (N, n_u) array."""
        n_u = benchmark_defaults(self.benchmark)["n_u"]
        spec = self.initial_controls
        if spec == "zeros":
            return np.zeros((self.n_steps, n_u))
        if spec.startswith("sine:"):
            try:
                amp, freq = (float(v) for v in spec[len("sine:"):].split(","))
            except ValueError:
                raise ConfigError(f"malformed initial_controls {spec!r}") from None
            t = np.arange(self.n_steps) * self.dt
            u = amp * np.sin(2.0 * math.pi * freq * t)
            return np.repeat(u[:, None], n_u, axis=1)
        raise ConfigError(f"unknown initial_controls spec {spec!r}")


def _parse_floats(text: str, what: str):
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"malformed number list for {what}: {text!r}") from None


def _parse_weight(text: str, dim: int, what: str) -> np.ndarray:
    values = _parse_floats(text, what)
    if len(values) == 1:
        return values[0] * np.eye(dim)
    if len(values) != dim:
        raise ConfigError(
            f"{what} needs 1 or {dim} diagonal entries, got {len(values)}")
    return np.diag(values)


def _parse_bool(text: str, what: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"malformed boolean for {what}: {text!r}")


def _get(parser, section, key, default=None):
    if parser.has_option(section, key):
        return parser.get(section, key)
    return default


def load_config(path: str, seed_override: int = None) -> PipelineConfig:
    """Parse and validate a pipeline config file.

    seed_override (the CLI --seed flag) replaces the config seed before the
    provenance hash is computed, so artifacts record the seed actually used.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    if not parser.has_section("pipeline"):
        raise ConfigError("missing required section [pipeline]")
    benchmark = _get(parser, "pipeline", "benchmark")
    if benchmark is None:
        raise ConfigError("missing pipeline.benchmark")
    defaults = benchmark_defaults(benchmark)  # raises on unknown id
    dt = float(_get(parser, "pipeline", "dt", "0.01"))
    if dt <= 0:
        raise ConfigError("pipeline.dt must be positive")
    horizon_seconds = float(_get(parser, "pipeline", "horizon_seconds",
                                 str(defaults["horizon_seconds"])))
    n_steps = horizon_steps(horizon_seconds, dt)
    seed = int(_get(parser, "pipeline", "seed", "0"))
    if seed_override is not None:
        seed = int(seed_override)
    n_x, n_u = defaults["n_x"], defaults["n_u"]
    x0_text = _get(parser, "pipeline", "initial_state")
    if x0_text is None:
        initial_state = np.asarray(defaults["initial_state"], dtype=float)
    else:
        initial_state = np.asarray(_parse_floats(x0_text, "initial_state"))
        if len(initial_state) != n_x:
            raise ConfigError(
                f"initial_state needs {n_x} entries, got {len(initial_state)}")

    target_text = _get(parser, "cost", "target")
    target = (np.zeros(n_x) if target_text is None
              else np.asarray(_parse_floats(target_text, "target")))
    if len(target) != n_x:
        raise ConfigError(f"target needs {n_x} entries, got {len(target)}")
    try:
        cost = CostSpec(
            q_inc=_parse_weight(_get(parser, "cost", "q_inc", "1.0"), n_x, "cost.q_inc"),
            r=_parse_weight(_get(parser, "cost", "r", "1.0"), n_u, "cost.r"),
            q_terminal=_parse_weight(_get(parser, "cost", "q_terminal", "1.0"),
                                     n_x, "cost.q_terminal"),
            target=target)
    except ValueError as exc:
        raise ConfigError(f"invalid cost: {exc}") from None

    try:
        optimizer = OptimizerConfig(
            step_size=float(_get(parser, "optimizer", "step_size", "1e-2")),
            fd_step=float(_get(parser, "optimizer", "fd_step", "1e-4")),
            tolerance=float(_get(parser, "optimizer", "tolerance", "1e-3")),
            max_iterations=int(_get(parser, "optimizer", "max_iterations", "1000")),
            backtracking=_parse_bool(_get(parser, "optimizer", "backtracking", "true"),
                                     "optimizer.backtracking"),
            method=_get(parser, "optimizer", "method", "gd"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid optimizer config: {exc}") from None
    initial_controls = _get(parser, "optimizer", "initial_controls", "zeros")

    def _auto_int(section, key):
        text = _get(parser, section, key, "auto")
        if text.strip().lower() == "auto":
            return None
        value = int(text)
        if value < 1:
            raise ConfigError(f"{section}.{key} must be >= 1")
        return value

    def _auto_float(section, key):
        text = _get(parser, section, key, "auto")
        if text.strip().lower() == "auto":
            return None
        value = float(text)
        if value <= 0:
            raise ConfigError(f"{section}.{key} must be positive")
        return value

    sysid = SysidConfig(
        experiments=_auto_int("sysid", "experiments"),
        perturbation_std=_auto_float("sysid", "perturbation_std"),
        p=_auto_int("sysid", "p"),
        q=_auto_int("sysid", "q"),
        rom_order=_auto_int("sysid", "rom_order"))
    if sysid.experiments is not None and sysid.experiments < n_steps * n_u:
        raise ConfigError(
            f"sysid.experiments must be at least N * n_u = {n_steps * n_u}")
    if sysid.rom_order is not None and sysid.rom_order > n_x:
        raise ConfigError("sysid.rom_order cannot exceed the state dimension")

    feedback = FeedbackConfig(
        q_state=_parse_weight(_get(parser, "feedback", "q", "1.0"), n_x, "feedback.q"),
        r_control=_parse_weight(_get(parser, "feedback", "r", "1.0"), n_u, "feedback.r"),
        meas_noise_std=float(_get(parser, "feedback", "meas_noise_std", "1e-4")),
        kf_process_noise=float(_get(parser, "feedback", "kf_process_noise", "1e-2")),
        p0=float(_get(parser, "feedback", "p0", "1e-2")))
    if feedback.meas_noise_std <= 0:
        raise ConfigError("feedback.meas_noise_std must be positive")
    if feedback.kf_process_noise < 0 or feedback.p0 < 0:
        raise ConfigError("feedback.kf_process_noise and p0 must be non-negative")

    nsr_grid = tuple(_parse_floats(_get(parser, "evaluation", "nsr_grid", "0.0"),
                                   "evaluation.nsr_grid"))
    if any(v < 0 for v in nsr_grid) or not nsr_grid:
        raise ConfigError("evaluation.nsr_grid must be non-empty and non-negative")
    tail_eps = tuple(_parse_floats(_get(parser, "evaluation", "tail_eps", ""),
                                   "evaluation.tail_eps"))
    evaluation = EvaluationConfig(
        nsr_grid=nsr_grid,
        n_runs=int(_get(parser, "evaluation", "n_runs", "100")),
        success_threshold=float(_get(parser, "evaluation", "success_threshold", "0.1")),
        open_loop_baseline=_parse_bool(
            _get(parser, "evaluation", "open_loop_baseline", "false"),
            "evaluation.open_loop_baseline"),
        tail=_parse_bool(_get(parser, "evaluation", "tail", "false"), "evaluation.tail"),
        tail_eps=tail_eps,
        tail_threshold=float(_get(parser, "evaluation", "tail_threshold", "1.0")),
        tail_runs=int(_get(parser, "evaluation", "tail_runs", "1000")),
        ranking_policy=_get(parser, "evaluation", "ranking_policy"),
        ranking_eps=float(_get(parser, "evaluation", "ranking_eps", "0.01")),
        ranking_runs=int(_get(parser, "evaluation", "ranking_runs", "200")))
    if evaluation.n_runs < 1:
        raise ConfigError("evaluation.n_runs must be >= 1")
    if evaluation.tail and (len(tail_eps) < 2 or any(e <= 0 for e in tail_eps)):
        raise ConfigError("evaluation.tail needs a positive tail_eps grid")

    cfg = PipelineConfig(
        benchmark=benchmark, dt=dt, horizon_seconds=horizon_seconds,
        n_steps=n_steps, seed=seed, initial_state=initial_state,
        initial_controls=initial_controls, cost=cost, optimizer=optimizer,
        sysid=sysid, feedback=feedback, evaluation=evaluation)
    cfg.config_hash = _hash_config(cfg)
    return cfg


def _hash_config(cfg: PipelineConfig) -> str:
    """Provenance hash over every resolved config value (including the seed)."""
    h = hashlib.sha256()

    def put(*parts):
        for part in parts:
            h.update(str(part).encode())
            h.update(b"|")

    put(cfg.benchmark, repr(cfg.dt), repr(cfg.horizon_seconds), cfg.n_steps,
        cfg.seed, cfg.initial_controls)
    put(*(repr(v) for v in cfg.initial_state))
    for m in (cfg.cost.q_inc, cfg.cost.r, cfg.cost.q_terminal):
        put(*(repr(v) for v in m.ravel()))
    put(*(repr(v) for v in cfg.cost.target))
    opt = cfg.optimizer
    put(opt.method, repr(opt.step_size), repr(opt.fd_step), repr(opt.tolerance),
        opt.max_iterations, opt.backtracking)
    put(cfg.sysid.experiments, cfg.sysid.perturbation_std, cfg.sysid.p,
        cfg.sysid.q, cfg.sysid.rom_order)
    fb = cfg.feedback
    put(*(repr(v) for v in fb.q_state.ravel()))
    put(*(repr(v) for v in fb.r_control.ravel()))
    put(repr(fb.meas_noise_std), repr(fb.kf_process_noise), repr(fb.p0))
    ev = cfg.evaluation
    put(*(repr(v) for v in ev.nsr_grid))
    put(ev.n_runs, repr(ev.success_threshold), ev.open_loop_baseline, ev.tail,
        *(repr(v) for v in ev.tail_eps))
    put(repr(ev.tail_threshold), ev.tail_runs, ev.ranking_policy,
        repr(ev.ranking_eps), ev.ranking_runs)
    return h.hexdigest()[:16]

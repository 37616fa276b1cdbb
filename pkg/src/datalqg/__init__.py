"""Open-loop trajectory optimization, time-varying ERA identification, and
LQG tracking for black-box dynamical systems, with a Monte Carlo evaluation
harness."""

__version__ = "0.1.0"

from .backend import active_backend
from .dynamics import (AcrobotParams, CartPoleParams, CartTwoPoleParams,
                       LinearModel, SimModel, Trajectory, make_model, rollout)
from .errors import (ArtifactError, ConfigError, DataLqgError, DesignFailure,
                     IdentificationError, NumericalFailure,
                     OptimizationFailure)
from .evaluation import (NoiseSetting, monte_carlo, nsr_to_noise,
                         ranking_check, run_closed_loop, run_open_loop_only,
                         deviation_tail)
from .feedback import (FeedbackPolicy, build_policy, check_stationarity,
                       costate_recursion, kalman_gains, lqr_tv,
                       riccati_theorem1, rom_from_matrices)
from .openloop import (CostSpec, OptimizeResult, OptimizerConfig,
                       evaluate_cost, fd_gradient, gradient_descent)
from .sysid import (LtvRom, MarkovParamSet, RolloutDataset, build_hankel,
                    collect_rollouts, era_step, estimate_markov, identify_ltv,
                    linearize_fd)

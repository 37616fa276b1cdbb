"""Command-line front end: optimize / sysid / design / evaluate / pipeline.

Every command is a pure function of (config file, input artifacts, seed);
reruns produce byte-identical artifacts. Stage timings and progress go to
stderr only, never into artifact files.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import artifacts, evaluation, feedback, openloop, sysid
from .config import PipelineConfig, load_config
from .dynamics import benchmark_defaults
from .errors import ConfigError, DataLqgError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_WARNINGS = 2

log = logging.getLogger("datalqg")

NOMINAL_FILE = "nominal.txt"
CONVERGENCE_FILE = "convergence.csv"
ROM_FILE = "rom.txt"
SINGULAR_VALUES_FILE = "singular_values.csv"
POLICY_FILE = "policy.txt"
GAINS_FILE = "gains.csv"
MONTECARLO_FILE = "montecarlo.csv"
TAIL_FILE = "tail.csv"
RANKING_FILE = "ranking.csv"
SUMMARY_FILE = "summary.txt"


def _resolve_threads(threads: int) -> int:
    if threads and threads > 0:
        return threads
    return min(os.cpu_count() or 1, 8)


def cmd_optimize(cfg: PipelineConfig, out_dir: str, threads: int = 0):
    """Stage 1: open-loop optimization; writes the nominal and convergence CSV."""
    model = cfg.model()
    cfg.optimizer.threads = _resolve_threads(threads)
    u0 = cfg.initial_control_sequence()
    t0 = time.perf_counter()
    result = openloop.gradient_descent(model, cfg.cost, cfg.initial_state, u0,
                                       cfg.optimizer)
    elapsed = time.perf_counter() - t0
    log.info("optimize: %s after %d iterations, cost %.6g, %d rollouts, %.1fs",
             result.status, result.iterations, result.cost,
             result.total_rollouts, elapsed)
    nominal = None
    nominal_path = os.path.join(out_dir, NOMINAL_FILE)
    from .dynamics import Trajectory
    nominal = Trajectory(states=result.states, controls=result.controls)
    artifacts.write_trajectory(nominal_path, nominal, cfg.benchmark, cfg.dt,
                               cfg.config_hash, converged=result.converged,
                               rollouts=result.total_rollouts, cost=result.cost)
    rows = [(i, float(c), float(g), int(r)) for i, (c, g, r) in
            enumerate(zip(result.cost_history, result.grad_norm_history,
                          result.rollout_history))]
    artifacts.write_csv(os.path.join(out_dir, CONVERGENCE_FILE),
                        ["iteration", "cost", "grad_norm", "cumulative_rollouts"],
                        rows)
    return (EXIT_OK if result.converged else EXIT_WARNINGS), result


def _check_dims(name, expected, actual):
    if expected != actual:
        raise ConfigError(f"{name} mismatch: expected {expected}, found {actual}")


def cmd_sysid(cfg: PipelineConfig, out_dir: str, nominal_path: str,
              threads: int = 0):
    """Stage 2: collect perturbation rollouts and identify the LTV ROM."""
    nominal, header = artifacts.read_trajectory(nominal_path)
    defaults = benchmark_defaults(cfg.benchmark)
    _check_dims("state dimension", defaults["n_x"], nominal.states.shape[1])
    _check_dims("control dimension", defaults["n_u"], nominal.controls.shape[1])
    _check_dims("horizon", cfg.n_steps, nominal.horizon)
    model = cfg.model()
    n_exp = cfg.sysid.experiments or sysid.default_experiment_count(
        nominal.horizon, nominal.controls.shape[1])
    sigma = cfg.sysid.perturbation_std or sysid.default_perturbation_std(
        nominal.controls)
    t0 = time.perf_counter()
    data = sysid.collect_rollouts(model, nominal, n_exp, sigma, cfg.seed)
    rom = sysid.identify_ltv(data, p=cfg.sysid.p, q=cfg.sysid.q,
                             n_r=cfg.sysid.rom_order)
    elapsed = time.perf_counter() - t0
    log.info("sysid: %d rollouts, perturbation std %.4g, order %d, "
             "window [%d, %d], %.1fs", n_exp, sigma, rom.order, rom.k_lo,
             rom.k_hi, elapsed)
    artifacts.write_rom(os.path.join(out_dir, ROM_FILE), rom, cfg.benchmark,
                        cfg.config_hash, rollouts=n_exp)
    sv_rows = [(k, *map(float, rom.singular_values[i]))
               for i, k in enumerate(range(rom.k_lo, rom.k_hi + 1))]
    artifacts.write_csv(os.path.join(out_dir, SINGULAR_VALUES_FILE),
                        ["k"] + [f"sigma_{i + 1}" for i in range(rom.order)],
                        sv_rows)
    return EXIT_OK, rom, n_exp


def cmd_design(cfg: PipelineConfig, out_dir: str, nominal_path: str,
               rom_path: str):
    """Stage 3: LQR + Kalman design on the identified ROM; writes the policy."""
    nominal, _ = artifacts.read_trajectory(nominal_path)
    rom, _ = artifacts.read_rom(rom_path)
    _check_dims("horizon", nominal.horizon, rom.horizon)
    _check_dims("horizon", cfg.n_steps, nominal.horizon)
    _check_dims("output dimension", nominal.states.shape[1], rom.n_y)
    _check_dims("control dimension", nominal.controls.shape[1], rom.n_u)
    fb = cfg.feedback
    t0 = time.perf_counter()
    policy = feedback.build_policy(
        nominal, rom, fb.q_state, fb.r_control,
        v_meas=fb.meas_noise_std ** 2 * np.eye(rom.n_y),
        w_process=fb.kf_process_noise * np.eye(rom.n_u),
        p0=fb.p0)
    elapsed = time.perf_counter() - t0
    log.info("design: %d feedback and filter gains, %.2fs", policy.horizon, elapsed)
    artifacts.write_policy(os.path.join(out_dir, POLICY_FILE), policy,
                           cfg.benchmark, cfg.config_hash)
    gain_rows = [(k, *map(float, policy.gains[k].ravel()),
                  *map(float, policy.kalman.gains[k].ravel()))
                 for k in range(policy.horizon)]
    n_l = policy.gains[0].size
    n_k = policy.kalman.gains[0].size
    artifacts.write_csv(os.path.join(out_dir, GAINS_FILE),
                        ["k"] + [f"L_{i}" for i in range(n_l)]
                        + [f"K_{i}" for i in range(n_k)], gain_rows)
    return EXIT_OK, policy


def cmd_evaluate(cfg: PipelineConfig, out_dir: str, policy_path: str):
    """Stage 4: Monte Carlo over the NSR grid, optional tail and ranking checks."""
    policy, _ = artifacts.read_policy(policy_path)
    _check_dims("horizon", cfg.n_steps, policy.horizon)
    _check_dims("state dimension", len(cfg.initial_state),
                policy.x_nominal.shape[1])
    model = cfg.model()
    ev = cfg.evaluation
    t0 = time.perf_counter()
    report = evaluation.monte_carlo(model, policy, cfg.cost, ev.nsr_grid,
                                    ev.n_runs, cfg.seed,
                                    success_threshold=ev.success_threshold)
    rows = []
    for row in report.rows:
        for stat, value in (("eps", row.eps), ("mean_cost", row.mean_cost),
                            ("std_cost", row.std_cost),
                            ("success_rate", row.success_rate),
                            ("mean_max_deviation", row.mean_max_deviation),
                            ("n_runs", float(row.n_runs)),
                            ("n_failures", float(row.n_failures))):
            rows.append((float(row.nsr), stat, float(value)))
    if ev.open_loop_baseline:
        baseline = evaluation.monte_carlo(model, policy, cfg.cost, ev.nsr_grid,
                                          ev.n_runs, cfg.seed,
                                          success_threshold=ev.success_threshold,
                                          open_loop=True)
        for row in baseline.rows:
            for stat, value in (("open_loop_mean_cost", row.mean_cost),
                                ("open_loop_std_cost", row.std_cost),
                                ("open_loop_success_rate", row.success_rate)):
                rows.append((float(row.nsr), stat, float(value)))
    artifacts.write_csv(os.path.join(out_dir, MONTECARLO_FILE),
                        ["nsr", "statistic", "value"], rows)
    log.info("evaluate: %d NSR grid points x %d runs, %.1fs",
             len(ev.nsr_grid), ev.n_runs, time.perf_counter() - t0)
    if ev.tail:
        tail = evaluation.deviation_tail(model, policy, cfg.cost, ev.tail_eps,
                                         ev.tail_threshold, ev.tail_runs,
                                         cfg.seed)
        tail_rows = [(float(e), "exceedance_probability", float(p))
                     for e, p in zip(tail.eps_grid, tail.probabilities)]
        tail_rows += [(float(e), "censored", float(c))
                      for e, c in zip(tail.eps_grid, tail.censored)]
        for stat, value in (("slope", tail.slope), ("alpha_hat", tail.alpha_hat),
                            ("beta_hat", tail.beta_hat),
                            ("r_squared", tail.r_squared),
                            ("threshold", tail.threshold),
                            ("n_runs", float(tail.n_runs))):
            tail_rows.append((0.0, f"fit_{stat}", float(value)))
        artifacts.write_csv(os.path.join(out_dir, TAIL_FILE),
                            ["eps", "statistic", "value"], tail_rows)
    if ev.ranking_policy:
        other, _ = artifacts.read_policy(ev.ranking_policy)
        _check_dims("horizon", policy.horizon, other.horizon)
        rank = evaluation.ranking_check(model, cfg.cost, policy, other,
                                        ev.ranking_eps, ev.ranking_runs,
                                        cfg.seed)
        artifacts.write_csv(
            os.path.join(out_dir, RANKING_FILE), ["eps", "statistic", "value"],
            [(rank.eps, "preserved_fraction", rank.preserved_fraction),
             (rank.eps, "nominal_cost_1", rank.nominal_cost_1),
             (rank.eps, "nominal_cost_2", rank.nominal_cost_2),
             (rank.eps, "n_runs", float(rank.n_runs))])
    return EXIT_OK, report


def cmd_pipeline(cfg: PipelineConfig, out_dir: str, threads: int = 0):
    """All four stages in order, stopping at the first failure."""
    code_opt, result = cmd_optimize(cfg, out_dir, threads)
    nominal_path = os.path.join(out_dir, NOMINAL_FILE)
    _, rom, sysid_rollouts = cmd_sysid(cfg, out_dir, nominal_path, threads)
    rom_path = os.path.join(out_dir, ROM_FILE)
    _, policy = cmd_design(cfg, out_dir, nominal_path, rom_path)
    _, report = cmd_evaluate(cfg, out_dir, os.path.join(out_dir, POLICY_FILE))
    terminal_error = float(np.linalg.norm(result.states[-1] - cfg.cost.target))
    total = result.total_rollouts + sysid_rollouts
    lines = [
        f"# format: {artifacts.SUMMARY_FORMAT}",
        f"benchmark {cfg.benchmark}",
        f"config_hash {cfg.config_hash}",
        f"seed {cfg.seed}",
        f"horizon_steps {cfg.n_steps}",
        f"dt {artifacts._fmt(cfg.dt)}",
        f"optimize_converged {str(result.converged).lower()}",
        f"optimize_iterations {result.iterations}",
        f"optimize_rollouts {result.total_rollouts}",
        f"nominal_cost {artifacts._fmt(result.cost)}",
        f"terminal_error {artifacts._fmt(terminal_error)}",
        f"sysid_rollouts {sysid_rollouts}",
        f"rom_order {rom.order}",
        f"rom_window {rom.k_lo} {rom.k_hi}",
        f"total_learning_trials {total}",
    ]
    for row in report.rows:
        lines.append(
            f"evaluate nsr={artifacts._fmt(row.nsr)} "
            f"mean_cost={artifacts._fmt(row.mean_cost)} "
            f"success_rate={artifacts._fmt(row.success_rate)}")
    artifacts.atomic_write(os.path.join(out_dir, SUMMARY_FILE),
                           "\n".join(lines) + "\n")
    log.info("pipeline: %d total learning trials (optimize %d + sysid %d)",
             total, result.total_rollouts, sysid_rollouts)
    return code_opt


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="datalqg",
        description="Trajectory optimization, LTV identification, and LQG "
                    "tracking for black-box dynamical systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("optimize", "solve the open-loop trajectory optimization"),
            ("sysid", "identify the LTV ROM around a nominal trajectory"),
            ("design", "design LQR and Kalman gains on the ROM"),
            ("evaluate", "run the Monte Carlo evaluation of a policy"),
            ("pipeline", "run all four stages in order")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--dry-run", action="store_true",
                       help="validate the config and exit")
        p.add_argument("--threads", type=int, default=0,
                       help="worker threads for rollout batches (0 = auto)")
        if name in ("sysid", "design"):
            p.add_argument("--nominal", default=None,
                           help="nominal trajectory file (default: <out>/nominal.txt)")
        if name == "design":
            p.add_argument("--rom", default=None,
                           help="ROM file (default: <out>/rom.txt)")
        if name == "evaluate":
            p.add_argument("--policy", default=None,
                           help="policy file (default: <out>/policy.txt)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except DataLqgError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    if args.dry_run:
        log.info("config OK: benchmark %s, horizon %d steps, hash %s",
                 cfg.benchmark, cfg.n_steps, cfg.config_hash)
        return EXIT_OK
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    try:
        if args.command == "optimize":
            code, _ = cmd_optimize(cfg, out_dir, args.threads)
        elif args.command == "sysid":
            nominal = args.nominal or os.path.join(out_dir, NOMINAL_FILE)
            code, _, _ = cmd_sysid(cfg, out_dir, nominal, args.threads)
        elif args.command == "design":
            nominal = args.nominal or os.path.join(out_dir, NOMINAL_FILE)
            rom = args.rom or os.path.join(out_dir, ROM_FILE)
            code, _ = cmd_design(cfg, out_dir, nominal, rom)
        elif args.command == "evaluate":
            policy = args.policy or os.path.join(out_dir, POLICY_FILE)
            code, _ = cmd_evaluate(cfg, out_dir, policy)
        else:
            code = cmd_pipeline(cfg, out_dir, args.threads)
    except DataLqgError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    return code


if __name__ == "__main__":
    sys.exit(main())

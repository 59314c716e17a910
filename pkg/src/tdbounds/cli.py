"""Command-line entry point.

Every command reads an optional JSON config (``--config``) and flag
overrides (flags win), writes a JSON report to stdout or ``--output`` and,
for tabular results, a CSV file via ``--csv``. Exit codes: 0 success,
1 a checked bound or identity failed (or a bound is inapplicable), 2 bad
configuration.
"""
import argparse
import logging
import sys

import numpy as np

from . import bounds, experiments, linalg
from .config import parse_config
from .engine import (
    NoiseModel,
    StepsizeSchedule,
    default_checkpoints,
    run_trajectory,
)
from .exceptions import ConfigError, InapplicableError, TDBoundsError
from .report import csv_text, dumps, emit, to_plain

log = logging.getLogger("tdbounds")

COMMANDS = ("analyze", "simulate", "verify-expectation", "verify-concentration",
            "sample-complexity", "sweep-sigma", "counterexample")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="tdbounds", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--problem", help="built-in name or path to an MDP JSON document")
    p.add_argument("--no-a2-check", dest="validate_a2", action="store_false", default=None,
                   help="accept features/rewards outside the bounded-feature assumption")
    p.add_argument("--sigma", type=float)
    p.add_argument("--sigmas", type=_floats, help="comma-separated stepsize exponents")
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=_ints, help="comma-separated seeds (counterexample)")
    p.add_argument("--theta0", type=_floats, help="comma-separated initial iterate")
    p.add_argument("--checkpoints", type=_ints)
    p.add_argument("--full", action="store_true", default=None,
                   help="simulate: write every step instead of checkpoints")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--n0", type=int)
    p.add_argument("--n1", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--step-trials", dest="step_trials", type=int,
                   help="verify-concentration: trials for the per-step envelope checks")
    p.add_argument("--step-n-max", dest="step_n_max", type=int,
                   help="verify-concentration: steps per trial for the envelope checks")
    p.add_argument("--fit-window", dest="fit_window", type=_ints,
                   help="sweep-sigma: comma-separated lo,hi for the rate fit")
    p.add_argument("--lambda-exp-fraction", dest="lambda_exp_fraction", type=float)
    p.add_argument("--lambda-hp-fraction", dest="lambda_hp_fraction", type=float)
    p.add_argument("--k-s-mode", dest="k_s_mode", choices=("bound", "exact"))
    p.add_argument("--workers", type=int, help="worker processes (default $TD0_WORKERS or 1)")
    p.add_argument("--output", dest="json", help="JSON report path (default stdout)")
    p.add_argument("--csv", help="CSV output path")
    p.add_argument("--ode-csv", dest="ode_csv", help="simulate: ODE restart paths as CSV")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


OVERRIDE_KEYS = ("problem", "validate_a2", "sigma", "sigmas", "n_max", "trials", "seed",
                 "seeds", "theta0", "checkpoints", "full", "epsilon", "delta", "n0", "n1",
                 "horizon", "step_trials", "step_n_max", "fit_window", "lambda_exp_fraction", "lambda_hp_fraction", "k_s_mode", "workers",
                 "json", "csv", "ode_csv")


# --------------------------------------------------------------------------
# helpers


def _require_problem(cfg):
    if cfg.problem is None:
        raise ConfigError(["problem: required for this command"])
    return cfg.problem


def _theta0(cfg, problem):
    return np.zeros(problem.dim) if cfg.theta0 is None else np.asarray(cfg.theta0, dtype=float)


def _k_s(cfg, problem):
    if cfg.k_s_mode == "exact":
        return bounds.exact_second_moment_constant(problem)
    return None


def _constants(cfg, problem, sigma, expectation=True):
    return bounds.derive_constants(problem.system, sigma, _theta0(cfg, problem),
                                   lambda_exp_fraction=cfg.lambda_exp_fraction,
                                   lambda_hp_fraction=cfg.lambda_hp_fraction,
                                   k_s=_k_s(cfg, problem), expectation=expectation)


def _write(cfg, report, rows=None, columns=None):
    if cfg.json:
        emit(report, cfg.json, "json")
    else:
        sys.stdout.write(dumps(report))
    if cfg.csv and rows is not None:
        with open(cfg.csv, "w") as fh:
            fh.write(csv_text(rows, columns))


def _system_summary(problem):
    s = problem.system
    a = np.asarray(s.a_matrix)
    eig = linalg.eigenvalues_general(a)
    order = np.lexsort((np.imag(eig), np.real(eig)))
    out = {
        "name": problem.name,
        "dim": s.dim,
        "origin": s.origin,
        "A": a,
        "b": s.b_vector,
        "theta_star": s.theta_star,
        "theta_ref": s.theta_ref,
        "singular": s.singular,
        "gamma": s.gamma,
        "eigenvalues_A": [[float(np.real(z)), float(np.imag(z))] for z in eig[order]],
        "sym_min_eig": s.spectral.sym_min_eig,
        "sym_max_eig": s.spectral.sym_max_eig,
        "min_real_part": s.spectral.min_real_part,
        "spectral_norm": s.spectral.spectral_norm,
        "a2_violations": [str(v) for v in problem.a2_violations],
    }
    if problem.spec is not None:
        out["stationary_distribution"] = problem.nu
        out["mdp"] = problem.spec.to_dict()
    return out


# --------------------------------------------------------------------------
# commands


def cmd_analyze(cfg):
    problem = _require_problem(cfg)
    report = {"problem": _system_summary(problem), "sigma": cfg.sigma,
              "expectation_inapplicable": None}
    try:
        c = _constants(cfg, problem, cfg.sigma)
    except InapplicableError as exc:
        report["expectation_inapplicable"] = str(exc)
        try:
            c = _constants(cfg, problem, cfg.sigma, expectation=False)
        except InapplicableError as exc2:
            report["constants"] = None
            report["inapplicable"] = str(exc2)
            _write(cfg, report)
            return 0
    report["constants"] = c.to_dict()
    checks = {}
    try:
        sc = bounds.sample_complexity(c, cfg.epsilon, cfg.delta)
        report["sample_complexity"] = sc
    except TDBoundsError as exc:
        report["sample_complexity"] = None
        checks["sample_complexity_error"] = str(exc)
    nc = cfg.n0 + cfg.n1
    checks["event_prerequisites"] = {
        "n0": cfg.n0, "nc": nc, "epsilon": cfg.epsilon,
        "failed": list(bounds.event_prerequisites(c, cfg.n0, nc, cfg.epsilon)),
        "nc_threshold": bounds.nc_threshold(c, cfg.n0, cfg.epsilon),
        "discretization_thresholds": list(bounds.discretization_thresholds(c, cfg.n0,
                                                                           cfg.epsilon)),
    }
    checks["lambda_hp_perturbed"] = c.lambda_hp_perturbed
    report["checks"] = checks
    _write(cfg, report)
    return 0


def cmd_simulate(cfg):
    problem = _require_problem(cfg)
    schedule = StepsizeSchedule(cfg.sigma)
    noise = NoiseModel() if problem.has_sampler else NoiseModel.none()
    theta0 = _theta0(cfg, problem)
    rec = run_trajectory(problem, noise, schedule, theta0, cfg.n_max, seed=cfg.seed, full=True)
    if cfg.full:
        steps = np.arange(cfg.n_max + 1)
    elif cfg.checkpoints is not None:
        steps = np.union1d(np.asarray(cfg.checkpoints, dtype=np.int64), [0, cfg.n_max])
        steps = steps[steps <= cfg.n_max]
    else:
        steps = default_checkpoints(cfg.n_max)
    d = problem.dim
    columns = ["step", "t"] + [f"theta_{j}" for j in range(d)] + ["err_norm", "noise_norm"]
    rows = []
    for n in steps:
        row = {"step": int(n), "t": rec.times[n], "err_norm": rec.err_norms[n],
               "noise_norm": rec.noise_norms[n] if n < cfg.n_max else float("nan")}
        for j in range(d):
            row[f"theta_{j}"] = rec.thetas[n, j]
        rows.append(row)
    report = {
        "problem": problem.name, "sigma": cfg.sigma, "seed": cfg.seed, "n_max": cfg.n_max,
        "theta0": theta0, "terminal_theta": rec.thetas[-1], "terminal_err_norm": rec.err_norms[-1],
        "reference": rec.theta_ref,
    }
    if cfg.ode_csv:
        restart = [int(n) for n in steps if n < cfg.n_max]
        ode_rows = experiments.ode_restarts(rec, problem.system, restart)
        cols = ["restart_step", "t"] + [f"theta_{j}" for j in range(d)]
        with open(cfg.ode_csv, "w") as fh:
            fh.write(csv_text([dict(zip(cols, r)) for r in ode_rows], cols))
    _write(cfg, report, rows, columns)
    return 0


def _checkpoints(cfg):
    if cfg.checkpoints is not None:
        return np.asarray(cfg.checkpoints, dtype=np.int64)
    return default_checkpoints(cfg.n_max)


def cmd_verify_expectation(cfg):
    problem = _require_problem(cfg)
    verdicts = experiments.verify_expectation(
        problem, cfg.sigmas, cfg.n_max, cfg.trials, cfg.seed, theta0=_theta0(cfg, problem),
        checkpoints=_checkpoints(cfg), workers=cfg.workers,
        lambda_exp_fraction=cfg.lambda_exp_fraction)
    rows = []
    for v in verdicts:
        for r in v.curve.rows():
            rows.append({"sigma": v.sigma, **r})
    report = {
        "problem": problem.name, "trials": cfg.trials, "seed": cfg.seed, "n_max": cfg.n_max,
        "passed": all(v.passed for v in verdicts),
        "results": [to_plain(v) for v in verdicts],
    }
    _write(cfg, report, rows)
    return 0 if report["passed"] else 1


def cmd_verify_concentration(cfg):
    problem = _require_problem(cfg)
    theta0 = _theta0(cfg, problem)
    c = _constants(cfg, problem, 1.0, expectation=False)
    steps = experiments.check_step_bounds(problem, cfg.step_n_max, cfg.step_trials, cfg.seed,
                                          theta0, workers=cfg.workers, constants=c)
    events = experiments.track_events(problem, StepsizeSchedule(1.0), cfg.n0, cfg.n1,
                                      cfg.epsilon, cfg.trials, cfg.seed, theta0,
                                      horizon=cfg.horizon, workers=cfg.workers, constants=c)
    event_ok = events.within_bounds if events.applicable else True
    step_ok = steps.radius_violations == 0 and (
        steps.noise_violations == 0 or not problem.a2_valid)
    report = {
        "problem": problem.name, "seed": cfg.seed,
        "step_bounds": steps,
        "noise_bound_applies": problem.a2_valid,
        "events": events,
        "events_compared": events.applicable,
        "passed": bool(step_ok and event_ok),
    }
    _write(cfg, report)
    return 0 if report["passed"] else 1


def cmd_sample_complexity(cfg):
    problem = _require_problem(cfg)
    c = _constants(cfg, problem, 1.0, expectation=False)
    sc = bounds.sample_complexity(c, cfg.epsilon, cfg.delta)
    report = {
        "problem": problem.name, "epsilon": cfg.epsilon, "delta": cfg.delta,
        "lambda_hp": c.lambda_hp, "lambda_hp_perturbed": c.lambda_hp_perturbed,
        "result": sc,
    }
    _write(cfg, report)
    return 0


def cmd_sweep_sigma(cfg):
    problem = _require_problem(cfg)
    rows = experiments.sweep_sigma(problem, cfg.sigmas, cfg.n_max, cfg.trials, cfg.seed,
                                   theta0=_theta0(cfg, problem),
                                   fit_window=tuple(cfg.fit_window) if cfg.fit_window else None,
                                   workers=cfg.workers,
                                   lambda_exp_fraction=cfg.lambda_exp_fraction)
    report = {"problem": problem.name, "trials": cfg.trials, "seed": cfg.seed,
              "n_max": cfg.n_max, "rows": rows}
    _write(cfg, report, [to_plain(r) for r in rows])
    return 0


def cmd_counterexample(cfg):
    theta0 = [0.0, 5.0] if cfg.theta0 is None else cfg.theta0
    seeds = list(range(50)) if cfg.seeds is None else cfg.seeds
    rep = experiments.counterexample_study(theta0, cfg.n_max, seeds, workers=cfg.workers)
    gap = float(np.max(np.abs(rep.noiseless_terminal - rep.noiseless_limit)))
    passed = gap <= 1e-6 and rep.second_coordinate_constant
    rows = [{"seed": s, "theta_0": rep.terminals[i, 0], "theta_1": rep.terminals[i, 1]}
            for i, s in enumerate(rep.seeds)]
    rows.append({"seed": "noiseless", "theta_0": rep.noiseless_terminal[0],
                 "theta_1": rep.noiseless_terminal[1]})
    report = {
        "theta0": theta0, "n_max": cfg.n_max, "seeds": rep.seeds,
        "noiseless_terminal": rep.noiseless_terminal, "noiseless_limit": rep.noiseless_limit,
        "noiseless_gap": gap, "second_coordinate_constant": rep.second_coordinate_constant,
        "mean_theta_1": rep.mean_theta2, "std_theta_1": rep.std_theta2,
        "diverged": rep.diverged, "passed": passed,
    }
    _write(cfg, report, rows, ["seed", "theta_0", "theta_1"])
    return 0 if passed else 1


HANDLERS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "verify-expectation": cmd_verify_expectation,
    "verify-concentration": cmd_verify_concentration,
    "sample-complexity": cmd_sample_complexity,
    "sweep-sigma": cmd_sweep_sigma,
    "counterexample": cmd_counterexample,
}


def dispatch(command, cfg):
    """Run ``command`` with a validated config; returns the exit code."""
    try:
        return HANDLERS[command](cfg)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except TDBoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s",
                        stream=sys.stderr)
    overrides = {k: getattr(args, k) for k in OVERRIDE_KEYS}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    if cfg.workers is not None:
        experiments.resolve_workers(cfg.workers)
    return dispatch(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())

"""Monte Carlo harness: empirical MSE against the expectation bounds, bad-event
frequencies, per-step envelope checks, rate fits and the singular-system study.

Trials are split into contiguous chunks that may run in separate processes.
Each trial draws from its own stream (see :func:`engine.trial_rng`) and the
simulation is row-local, so results are bit-identical for any worker count.
"""
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .engine import (
    NoiseModel,
    StepsizeSchedule,
    default_checkpoints,
    ode_solution,
    simulate_batch,
    trial_rng,
)
from .exceptions import ContractError, DomainError
from .problems import counterexample, counterexample_noise

WORKERS_ENV = "TD0_WORKERS"
MAX_DIVERGED_FRACTION = 1e-3


def resolve_workers(workers=None):
    """Explicit value, else ``$TD0_WORKERS``, else 1."""
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "").strip()
        workers = int(raw) if raw else 1
    workers = int(workers)
    if workers < 1:
        raise ValueError(f"worker count must be positive, got {workers}")
    return workers


def _simulate_chunk(args):
    problem, noise, schedule, theta0, n_max, seed, lo, hi, checkpoints, record, windows = args
    if noise.draws:
        rngs = [trial_rng(seed, i) for i in range(lo, hi)]
    else:
        rngs = [None] * (hi - lo)
    return simulate_batch(problem, noise, schedule, theta0, n_max, rngs,
                          checkpoints=checkpoints, record=record, windows=windows)


def _concat(parts):
    first = parts[0]
    out = {}
    for name in first.__dataclass_fields__:
        val = getattr(first, name)
        if name in ("steps", "times") or val is None:
            out[name] = val
        else:
            out[name] = np.concatenate([getattr(p, name) for p in parts], axis=0)
    return type(first)(**out)


def run_trials(problem, noise, schedule, theta0, n_max, trials, seed, checkpoints=None,
               record="checkpoints", windows=(), workers=None):
    """Simulate trials ``0 .. trials-1`` and return one stacked batch result."""
    if trials < 1:
        raise DomainError("trials must be positive")
    workers = min(resolve_workers(workers), trials)
    edges = np.linspace(0, trials, workers + 1).round().astype(int)
    jobs = [(problem, noise, schedule, theta0, n_max, seed, int(lo), int(hi), checkpoints,
             record, tuple(windows)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
    if len(jobs) == 1:
        parts = [_simulate_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(_simulate_chunk, jobs))
    return _concat(parts)


def _theta0(problem, theta0):
    if theta0 is None:
        return np.zeros(problem.dim)
    return np.asarray(theta0, dtype=float).reshape(-1)


def _default_noise(problem):
    return NoiseModel() if problem.has_sampler else NoiseModel.none()


# --------------------------------------------------------------------------
# expectation


@dataclass
class MseCurve:
    """Empirical ``E||theta_n - theta*||^2`` with both expectation bounds.

    Bounds are kept as natural logs since they routinely overflow; the
    ``bound_*`` properties exponentiate (``inf`` on overflow).
    """

    checkpoints: np.ndarray
    empirical_mean: np.ndarray
    std_err: np.ndarray
    log_bound_general: np.ndarray
    log_bound_closed: np.ndarray
    trials: int
    seed: int
    sigma: float
    diverged: list = field(default_factory=list)
    constants: object = None

    @property
    def bound_general(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_bound_general)

    @property
    def bound_closed(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_bound_closed)

    @property
    def failed(self):
        """More than 0.1% of trials diverged."""
        return len(self.diverged) > MAX_DIVERGED_FRACTION * self.trials

    def _log_emp(self):
        with np.errstate(divide="ignore"):
            return np.log(self.empirical_mean)

    def margin_general(self):
        """``log10(bound / empirical)`` per checkpoint; positive means dominance."""
        return (self.log_bound_general - self._log_emp()) / math.log(10.0)

    def margin_closed(self):
        return (self.log_bound_closed - self._log_emp()) / math.log(10.0)

    def rows(self):
        for i, n in enumerate(self.checkpoints):
            yield {
                "step": int(n),
                "empirical_mean": float(self.empirical_mean[i]),
                "std_err": float(self.std_err[i]),
                "log10_bound_general": float(self.log_bound_general[i] / math.log(10.0)),
                "log10_bound_closed": float(self.log_bound_closed[i] / math.log(10.0)),
            }


def monte_carlo_mse(problem, schedule, checkpoints=None, trials=1000, seed=0, theta0=None,
                    noise=None, workers=None, constants=None, lambda_exp_fraction=0.9):
    """Estimate ``E||theta_n - theta*||^2`` at checkpoints ``n >= 1``.

    The sum-form bound at checkpoint ``n`` is the bound on
    ``E||theta_{(n-1)+1} - theta*||^2``. The closed form is only defined for
    ``sigma < 1``; for ``sigma = 1`` its column is ``+inf``.
    """
    if trials < 2:
        raise DomainError("need at least 2 trials for a standard error")
    theta0 = _theta0(problem, theta0)
    noise = _default_noise(problem) if noise is None else noise
    if checkpoints is None:
        raise DomainError("checkpoints are required (e.g. default_checkpoints(n_max))")
    cps = np.unique(np.asarray(checkpoints, dtype=np.int64))
    cps = cps[cps >= 1]
    if cps.size == 0:
        raise DomainError("need at least one checkpoint >= 1")
    n_max = int(cps[-1])
    res = run_trials(problem, noise, schedule, theta0, n_max, trials, seed, checkpoints=cps,
                     workers=workers)
    keep = res.diverged_at < 0
    diverged = [(int(i), int(res.diverged_at[i])) for i in np.flatnonzero(~keep)]
    idx = np.searchsorted(res.steps, cps)
    sq = res.err_norms[keep][:, idx] ** 2
    mean = sq.mean(axis=0)
    if sq.shape[0] > 1:
        # shifting by one trial leaves the spread unchanged and makes it exactly
        # zero when all trials agree
        std_err = (sq - sq[:1]).std(axis=0, ddof=1) / math.sqrt(sq.shape[0])
    else:
        std_err = np.zeros_like(mean)

    if constants is None:
        constants = bounds.derive_constants(problem.system, schedule.sigma, theta0,
                                            lambda_exp_fraction=lambda_exp_fraction)
    gen = bounds.log_expectation_bound_general_curve(constants, schedule, n_max - 1)
    log_gen = gen[cps - 1]
    if schedule.sigma < 1.0:
        log_closed = bounds.log_expectation_bound_closed(constants, schedule.sigma, cps)
    else:
        log_closed = np.full(cps.size, np.inf)
    return MseCurve(cps, mean, std_err, log_gen, np.asarray(log_closed, dtype=float), trials,
                    seed, schedule.sigma, diverged, constants)


@dataclass
class SigmaVerdict:
    sigma: float
    passed: bool
    closed_dominates: bool
    general_dominates: bool
    closed_ge_general: bool
    worst_margin_closed: float
    worst_margin_general: float
    crossover: int
    diverged: int
    curve: MseCurve = field(repr=False, default=None)


def verify_expectation(problem, sigma_list, n_max, trials, seed, theta0=None, checkpoints=None,
                       workers=None, lambda_exp_fraction=0.9):
    """Check empirical MSE against both bounds for every sigma in ``sigma_list``.

    A sigma passes when both bounds dominate at every checkpoint, the closed
    form dominates the sum form, and no more than 0.1% of trials diverge.
    ``crossover`` is the first ``n`` where ``K_2 / n^sigma`` overtakes
    ``K_1 exp(-(lambda/2) n^(1-sigma))``.
    """
    out = []
    cps = default_checkpoints(n_max) if checkpoints is None else checkpoints
    for sigma in sigma_list:
        if not 0.0 < sigma < 1.0:
            raise DomainError(f"sigma must lie in (0, 1), got {sigma}")
        curve = monte_carlo_mse(problem, StepsizeSchedule(sigma), cps, trials, seed, theta0,
                                workers=workers, lambda_exp_fraction=lambda_exp_fraction)
        c = curve.constants
        mc, mg = curve.margin_closed(), curve.margin_general()
        closed_ge = bool(np.all(curve.log_bound_closed >= curve.log_bound_general))
        cross = bounds.crossover_index(c.log_k_1, c.log_k_2, c.lambda_exp, sigma)
        out.append(SigmaVerdict(
            sigma=sigma,
            passed=bool(np.all(mc >= 0) and np.all(mg >= 0) and closed_ge and not curve.failed),
            closed_dominates=bool(np.all(mc >= 0)),
            general_dominates=bool(np.all(mg >= 0)),
            closed_ge_general=closed_ge,
            worst_margin_closed=float(mc.min()),
            worst_margin_general=float(mg.min()),
            crossover=cross,
            diverged=len(curve.diverged),
            curve=curve,
        ))
    return out


# --------------------------------------------------------------------------
# high-probability side


@dataclass
class StepBoundReport:
    """Per-step checks of the noise envelope and the worst-case radius."""

    steps_checked: int
    noise_violations: int
    radius_violations: int
    max_noise_ratio: float
    max_radius_ratio: float


def check_step_bounds(problem, n_max, trials, seed, theta0=None, workers=None, constants=None):
    """Run ``alpha_n = 1/(n+1)`` trajectories and count violations of
    ``||M_{n+1}|| <= K_m (1 + ||theta_n - theta*||)`` and
    ``||theta_n - theta*|| <= (n + 1) C_* R_0``.
    """
    theta0 = _theta0(problem, theta0)
    schedule = StepsizeSchedule(1.0)
    if constants is None:
        constants = bounds.derive_constants(problem.system, 1.0, theta0, expectation=False)
    res = run_trials(problem, _default_noise(problem), schedule, theta0, n_max, trials, seed,
                     checkpoints=[], record="norms", workers=workers)
    err = res.full_err
    env = constants.k_m * (1.0 + err[:, :-1])
    noise_ratio = res.full_noise_norm / env
    radius = bounds.worst_case_radius(constants, np.arange(n_max + 1))
    radius_ratio = err / radius
    return StepBoundReport(
        steps_checked=int(res.full_noise_norm.size),
        noise_violations=int(np.sum(res.full_noise_norm > env)),
        radius_violations=int(np.sum(err > radius)),
        max_noise_ratio=float(noise_ratio.max()),
        max_radius_ratio=float(radius_ratio.max()),
    )


@dataclass
class EventReport:
    """Bad-event frequencies against their probability bounds.

    ``freq_G_exit``: share of trials whose error exceeds ``2 R_wc(n0)`` at
    some step in ``(n0, n0 + n1]``. ``freq_after_violation``: share that stay
    inside that ball up to ``n0 + n1`` but later (up to ``horizon``) exceed
    ``min(epsilon, 2 R_wc(n0))``. Frequencies carry binomial standard errors.
    """

    n0: int
    n1: int
    epsilon: float
    horizon: int
    trials: int
    freq_G_exit: float
    freq_after_violation: float
    se_G_exit: float
    se_after_violation: float
    bound_mid: float
    bound_after: float
    applicable: bool
    failed_prerequisites: tuple
    vacuous_mid: bool
    vacuous_after: bool
    first_exit: np.ndarray = field(repr=False, default=None)

    @property
    def within_bounds(self):
        return self.freq_G_exit <= self.bound_mid and self.freq_after_violation <= self.bound_after


def _binomial_se(p, n):
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def track_events(problem, schedule, n0, n1, epsilon, trials, seed, theta0=None, horizon=None,
                 noise=None, workers=None, constants=None, lambda_hp_fraction=0.9):
    """Frequencies of the two bad events for ``alpha_n = 1/(n+1)``."""
    if schedule.sigma != 1.0:
        raise DomainError("event tracking is defined for alpha_n = 1/(n+1) (sigma = 1)")
    if n0 < 1 or n1 < 1:
        raise DomainError("n0 and n1 must be at least 1")
    theta0 = _theta0(problem, theta0)
    horizon = n0 + 2 * n1 if horizon is None else int(horizon)
    if horizon <= n0 + n1:
        raise DomainError("horizon must exceed n0 + n1")
    if constants is None:
        constants = bounds.derive_constants(problem.system, 1.0, theta0,
                                            lambda_hp_fraction=lambda_hp_fraction,
                                            expectation=False)
    ball = 2.0 * float(bounds.worst_case_radius(constants, n0))
    tight = min(epsilon, ball)
    windows = [(n0 + 1, n0 + n1, ball), (n0 + n1 + 1, horizon, tight)]
    noise = _default_noise(problem) if noise is None else noise
    res = run_trials(problem, noise, schedule, theta0, horizon, trials, seed, checkpoints=[],
                     windows=windows, workers=workers)
    exit_mid = res.window_first[:, 0] >= 0
    after = ~exit_mid & (res.window_first[:, 1] >= 0)
    ev = bounds.event_probability_bounds(constants, n0, n0 + n1, epsilon)
    f_mid, f_after = float(exit_mid.mean()), float(after.mean())
    return EventReport(
        n0=n0, n1=n1, epsilon=epsilon, horizon=horizon, trials=trials,
        freq_G_exit=f_mid, freq_after_violation=f_after,
        se_G_exit=_binomial_se(f_mid, trials), se_after_violation=_binomial_se(f_after, trials),
        bound_mid=ev.p_mid, bound_after=ev.p_after,
        applicable=ev.applicable, failed_prerequisites=ev.failed,
        vacuous_mid=ev.p_mid >= 1.0, vacuous_after=ev.p_after >= 1.0,
        first_exit=res.window_first[:, 0],
    )


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual_rms: float
    n_points: int
    scale: str = "mse"


def rate_fit(curve, window):
    """Least-squares slope of ``log E||theta_n - theta*||^2`` against ``log n``.

    The fit is on the MSE scale, so ``c / n`` gives ``-1``; halve it for the
    RMS rate.
    """
    lo, hi = window
    steps = np.asarray(curve.checkpoints)
    vals = np.asarray(curve.empirical_mean)
    sel = (steps >= lo) & (steps <= hi)
    if sel.sum() < 3:
        raise DomainError(f"need at least 3 checkpoints in [{lo}, {hi}], got {int(sel.sum())}")
    if np.any(vals[sel] <= 0):
        raise DomainError("rate fit needs positive values")
    x = np.log(steps[sel].astype(float))
    y = np.log(vals[sel])
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return RateFit(float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2))),
                   int(sel.sum()))


@dataclass
class SweepRow:
    sigma: float
    final_mse: float
    final_std_err: float
    slope: float
    log10_bound_general: float
    log10_bound_closed: float


def sweep_sigma(problem, sigma_list, n_max, trials, seed, theta0=None, fit_window=None,
                workers=None, lambda_exp_fraction=0.9):
    """Final MSE, fitted MSE slope and bound values at ``n_max`` for each sigma."""
    cps = default_checkpoints(n_max)
    window = fit_window or (max(1, n_max // 100), n_max)
    rows = []
    for sigma in sigma_list:
        curve = monte_carlo_mse(problem, StepsizeSchedule(sigma), cps, trials, seed, theta0,
                                workers=workers, lambda_exp_fraction=lambda_exp_fraction)
        try:
            slope = rate_fit(curve, window).slope
        except DomainError:
            slope = float("nan")
        rows.append(SweepRow(
            sigma=sigma,
            final_mse=float(curve.empirical_mean[-1]),
            final_std_err=float(curve.std_err[-1]),
            slope=slope,
            log10_bound_general=float(curve.log_bound_general[-1] / math.log(10.0)),
            log10_bound_closed=float(curve.log_bound_closed[-1] / math.log(10.0)),
        ))
    return rows


# --------------------------------------------------------------------------
# singular system


@dataclass
class CounterexampleReport:
    seeds: list
    terminals: np.ndarray
    noiseless_terminal: np.ndarray
    noiseless_limit: np.ndarray
    second_coordinate_constant: bool
    mean_theta2: float
    std_theta2: float
    diverged: list


def counterexample_study(theta0, n_max, seeds, workers=None):
    """Run the singular system with and without its rank-one noise.

    Uses ``alpha_n = 1/(n+1)``. Without noise the second coordinate never
    moves and the first converges to ``2 - theta0[1]``; with noise every seed
    settles somewhere different along the null direction.
    """
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    if theta0.shape != (2,):
        raise DomainError("the counterexample is two-dimensional")
    if len(seeds) < 2:
        raise DomainError("need at least two seeds for a dispersion estimate")
    problem = counterexample()
    schedule = StepsizeSchedule(1.0)
    clean = simulate_batch(problem, NoiseModel.none(), schedule, theta0, n_max, [None],
                           checkpoints=[], record="full")
    if clean.diverged_at[0] >= 0:
        raise ContractError("noiseless counterexample diverged")
    constant = bool(np.all(clean.full_thetas[0, :, 1] == theta0[1]))

    workers = min(resolve_workers(workers), len(seeds))
    groups = np.array_split(np.asarray(seeds, dtype=np.int64), workers)
    jobs = [(problem, counterexample_noise(), schedule, theta0, n_max, g.tolist())
            for g in groups if g.size]
    if len(jobs) == 1:
        parts = [_counterexample_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(_counterexample_chunk, jobs))
    terminals = np.concatenate([p[0] for p in parts], axis=0)
    diverged_at = np.concatenate([p[1] for p in parts])
    seeds = [int(s) for s in seeds]
    diverged = [(seeds[i], int(diverged_at[i])) for i in np.flatnonzero(diverged_at >= 0)]
    ok = terminals[diverged_at < 0, 1]
    return CounterexampleReport(
        seeds=seeds,
        terminals=terminals,
        noiseless_terminal=clean.full_thetas[0, -1].copy(),
        noiseless_limit=np.array([2.0 - theta0[1], theta0[1]]),
        second_coordinate_constant=constant,
        mean_theta2=float(ok.mean()),
        std_theta2=float(ok.std(ddof=1)),
        diverged=diverged,
    )


def _counterexample_chunk(args):
    problem, noise, schedule, theta0, n_max, seeds = args
    rngs = [trial_rng(s, 0) for s in seeds]
    res = simulate_batch(problem, noise, schedule, theta0, n_max, rngs, checkpoints=[n_max])
    return res.thetas[:, -1], res.diverged_at


def ode_restarts(record, system, restart_steps, points=20):
    """ODE paths ``theta(t, t_n, theta_n)`` restarted at recorded checkpoints.

    Each path runs from ``t_n`` to the last recorded time. Returns rows
    ``(restart_step, t, theta...)``.
    """
    rows = []
    t_end = record.times[-1]
    for n in restart_steps:
        theta_n = record.theta_at(n)
        t_n = record.times[np.searchsorted(record.steps, n)]
        for t in np.linspace(t_n, t_end, points):
            rows.append((int(n), float(t), *ode_solution(system, t, t_n, theta_n).tolist()))
    return rows

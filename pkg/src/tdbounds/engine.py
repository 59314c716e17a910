"""TD(0) recursion, martingale noise, ODE reference paths and the exact
variation-of-parameters error decomposition.

Trajectories are simulated in lockstep batches: row ``i`` of every array
belongs to trial ``i`` and all arithmetic is row-local (explicit sums over
the small feature dimension instead of BLAS products). A trial's numbers
therefore never depend on which other trials share its batch, which is
what makes results independent of the worker count.
"""
from dataclasses import dataclass

import numpy as np

from . import linalg
from .exceptions import ContractError, DimensionError, DivergenceError, DomainError
from .mdp import states_from_uniforms

DIVERGENCE_GUARD = 1e12
RNG_CHUNK = 4096
GL_ORDER = 8
EXP_REFRESH = 64


# --------------------------------------------------------------------------
# schedules and noise


@dataclass(frozen=True)
class StepsizeSchedule:
    """``alpha_n = (n + 1) ** -sigma`` with ``sigma`` in (0, 1]."""

    sigma: float

    def __post_init__(self):
        if not 0.0 < self.sigma <= 1.0:
            raise DomainError(f"sigma must lie in (0, 1], got {self.sigma}")

    def alpha(self, n):
        return (np.asarray(n, dtype=float) + 1.0) ** (-self.sigma)

    def alphas(self, n_max):
        """``alpha_0 .. alpha_{n_max - 1}``."""
        return self.alpha(np.arange(n_max))

    def times(self, n_max):
        """``t_0 .. t_{n_max}`` with ``t_n = sum_{i<n} alpha_i``."""
        t = np.zeros(n_max + 1)
        np.cumsum(self.alphas(n_max), out=t[1:])
        return t


@dataclass(frozen=True)
class NoiseModel:
    """How the per-step noise ``M_{n+1}`` is produced.

    ``mdp-sampling``: draw ``(s, s')`` iid from the MDP and run the TD update.
    ``none``: the mean dynamics ``theta + alpha (b - A theta)``.
    ``bernoulli-rank-one``: ``M = direction * Z * (theta[coordinate] -
    reference[coordinate])`` with ``Z`` uniform on {-1, +1}.
    """

    kind: str = "mdp-sampling"
    direction: tuple = None
    coordinate: int = None
    reference: tuple = None

    KINDS = ("mdp-sampling", "none", "bernoulli-rank-one")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "bernoulli-rank-one":
            if self.direction is None or self.coordinate is None or self.reference is None:
                raise ValueError("bernoulli-rank-one needs direction, coordinate and reference")
            object.__setattr__(self, "direction", tuple(float(x) for x in self.direction))
            object.__setattr__(self, "reference", tuple(float(x) for x in self.reference))
            object.__setattr__(self, "coordinate", int(self.coordinate))

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def bernoulli_rank_one(cls, direction, coordinate, reference):
        return cls("bernoulli-rank-one", direction, coordinate, reference)

    @property
    def draws(self):
        return self.kind != "none"


def trial_rng(seed, index=0):
    """Independent generator for trial ``index`` under base ``seed``.

    The stream is derived by hashing ``(seed, index)`` through
    :class:`numpy.random.SeedSequence`, so it does not depend on how trials
    are grouped or ordered.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------------------
# single-step primitives


def _rowdot(x, y):
    acc = x[:, 0] * y[:, 0]
    for j in range(1, x.shape[1]):
        acc = acc + x[:, j] * y[:, j]
    return acc


def _mean_field(theta, a, b):
    """Row-wise ``b - A theta`` for theta of shape (T, d)."""
    h = np.broadcast_to(b, theta.shape).copy()
    for j in range(theta.shape[1]):
        h -= theta[:, j:j + 1] * a[:, j]
    return h


def _check_sample(theta, sample):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(sample.phi, dtype=float)
    phi_next = np.asarray(sample.phi_next, dtype=float)
    if not theta.shape == phi.shape == phi_next.shape or theta.ndim != 1:
        raise DimensionError(
            f"theta {theta.shape}, phi {phi.shape}, phi_next {phi_next.shape} disagree"
        )
    return theta, phi, phi_next


def td_error(theta, sample, gamma):
    theta, phi, phi_next = _check_sample(theta, sample)
    return sample.reward + gamma * (phi_next @ theta) - phi @ theta


def td0_step(theta, sample, alpha, gamma):
    """One unaltered TD(0) update ``theta + alpha * delta * phi``."""
    if alpha < 0:
        raise DomainError("alpha must be non-negative")
    theta, phi, _ = _check_sample(theta, sample)
    return theta + alpha * td_error(theta, sample, gamma) * phi


def extract_noise(sample, theta, system):
    """``M = delta * phi - (b - A theta)`` for one sample."""
    if system.gamma is None:
        raise ContractError("system carries no discount factor; not MDP-derived")
    theta, phi, _ = _check_sample(theta, sample)
    if theta.shape[0] != system.dim:
        raise DimensionError(f"theta has length {theta.shape[0]}, system dim is {system.dim}")
    delta = td_error(theta, sample, system.gamma)
    return delta * phi - (system.b_vector - system.a_matrix @ theta)


# --------------------------------------------------------------------------
# batched simulation


@dataclass
class BatchResult:
    """Raw output of :func:`simulate_batch` for ``T`` trials.

    ``thetas`` has shape (T, C, d) at ``steps``. ``err_norms`` (T, C) are
    distances to the problem's reference point. The optional ``full_*``
    arrays hold every step; ``noise`` is (T, n_max, d). For each requested
    window ``(lo, hi, threshold)``, ``window_max`` (T, W) holds the largest
    error norm over steps ``lo..hi`` and ``window_first`` the first step in
    that range whose error exceeds ``threshold`` (-1 if none).
    """

    steps: np.ndarray
    times: np.ndarray
    thetas: np.ndarray
    err_norms: np.ndarray
    diverged_at: np.ndarray
    full_err: np.ndarray = None
    full_noise_norm: np.ndarray = None
    full_thetas: np.ndarray = None
    noise: np.ndarray = None
    window_max: np.ndarray = None
    window_first: np.ndarray = None


def default_checkpoints(n_max, ratio=1.1):
    """0, n_max and every ``ceil(ratio ** k)`` in between."""
    pts = {0, int(n_max)}
    k = 0
    while True:
        v = int(np.ceil(ratio ** k))
        if v > n_max:
            break
        pts.add(v)
        k += 1
    return np.array(sorted(pts), dtype=np.int64)


def _normalize_checkpoints(checkpoints, n_max):
    if checkpoints is None:
        return default_checkpoints(n_max)
    c = np.unique(np.asarray(checkpoints, dtype=np.int64))
    if c.size and (c[0] < 0 or c[-1] > n_max):
        raise DomainError(f"checkpoints must lie in [0, {n_max}]")
    return np.union1d(c, [0, n_max]).astype(np.int64)


def simulate_batch(problem, noise, schedule, theta0, n_max, rngs, checkpoints=None,
                   record="checkpoints", windows=()):
    """Run ``len(rngs)`` independent trajectories in lockstep.

    ``record`` is one of ``"checkpoints"`` (iterates at checkpoints only),
    ``"norms"`` (also per-step error and noise norms) or ``"full"`` (also
    every iterate and every noise vector). A trial whose iterate exceeds the
    divergence guard is frozen at its last finite value and reported in
    ``diverged_at``; the others carry on. ``windows`` requests running
    maxima of the error norm over step ranges (see :class:`BatchResult`).
    """
    if n_max < 1:
        raise DomainError("n_max must be at least 1")
    if record not in ("checkpoints", "norms", "full"):
        raise ValueError(f"unknown record mode {record!r}")
    system = problem.system
    d = system.dim
    a = np.asarray(system.a_matrix)
    b = np.asarray(system.b_vector)
    ref = system.reference
    if ref is None:
        raise ContractError("system has no reference point (singular A and no theta_ref)")
    ref = np.asarray(ref)
    if noise.kind == "mdp-sampling" and not problem.has_sampler:
        raise ContractError("mdp-sampling noise needs an MDP-backed problem")
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    if theta0.shape[0] != d:
        raise DimensionError(f"theta0 has length {theta0.shape[0]}, expected {d}")

    n_trials = len(rngs)
    steps = _normalize_checkpoints(checkpoints, n_max)
    alphas = schedule.alphas(n_max)
    times = schedule.times(n_max)

    theta = np.tile(theta0, (n_trials, 1))
    thetas = np.empty((n_trials, steps.size, d))
    cp_index = {int(s): i for i, s in enumerate(steps)}
    diverged_at = np.full(n_trials, -1, dtype=np.int64)
    alive = np.ones(n_trials, dtype=bool)

    want_norms = record in ("norms", "full")
    full_err = np.empty((n_trials, n_max + 1)) if want_norms else None
    full_noise_norm = np.empty((n_trials, n_max)) if want_norms else None
    full_thetas = np.empty((n_trials, n_max + 1, d)) if record == "full" else None
    noise_rec = np.empty((n_trials, n_max, d)) if record == "full" else None
    need_noise = want_norms or record == "full"
    windows = [(int(lo), int(hi), float(th)) for lo, hi, th in windows]
    for lo, hi, _ in windows:
        if not 0 <= lo <= hi <= n_max:
            raise DomainError(f"window [{lo}, {hi}] outside [0, {n_max}]")
    window_max = np.full((n_trials, len(windows)), -np.inf)
    window_first = np.full((n_trials, len(windows)), -1, dtype=np.int64)

    if noise.kind == "mdp-sampling":
        spec, nu = problem.spec, problem.nu
        feats = spec.features
        rewards = spec.reward
        gamma = spec.gamma
    elif noise.kind == "bernoulli-rank-one":
        direction = np.asarray(noise.direction)
        coord = noise.coordinate
        nref = noise.reference[coord]
        if direction.shape[0] != d or not 0 <= coord < d:
            raise DimensionError("bernoulli noise direction/coordinate do not match the system")

    def _store(n, th):
        if n in cp_index:
            thetas[:, cp_index[n]] = th
        active = [w for w, (lo, hi, _) in enumerate(windows) if lo <= n <= hi]
        if want_norms or active:
            diff = th - ref
            err = np.sqrt(_rowdot(diff, diff))
            if want_norms:
                full_err[:, n] = err
            for w in active:
                np.maximum(window_max[:, w], err, out=window_max[:, w])
                hit = (window_first[:, w] < 0) & (err > windows[w][2])
                window_first[hit, w] = n
        if full_thetas is not None:
            full_thetas[:, n] = th

    _store(0, theta)
    u = None
    for n in range(n_max):
        if noise.draws and n % RNG_CHUNK == 0:
            chunk = min(RNG_CHUNK, n_max - n)
            u = np.stack([g.random((chunk, 2)) for g in rngs], axis=1)
        alpha = alphas[n]
        if noise.kind == "mdp-sampling":
            un = u[n % RNG_CHUNK]
            s, s_next = states_from_uniforms(spec, nu, un[:, 0], un[:, 1])
            phi = feats[s]
            delta = rewards[s, s_next] + gamma * _rowdot(feats[s_next], theta) - _rowdot(phi, theta)
            incr = delta[:, None] * phi
            new = theta + alpha * incr
            if need_noise:
                m = incr - _mean_field(theta, a, b)
        else:
            h = _mean_field(theta, a, b)
            if noise.kind == "none":
                m = np.zeros_like(theta)
            else:
                z = np.where(u[n % RNG_CHUNK][:, 0] < 0.5, 1.0, -1.0)
                m = (z * (theta[:, coord] - nref))[:, None] * direction
            new = theta + alpha * (h + m)
        if need_noise:
            if noise_rec is not None:
                noise_rec[:, n] = m
            full_noise_norm[:, n] = np.sqrt(_rowdot(m, m))
        blown = alive & ~np.all(np.abs(new) <= DIVERGENCE_GUARD, axis=1)
        if np.any(blown):
            diverged_at[blown] = n + 1
            alive &= ~blown
            new[blown] = theta[blown]
        theta = new
        _store(n + 1, theta)

    diff = (thetas - ref).reshape(-1, d)
    err = np.sqrt(_rowdot(diff, diff)).reshape(n_trials, steps.size)
    return BatchResult(
        steps=steps,
        times=times[steps],
        thetas=thetas,
        err_norms=err,
        diverged_at=diverged_at,
        full_err=full_err,
        full_noise_norm=full_noise_norm,
        full_thetas=full_thetas,
        noise=noise_rec,
        window_max=window_max,
        window_first=window_first,
    )


@dataclass
class TrajectoryRecord:
    """One trajectory. With ``noise`` present every step is stored."""

    steps: np.ndarray
    times: np.ndarray
    thetas: np.ndarray
    err_norms: np.ndarray
    schedule: StepsizeSchedule
    seed: int
    n_max: int
    theta_ref: np.ndarray
    noise: np.ndarray = None
    noise_norms: np.ndarray = None

    @property
    def full(self):
        return self.noise is not None

    def theta_at(self, n):
        idx = np.searchsorted(self.steps, n)
        if idx >= self.steps.size or self.steps[idx] != n:
            raise ContractError(f"step {n} was not recorded")
        return self.thetas[idx]


def run_trajectory(problem, noise, schedule, theta0, n_max, seed=0, checkpoints=None,
                   full=False):
    """Simulate one TD(0) trajectory.

    With ``full=True`` every iterate and every noise vector ``M_{n+1}`` is
    kept; otherwise only iterates at ``checkpoints`` (geometric grid by
    default). Raises :class:`DivergenceError` if the iterate exceeds the
    overflow guard.
    """
    rngs = [trial_rng(seed, 0)] if noise.draws else [None]
    res = simulate_batch(problem, noise, schedule, theta0, n_max, rngs,
                         checkpoints=None if full else checkpoints,
                         record="full" if full else "checkpoints")
    if res.diverged_at[0] >= 0:
        raise DivergenceError(int(res.diverged_at[0]))
    ref = np.asarray(problem.system.reference)
    if full:
        steps = np.arange(n_max + 1)
        thetas = res.full_thetas[0]
        err = res.full_err[0]
        times = schedule.times(n_max)
        return TrajectoryRecord(steps, times, thetas, err, schedule, seed, n_max, ref,
                                noise=res.noise[0], noise_norms=res.full_noise_norm[0])
    return TrajectoryRecord(res.steps, res.times, res.thetas[0], res.err_norms[0], schedule,
                            seed, n_max, ref)


# --------------------------------------------------------------------------
# ODE and interpolation


def ode_solution(system, t, s, u0, theta_ref=None):
    """Solution of ``d theta / dt = b - A theta`` started at ``u0`` at time ``s``."""
    if t < s:
        raise DomainError(f"t = {t} precedes start time s = {s}")
    ref = system.reference if theta_ref is None else theta_ref
    ref = np.asarray(ref, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    return ref + linalg.matrix_exponential(-np.asarray(system.a_matrix), t - s) @ (u0 - ref)


def interpolate(record, tau):
    """Piecewise-linear interpolation of the iterates in time."""
    t = record.times
    if not t[0] <= tau <= t[-1]:
        raise ContractError(f"tau = {tau} outside recorded range [{t[0]}, {t[-1]}]")
    i = int(np.searchsorted(t, tau, side="right")) - 1
    if t[i] == tau:
        return record.thetas[i].copy()
    if record.steps[i + 1] != record.steps[i] + 1:
        raise ContractError(
            f"tau = {tau} falls between non-adjacent checkpoints "
            f"{record.steps[i]} and {record.steps[i + 1]}"
        )
    w = (tau - t[i]) / (t[i + 1] - t[i])
    return record.thetas[i] + w * (record.thetas[i + 1] - record.thetas[i])


# --------------------------------------------------------------------------
# variation of parameters


@dataclass
class ErrorDecomposition:
    lhs: np.ndarray
    ode_term: np.ndarray
    e_disc: np.ndarray
    e_mart: np.ndarray
    residual: np.ndarray

    @property
    def residual_norm(self):
        return float(np.linalg.norm(self.residual))

    @property
    def tolerance(self):
        return 1e-8 * (1.0 + float(np.linalg.norm(self.lhs)))


def decompose_error(record, system, theta_ref, l1, l2):
    """Split ``theta_bar(t_l2) - theta_ref`` into ODE, discretisation and
    martingale parts over ``[t_l1, t_l2]``.

    The two perturbation integrals are evaluated per step with 8-point
    Gauss-Legendre quadrature. ``theta_ref`` must satisfy ``A theta_ref = b``.
    """
    if not record.full:
        raise ContractError("decomposition needs a full per-step noise record")
    if not 0 <= l1 < l2 <= record.n_max:
        raise ContractError(f"need 0 <= l1 < l2 <= n_max, got l1={l1}, l2={l2}")
    a = np.asarray(system.a_matrix)
    ref = np.asarray(theta_ref, dtype=float)
    gap = np.max(np.abs(a @ ref - system.b_vector))
    if gap > 1e-10 * (1.0 + np.max(np.abs(system.b_vector))):
        raise ContractError(f"theta_ref is not an equilibrium: |A theta_ref - b| = {gap:.3e}")

    x, w = np.polynomial.legendre.leggauss(GL_ORDER)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    t = record.times
    alphas = record.schedule.alphas(record.n_max)
    thetas = record.thetas
    d = a.shape[0]

    e_disc = np.zeros(d)
    e_mart = np.zeros(d)
    # outer = exp(-A (t_l2 - t_{k+1})), walked backwards from k = l2 - 1
    outer = np.eye(d)
    for k in range(l2 - 1, l1 - 1, -1):
        if k < l2 - 1:
            if (l2 - 1 - k) % EXP_REFRESH == 0:
                outer = linalg.matrix_exponential(-a, t[l2] - t[k + 1])
            else:
                outer = outer @ linalg.matrix_exponential(-a, alphas[k + 1])
        ak = alphas[k]
        q = np.zeros((d, d))
        qd = np.zeros((d, d))
        for xj, wj in zip(x, w):
            inner = linalg.matrix_exponential(-a, ak * (1.0 - xj))
            q += wj * inner
            qd += (wj * xj) * inner
        q = ak * (outer @ q)
        qd = ak * (outer @ qd)
        e_mart += q @ record.noise[k]
        e_disc += qd @ (a @ (thetas[k + 1] - thetas[k]))

    lhs = thetas[l2] - ref
    ode = linalg.matrix_exponential(-a, t[l2] - t[l1]) @ (thetas[l1] - ref)
    return ErrorDecomposition(lhs, ode, e_disc, e_mart, lhs - (ode + e_disc + e_mart))

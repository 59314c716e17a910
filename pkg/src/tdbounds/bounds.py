"""Constants and finite-sample bounds for TD(0) with linear features.

Two families live here:

* expectation bounds for ``alpha_n = (n + 1) ** -sigma`` (product bound on
  the one-step contraction factors, the general sum form and its closed-form
  estimate), governed by ``lambda_exp < lambda_min(A + A^T)``;
* high-probability machinery for ``alpha_n = 1 / (n + 1)`` (noise and
  worst-case iterate envelopes, martingale concentration tails, bad-event
  probabilities, sample complexity), governed by ``lambda_hp`` below the
  smallest real part of an eigenvalue of ``A``.

Several constants are astronomically large in practice, so every bound is
evaluated in log space; the plain-float accessors return ``inf`` on
overflow.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import linalg
from .exceptions import DomainError, InapplicableError

log = logging.getLogger(__name__)

M_CAP = 10 ** 7
K_LAMBDA_POINTS = 10 ** 4
K_LAMBDA_HORIZON = 50.0
K_LAMBDA_SAFETY = 1.05
HALF_PERTURBATION = 1e-6


def _exp(x):
    with np.errstate(over="ignore"):
        return float(np.exp(x))


def _log(x):
    return -math.inf if x <= 0 else math.log(x)


def _logaddexp(*xs):
    return float(np.logaddexp.reduce(np.asarray(xs, dtype=float)))


DIRECT_SUM_LIMIT = 1 << 22
EM_START = 1000


def _power_sum_direct(sigma, lo, hi):
    """``sum_{j=lo}^{hi} j ** -sigma`` term by term."""
    total = 0.0
    chunk = 1 << 20
    for a in range(lo, hi + 1, chunk):
        b = min(hi, a + chunk - 1)
        total += float(np.sum(np.arange(a, b + 1, dtype=float) ** (-sigma)))
    return total


def _power_sum_em(sigma, lo, hi):
    """Euler-Maclaurin estimate of ``sum_{j=lo}^{hi} j ** -sigma`` for lo >= 1000.

    Three Bernoulli correction terms leave an error far below double rounding.
    """
    if sigma == 1.0:
        integral = math.log(hi / lo)
    else:
        integral = (hi ** (1.0 - sigma) - lo ** (1.0 - sigma)) / (1.0 - sigma)
    total = integral + 0.5 * (lo ** -sigma + hi ** -sigma)
    # B_2k / (2k)! times the (2k-1)th derivative of x^-sigma
    coef = (1.0 / 12.0, -1.0 / 720.0, 1.0 / 30240.0)
    rising = sigma
    for k, cf in enumerate(coef):
        order = 2 * k + 1
        if k:
            rising *= (sigma + order - 2) * (sigma + order - 1)
        total += cf * (-rising) * (hi ** (-sigma - order) - lo ** (-sigma - order))
    return total


def stepsize_sum(sigma, start, stop):
    """``sum_{k=start}^{stop} (k + 1) ** -sigma`` (empty sum is 0).

    Long ranges switch to an Euler-Maclaurin tail so that astronomically large
    indices stay cheap.
    """
    if stop < start:
        return 0.0
    lo, hi = start + 1, stop + 1
    if hi - lo < DIRECT_SUM_LIMIT:
        return _power_sum_direct(sigma, lo, hi)
    mid = max(lo, EM_START)
    head = _power_sum_direct(sigma, lo, mid - 1) if mid > lo else 0.0
    return head + _power_sum_em(sigma, mid, hi)


@dataclass(frozen=True, eq=False)
class BoundConstants:
    """Every constant used by the bounds, derived from one system.

    Large constants are stored as natural logs (``log_k_p``, ``log_k_b``,
    ``log_k_1``, ``log_k_2``); the matching properties exponentiate.
    Fields tied to the closed-form expectation estimate (``i0``, ``log_k_b``,
    ``log_k_1``, ``log_k_2``) are ``None`` when ``sigma == 1``; all
    expectation fields are ``None`` for high-probability-only constants.
    """

    d: int
    sigma: float
    gamma: float
    lambda_exp: float
    lambda_hp: float
    k_s: float
    k_m: float
    k_lambda: float
    mu: float
    m: int
    log_k_p: float
    i0: int
    log_k_b: float
    log_k_1: float
    log_k_2: float
    c_star: float
    r0: float
    c_m2: float
    e0: float
    a_norm: float
    a_inv_norm: float
    b_norm: float
    sym_min_eig: float
    q_max_eig: float
    min_real_part: float
    lambda_hp_perturbed: bool = False
    system: object = field(default=None, repr=False)

    @property
    def k_p(self):
        return None if self.log_k_p is None else _exp(self.log_k_p)

    @property
    def k_b(self):
        return None if self.log_k_b is None else _exp(self.log_k_b)

    @property
    def k_1(self):
        return None if self.log_k_1 is None else _exp(self.log_k_1)

    @property
    def k_2(self):
        return None if self.log_k_2 is None else _exp(self.log_k_2)

    @property
    def branch(self):
        return "lambda_gt_half" if self.lambda_hp > 0.5 else "lambda_lt_half"

    def to_dict(self):
        out = {}
        for name in self.__dataclass_fields__:
            if name == "system":
                continue
            out[name] = getattr(self, name)
        out.update(k_p=self.k_p, k_b=self.k_b, k_1=self.k_1, k_2=self.k_2, branch=self.branch)
        return out


# --------------------------------------------------------------------------
# constant derivation


def noise_constant(a_norm, a_inv_norm, b_norm, gamma):
    """``K_m`` such that ``||M_{n+1}|| <= K_m (1 + ||theta_n - theta*||)``."""
    return 0.25 * max(2.0 + (1.0 + gamma) * a_inv_norm * b_norm, 1.0 + gamma + 4.0 * a_norm)


def exact_second_moment_constant(problem, tol=1e-12):
    """Smallest ``K_s`` with ``E||M||^2 <= K_s (1 + ||theta - theta*||^2)``.

    The noise at ``theta`` is ``c + D (theta - theta*)`` per support point
    ``(s, s')``, so its second moment is a quadratic form in
    ``e = theta - theta*``. ``K_s`` is the least ``k`` for which
    ``[[k - E|c|^2, -E[D^T c]^T], [-E[D^T c], k I - E[D^T D]]]`` is positive
    semidefinite, found by bisection.
    """
    spec, nu, system = problem.spec, problem.nu, problem.system
    if spec is None:
        raise InapplicableError("exact K_s needs an MDP-backed problem")
    a = np.asarray(system.a_matrix)
    theta_star = np.asarray(system.theta_star)
    d = system.dim
    phi = spec.features
    m0 = 0.0
    m1 = np.zeros(d)
    m2 = np.zeros((d, d))
    for s in range(spec.n_states):
        for s2 in range(spec.n_states):
            w = nu[s] * spec.transition[s, s2]
            if w == 0.0:
                continue
            g = spec.gamma * phi[s2] - phi[s]
            c = (spec.reward[s, s2] + g @ theta_star) * phi[s]
            dmat = np.outer(phi[s], g) + a
            m0 += w * (c @ c)
            m1 += w * (dmat.T @ c)
            m2 += w * (dmat.T @ dmat)

    def psd(k):
        block = np.zeros((d + 1, d + 1))
        block[0, 0] = k - m0
        block[0, 1:] = -m1
        block[1:, 0] = -m1
        block[1:, 1:] = k * np.eye(d) - m2
        return linalg.sym_eigenvalues(0.5 * (block + block.T))[0] >= -tol * max(1.0, k)

    lo, hi = 0.0, max(1.0, m0 + np.abs(m1).sum() + np.trace(m2)) * 2.0
    while not psd(hi):
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if psd(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-14 * hi:
            break
    return hi


def estimate_k_lambda(a_matrix, lambda_hp, points=K_LAMBDA_POINTS, horizon=K_LAMBDA_HORIZON,
                      safety=K_LAMBDA_SAFETY):
    """Envelope constant with ``||exp(-A t)|| <= K exp(-lambda t)`` for t >= 0.

    Evaluates ``||exp(-A t)|| exp(lambda t)`` on ``points`` equispaced times in
    ``[0, horizon / lambda]`` and returns ``safety`` times the maximum.
    """
    a = linalg.as_matrix(a_matrix, square=True)
    if lambda_hp <= 0:
        raise DomainError("lambda must be positive")
    mrp = linalg.min_real_part(a)
    if mrp <= lambda_hp:
        raise DomainError(f"lambda = {lambda_hp} is not below min real eigenvalue {mrp}")
    ts, norms = exp_norm_grid(a, horizon / lambda_hp, points)
    env = norms * np.exp(lambda_hp * ts)
    if env[-1] > env[-2] * (1.0 + 1e-12):
        raise DomainError(
            f"envelope still growing at t = {ts[-1]:.4g}; lambda = {lambda_hp} is too large"
        )
    return float(safety * max(1.0, env.max()))


def exp_norm_grid(a, t_max, points):
    """``t_i`` and ``||exp(-A t_i)||`` on an equispaced grid over [0, t_max]."""
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    ts = np.linspace(0.0, t_max, points)
    h = ts[1] - ts[0]
    step = linalg.matrix_exponential(-a, h)
    mats = np.empty((points, d, d))
    cur = np.eye(d)
    for i in range(points):
        if i and i % 64 == 0:
            cur = linalg.matrix_exponential(-a, ts[i])
        elif i:
            cur = cur @ step
        mats[i] = cur
    gram = np.einsum("nji,njk->nik", mats, mats)
    w = linalg.sym_eigenvalues_batch(0.5 * (gram + np.swapaxes(gram, 1, 2)))
    return ts, np.sqrt(np.maximum(w[:, -1], 0.0))


def derive_constants(system, sigma, theta0, lambda_exp_fraction=0.9, lambda_hp_fraction=0.9,
                     k_s=None, k_lambda=None, expectation=True):
    """Derive every bound constant for ``system``.

    ``lambda_exp`` and ``lambda_hp`` are the given fractions of
    ``lambda_min(A + A^T)`` and of the smallest real eigenvalue part of
    ``A``. ``k_s`` defaults to ``2 K_m^2``. Raises
    :class:`InapplicableError` when ``A + A^T`` is not positive definite or
    the stepsize threshold ``m`` exceeds its cap. With ``expectation=False``
    only the high-probability constants are derived; the expectation fields
    (``lambda_exp``, ``mu``, ``m``, ``log_k_p`` and the closed-form ones) are
    ``None`` and neither check applies.
    """
    if not 0.0 < sigma <= 1.0:
        raise DomainError(f"sigma must lie in (0, 1], got {sigma}")
    for name, frac in (("lambda_exp_fraction", lambda_exp_fraction),
                       ("lambda_hp_fraction", lambda_hp_fraction)):
        if not 0.0 < frac < 1.0:
            raise DomainError(f"{name} must lie in (0, 1), got {frac}")
    a = np.asarray(system.a_matrix)
    b = np.asarray(system.b_vector)
    d = a.shape[0]
    spec = system.spectral
    if expectation and spec.sym_min_eig <= 0:
        raise InapplicableError(
            f"lambda_min(A + A^T) = {spec.sym_min_eig:.6g} <= 0: expectation bounds need a "
            "positive definite A, so no lambda in (0, lambda_min(A + A^T)) exists"
        )
    if spec.min_real_part <= 0:
        raise InapplicableError(f"A has an eigenvalue with real part {spec.min_real_part:.6g} <= 0")
    theta_star = system.reference
    gamma = 1.0 if system.gamma is None else float(system.gamma)

    a_norm = spec.spectral_norm
    a_inv_norm = linalg.spectral_norm(linalg.solve_linear(a, np.eye(d)))
    b_norm = float(np.linalg.norm(b))
    k_m = noise_constant(a_norm, a_inv_norm, b_norm, gamma)
    if k_s is None:
        k_s = 2.0 * k_m ** 2

    q_max = linalg.sym_extreme_eigenvalues(a.T @ a + k_s * np.eye(d))[1]
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    e0 = float(np.sum((theta0 - theta_star) ** 2))
    lam = mu = m = log_k_p = None
    i0 = log_k_b = log_k_1 = log_k_2 = None
    if expectation:
        lam = lambda_exp_fraction * spec.sym_min_eig
        mu = -spec.sym_min_eig + q_max
        log_m = math.log(q_max / (spec.sym_min_eig - lam)) / sigma
        if log_m > math.log(M_CAP):
            raise InapplicableError(
                f"stepsize threshold index m = {math.exp(log_m):.3e} exceeds cap {M_CAP:.0e}; "
                "use a larger sigma or a smaller lambda fraction"
            )
        m = int(math.ceil(math.exp(log_m) * (1 - 1e-15)))
        log_k_p = max(0.0, (mu + lam) * stepsize_sum(sigma, 0, m))
        if sigma < 1.0:
            i0 = int(math.ceil((2.0 * sigma / lam) ** (1.0 / (1.0 - sigma))))
            log_k_b = 0.5 * lam * stepsize_sum(sigma, 0, i0)
            log_k_1 = log_k_p + lam + _logaddexp(_log(e0), math.log(2.0 * k_s / lam) + log_k_b)
            log_k_2 = math.log(2.0 * k_s / lam) + log_k_p + 0.5 * lam

    lam_hp = lambda_hp_fraction * spec.min_real_part
    perturbed = False
    if lam_hp == 0.5:
        lam_hp = 0.5 * (1.0 - HALF_PERTURBATION)
        perturbed = True
        log.info("lambda_hp was exactly 1/2; using %.12g and the lambda < 1/2 branch", lam_hp)
    if k_lambda is None:
        k_lambda = estimate_k_lambda(a, lam_hp)
    if lam_hp > 0.5:
        c_m2 = 6.0 * k_m * k_lambda * 2.0 ** (lam_hp - 0.5) / math.sqrt(2.0 * lam_hp - 1.0)
    else:
        c_m2 = 6.0 * k_m * k_lambda / math.sqrt(1.0 - 2.0 * lam_hp)

    return BoundConstants(
        d=d, sigma=float(sigma), gamma=gamma, lambda_exp=lam, lambda_hp=lam_hp,
        k_s=float(k_s), k_m=k_m, k_lambda=float(k_lambda), mu=mu, m=m, log_k_p=log_k_p,
        i0=i0, log_k_b=log_k_b, log_k_1=log_k_1, log_k_2=log_k_2,
        c_star=1.0 + float(np.linalg.norm(theta_star)),
        r0=1.0 + math.sqrt(e0),
        c_m2=c_m2, e0=e0, a_norm=a_norm, a_inv_norm=a_inv_norm, b_norm=b_norm,
        sym_min_eig=spec.sym_min_eig, q_max_eig=q_max, min_real_part=spec.min_real_part,
        lambda_hp_perturbed=perturbed, system=system,
    )


# --------------------------------------------------------------------------
# expectation bounds


def _check_schedule(constants, schedule):
    if constants.log_k_p is None:
        raise InapplicableError("constants were derived without the expectation side")
    if schedule.sigma != constants.sigma:
        raise DomainError(
            f"schedule sigma {schedule.sigma} differs from constants sigma {constants.sigma}"
        )


def lambda_n_sequence(constants, schedule, n):
    """``lambda_max(Lambda_n)`` and its Weyl upper bound.

    ``Lambda_n = I - alpha_n (A + A^T) + alpha_n^2 (A^T A + K_s I)``. ``n`` may
    be a scalar or an array; returns ``(exact, weyl)`` of matching shape.
    """
    a = np.asarray(constants.system.a_matrix)
    d = a.shape[0]
    sym = a + a.T
    q = a.T @ a + constants.k_s * np.eye(d)
    al = schedule.alpha(np.atleast_1d(n))
    stack = np.eye(d) - al[:, None, None] * sym + (al ** 2)[:, None, None] * q
    exact = linalg.sym_eigenvalues_batch(stack)[:, -1]
    weyl = 1.0 - al * constants.sym_min_eig + al ** 2 * constants.q_max_eig
    if np.ndim(n) == 0:
        return float(exact[0]), float(weyl[0])
    return exact, weyl


def log_product_bound(constants, schedule, k, n):
    _check_schedule(constants, schedule)
    if n < k or k < 0:
        raise DomainError("need n >= k >= 0")
    return constants.log_k_p - constants.lambda_exp * stepsize_sum(schedule.sigma, k, n)


def product_bound(constants, schedule, k, n):
    """``K_p exp(-lambda sum_{i=k}^{n} alpha_i)``, which dominates
    ``prod_{i=k}^{n} lambda_max(Lambda_i)``."""
    return _exp(log_product_bound(constants, schedule, k, n))


def product_dominance_excess(constants, schedule, n_max):
    """Largest ``log prod_{i=k}^{n} |lambda_max(Lambda_i)| - log product_bound(k, n)``
    over ``0 <= k <= n <= n_max``; non-positive means the bound dominates.

    With ``c_i = log |lambda_i| + lambda alpha_i`` the excess for ``(k, n)`` is
    ``sum_{i=k}^{n} c_i - log K_p``, so the worst pair is a maximum-subarray
    problem solved in one pass. Returns ``(excess, k, n)``.
    """
    _check_schedule(constants, schedule)
    exact, _ = lambda_n_sequence(constants, schedule, np.arange(n_max + 1))
    with np.errstate(divide="ignore"):
        c = np.log(np.abs(exact)) + constants.lambda_exp * schedule.alphas(n_max + 1)
    best, best_k, best_n = -math.inf, 0, 0
    run, run_k = -math.inf, 0
    for i, ci in enumerate(c.tolist()):
        if run < 0.0:
            run, run_k = ci, i
        else:
            run += ci
        if run > best:
            best, best_k, best_n = run, run_k, i
    return best - constants.log_k_p, best_k, best_n


def log_expectation_bound_general_curve(constants, schedule, n_max, e0=None):
    """Log of the sum-form bound on ``E||theta_{n+1} - theta*||^2`` for
    ``n = 0 .. n_max``, in O(n_max)."""
    _check_schedule(constants, schedule)
    e0 = constants.e0 if e0 is None else float(e0)
    lam = constants.lambda_exp
    al = schedule.alphas(n_max + 1)
    s = np.cumsum(al)
    # g_n = sum_i exp(-lam sum_{k=i+1}^n alpha_k) alpha_i^2 = exp(-lam alpha_n) g_{n-1} + alpha_n^2
    g = np.empty(n_max + 1)
    acc = 0.0
    decay = np.exp(-lam * al)
    sq = al ** 2
    for i in range(n_max + 1):
        acc = decay[i] * acc + sq[i]
        g[i] = acc
    with np.errstate(divide="ignore"):
        first = np.log(e0) - lam * s if e0 > 0 else np.full(n_max + 1, -np.inf)
        second = np.log(constants.k_s * g) if constants.k_s > 0 else np.full(n_max + 1, -np.inf)
    return constants.log_k_p + np.logaddexp(first, second)


def expectation_bound_general(constants, schedule, n, e0=None):
    """Sum-form bound on ``E||theta_{n+1} - theta*||^2``.

    ``K_p exp(-lambda S_n) e0 + K_s K_p sum_{i<=n} exp(-lambda (S_n - S_i)) alpha_i^2``
    with ``S_n = alpha_0 + ... + alpha_n``. ``e0`` is ``E||theta_0 - theta*||^2``.
    """
    return _exp(log_expectation_bound_general_curve(constants, schedule, int(n), e0)[-1])


def log_closed_form(log_k1, log_k2, lam, sigma, n):
    n = np.asarray(n, dtype=float)
    return np.logaddexp(log_k1 - 0.5 * lam * n ** (1.0 - sigma), log_k2 - sigma * np.log(n))


def closed_form(k1, k2, lam, sigma, n):
    """``k1 exp(-(lam / 2) n^(1 - sigma)) + k2 / n^sigma``."""
    n = np.asarray(n, dtype=float)
    return k1 * np.exp(-0.5 * lam * n ** (1.0 - sigma)) + k2 * n ** (-sigma)


def _check_closed(constants, sigma, n):
    if sigma >= 1.0:
        raise DomainError(
            "closed-form expectation bound needs sigma < 1; for sigma = 1 use the "
            "high-probability bounds"
        )
    if sigma != constants.sigma:
        raise DomainError(f"sigma {sigma} differs from constants sigma {constants.sigma}")
    if np.any(np.asarray(n) < 1):
        raise DomainError("closed-form bound holds for n >= 1")


def log_expectation_bound_closed(constants, sigma, n):
    _check_closed(constants, sigma, n)
    return log_closed_form(constants.log_k_1, constants.log_k_2, constants.lambda_exp, sigma, n)


def expectation_bound_closed(constants, sigma, n):
    """Closed-form bound ``K_1 exp(-(lambda/2) n^(1-sigma)) + K_2 / n^sigma``
    on ``E||theta_n - theta*||^2``, for ``n >= 1`` and ``sigma < 1``."""
    out = np.exp(log_expectation_bound_closed(constants, sigma, n))
    return float(out) if np.ndim(out) == 0 else out


def crossover_index(log_k1, log_k2, lam, sigma, n_max=10 ** 12):
    """First ``n >= 1`` where the noise term ``K_2 / n^sigma`` exceeds the
    noiseless term ``K_1 exp(-(lam/2) n^(1-sigma))``; ``None`` past ``n_max``."""

    def noise_wins(n):
        return log_k2 - sigma * math.log(n) > log_k1 - 0.5 * lam * n ** (1.0 - sigma)

    if noise_wins(1):
        return 1
    hi = 2
    while not noise_wins(hi):
        hi *= 2
        if hi > n_max:
            return None
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if noise_wins(mid):
            hi = mid
        else:
            lo = mid
    return hi


# --------------------------------------------------------------------------
# high-probability machinery


def noise_envelope(constants, err):
    """``K_m (1 + ||theta_n - theta*||)``."""
    return constants.k_m * (1.0 + np.asarray(err))


def worst_case_radius(constants, n):
    """``R_wc(n) = (n + 1) C_* R_0``."""
    return (np.asarray(n, dtype=float) + 1.0) * constants.c_star * constants.r0


def _disc_constant(c):
    return 6.0 * c.k_lambda * c.a_norm * (c.a_norm + 2.0 * c.k_m) / c.lambda_hp


def discretization_bound(constants, n0, n_prime):
    """Upper bound on ``||E^d_[n', n+1]||`` on the good event ``G_{n0, n}``."""
    c = constants
    return (_disc_constant(c) / 3.0) * (n0 + 1) * c.c_star * c.r0 / (n_prime + 1)


def discretization_thresholds(constants, n0, epsilon):
    """Lower bounds on ``n0`` and ``nc`` (discretization-error form)."""
    c = constants
    n0_min = _disc_constant(c)
    r = float(worst_case_radius(c, n0))
    nc_min = (1.0 + n0_min * c.c_star * c.r0 / min(epsilon, r)) * (n0 + 1)
    return n0_min, nc_min


def _check_branch(constants):
    if constants.lambda_hp == 0.5:
        raise DomainError("lambda_hp = 1/2 has no concentration constant; perturb it")


def log_concentration_tail(constants, n0, n_prime, n, radius):
    c = constants
    _check_branch(c)
    if not n >= n_prime >= n0 >= 1:
        raise DomainError("need n >= n' >= n0 >= 1")
    if radius <= 0:
        raise DomainError("radius must be positive")
    d = c.d
    rwc = float(worst_case_radius(c, n0))
    denom = 2.0 * d ** 3 * c.c_m2 ** 2 * rwc ** 2
    if c.lambda_hp > 0.5:
        expo = (n + 1) * radius ** 2 / denom
    else:
        lam = c.lambda_hp
        expo = (n_prime + 1) ** (1 - 2 * lam) * (n + 1) ** (2 * lam) * radius ** 2 / denom
    return math.log(2.0 * d ** 2) - expo


def concentration_tail(constants, n0, n_prime, n, radius):
    """Bound on ``P(G_{n0,n}, ||E^m_[n', n+1]|| >= radius)``, clamped to 1."""
    return min(1.0, _exp(log_concentration_tail(constants, n0, n_prime, n, radius)))


def event_prerequisites(constants, n0, nc, epsilon):
    """Failed conditions for the bad-event bounds, as readable strings."""
    c = constants
    failed = []
    n0_disc = _disc_constant(c)
    if n0 < n0_disc:
        failed.append(f"n0 = {n0} < 6 K_lambda ||A|| (||A|| + 2 K_m) / lambda = {n0_disc:.6g}")
    if n0 < 2.0 ** (1.0 / c.lambda_hp):
        failed.append(f"n0 = {n0} < 2^(1/lambda) = {2.0 ** (1.0 / c.lambda_hp):.6g}")
    if nc is not None:
        nc_min = nc_threshold(c, n0, epsilon)
        if nc < nc_min:
            failed.append(f"nc = {nc} < {nc_min:.6g}")
    return failed


def log_nc_threshold(constants, n0, epsilon):
    """log of the smallest admissible ``nc`` for the after-event bound (min(eps, R_wc) form)."""
    r = float(worst_case_radius(constants, n0))
    log_ratio = math.log(_disc_constant(constants)) - math.log(min(epsilon, r))
    return float(np.logaddexp(0.0, log_ratio)) + math.log(r)


def nc_threshold(constants, n0, epsilon):
    """Smallest admissible ``nc`` for the after-event bound (min(eps, R_wc) form)."""
    return _exp(log_nc_threshold(constants, n0, epsilon))


def log_n1_threshold(constants, epsilon, nc, n0):
    """log of ``(nc + 1) (6 K_lambda R_wc(n0) / eps)^(1/lambda)``; ``N_1`` is this minus n0."""
    c = constants
    r = float(worst_case_radius(c, n0))
    return (math.log(nc + 1) + (math.log(6.0 * c.k_lambda) + math.log(r) - math.log(epsilon))
            / c.lambda_hp)


@dataclass(frozen=True)
class EventBounds:
    p_mid: float
    p_after: float
    log_p_mid: float
    log_p_after: float
    failed: tuple

    @property
    def applicable(self):
        return not self.failed


def event_probability_bounds(constants, n0, nc, epsilon):
    """Bounds on ``P(E^mid)`` and ``P(E^after)`` for the applicable branch.

    Prerequisite failures are listed in ``failed`` (the values are still
    evaluated so callers can see them, but must not rely on them).
    """
    c = constants
    _check_branch(c)
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    d = c.d
    c2 = c.c_m2 ** 2
    lam = c.lambda_hp
    r = float(worst_case_radius(c, n0))
    if lam > 0.5:
        log_mid = math.log(16.0 * d ** 5 * c2) - n0 / (8.0 * d ** 3 * c2)
        log_rate = (math.log(6.0 * c.k_lambda) / lam - math.log(18.0 * d ** 3 * c2)
                    + math.log(nc + 1) + (2.0 - 1.0 / lam) * math.log(epsilon / r))
        log_after = (math.log(36.0 * d ** 5 * c2) + 2.0 * math.log(r / epsilon)
                     - _exp(log_rate))
    else:
        log_mid = (math.log(2.0 * d ** 2)
                   + math.log(8.0 * d ** 3 * c2 / lam) / (2.0 * lam)
                   - n0 / (64.0 * d ** 3 * c2)
                   - (1.0 - 2.0 * lam) / (2.0 * lam) * math.log(n0 + 1))
        log_after = (math.log(2.0 * d ** 2)
                     + math.log(18.0 * d ** 3 * c2 * r ** 2 / (epsilon ** 2 * lam)) / (2.0 * lam)
                     - c.k_lambda ** 2 / (4.0 * d ** 3 * c2) * (nc + 1))
    return EventBounds(
        p_mid=min(1.0, _exp(log_mid)),
        p_after=min(1.0, _exp(log_after)),
        log_p_mid=log_mid,
        log_p_after=log_after,
        failed=tuple(event_prerequisites(c, n0, nc, epsilon)),
    )


@dataclass(frozen=True)
class SampleComplexity:
    """Integer thresholds ``n0 = ceil(N_0)``, ``nc = ceil(N_c)``,
    ``n1 = ceil(N_1)`` and ``n_total = n0 + n1``.

    The ``log10_*`` fields are always finite. When a count is beyond float
    range (``astronomical``) the integer fields hold ``None``.
    """

    n0: int
    nc: int
    n1: int
    n_total: int
    branch: str
    log10_n0: float
    log10_nc: float
    log10_n1: float
    log10_n_total: float
    astronomical: bool


def _ceil_from_log(log_value):
    if log_value / math.log(10.0) > 300:
        return None
    return int(math.ceil(math.exp(log_value)))


def sample_complexity(constants, epsilon, delta):
    """Evaluate ``N_0(delta)``, ``N_c(eps, delta, n0)`` and ``N_1(eps, nc, n0)``."""
    c = constants
    _check_branch(c)
    if epsilon <= 0:
        raise DomainError("epsilon must be positive")
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    d = c.d
    c2 = c.c_m2 ** 2
    lam = c.lambda_hp
    disc = _disc_constant(c)
    if lam > 0.5:
        branch = "lambda_gt_half"
        n0_val = max(disc, 2.0 ** (1.0 / lam),
                     8.0 * d ** 3 * c2 * math.log(32.0 * d ** 5 * c2 / delta))
    else:
        branch = "lambda_lt_half"
        n0_val = max(disc, 2.0 ** (1.0 / lam),
                     64.0 * d ** 3 * c2 / (2.0 * lam) * math.log(32.0 * d ** 5 * c2 / (delta * lam)))
    n0 = int(math.ceil(n0_val))
    r = float(worst_case_radius(c, n0))
    log_first = log_nc_threshold(c, n0, epsilon)
    log_r_eps = math.log(r) - math.log(epsilon)
    if lam > 0.5:
        log_inner = math.log(72.0 * d ** 5 * c2 / delta) + 2.0 * log_r_eps
        log_second = (math.log(18.0 * d ** 3 * c2) - math.log(6.0 * c.k_lambda) / lam
                      + (2.0 - 1.0 / lam) * log_r_eps + math.log(log_inner))
    else:
        log_inner = math.log(72.0 * d ** 5 * c2 / lam / delta) + 2.0 * log_r_eps
        log_second = (math.log(4.0 * d ** 3 * c2 / (2.0 * lam))
                      - 2.0 * math.log(c.k_lambda) + math.log(log_inner))
    log_nc = max(log_first, log_second)
    nc = _ceil_from_log(log_nc)
    # with nc astronomically large, nc + 1 == nc in log space
    log_n1_plus = (log_n1_threshold(c, epsilon, nc, n0) if nc is not None else
                   log_nc + (math.log(6.0 * c.k_lambda) + log_r_eps) / lam)
    plus = _ceil_from_log(log_n1_plus)
    if plus is not None and log_n1_plus < 30:
        n1 = max(0, int(math.ceil(math.exp(log_n1_plus) - n0)))
        log_n1 = math.log(max(n1, 1))
    else:
        n1 = None if plus is None else max(0, plus - n0)
        log_n1 = log_n1_plus
    n_total = None if n1 is None else n0 + n1
    log_total = _logaddexp(math.log(n0), log_n1) if n1 != 0 else math.log(n0)
    ln10 = math.log(10.0)
    return SampleComplexity(
        n0=n0, nc=nc, n1=n1, n_total=n_total, branch=branch,
        log10_n0=math.log10(n0), log10_nc=log_nc / ln10, log10_n1=log_n1 / ln10,
        log10_n_total=log_total / ln10, astronomical=n_total is None,
    )


def with_overrides(constants, **changes):
    """Copy of ``constants`` with some fields replaced (for what-if checks)."""
    return replace(constants, **changes)

"""Finite-MDP policy evaluation problems.

A policy is fixed, so the chain is described by a transition matrix
``P[s, s']``, rewards ``R[s, s']`` and a feature table whose row ``s`` is
``phi(s)``. From these we build the driving matrix ``A``, the vector ``b`` and
the TD fixed point ``theta* = A^{-1} b``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .exceptions import (
    AssumptionError,
    DimensionError,
    ErgodicityError,
    SingularMatrixError,
)

STOCHASTIC_TOL = 1e-12
FEATURE_BOUND = 0.5
REWARD_BOUND = 1.0


def _frozen(x):
    x = np.array(x, dtype=float, copy=True)
    x.flags.writeable = False
    return x


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Finite MDP under a fixed policy.

    Parameters
    ----------
    transition : (n, n) array
        Row-stochastic ``P(s' | s)``.
    reward : (n, n) array
        ``R(s, s')``.
    features : (n, d) array
        Row ``s`` is ``phi(s)``.
    gamma : float
        Discount factor in ``[0, 1)``.
    """

    transition: np.ndarray
    reward: np.ndarray
    features: np.ndarray
    gamma: float

    def __post_init__(self):
        p = linalg.as_matrix(self.transition, square=True, name="transition")
        n = p.shape[0]
        r = linalg.as_matrix(self.reward, name="reward")
        f = linalg.as_matrix(self.features, name="features")
        if r.shape != (n, n):
            raise DimensionError(f"reward must be {n}x{n}, got {r.shape}")
        if f.shape[0] != n:
            raise DimensionError(f"features must have {n} rows, got {f.shape[0]}")
        if np.any(p < 0):
            raise ValueError("transition has negative entries")
        rowsum = p.sum(axis=1)
        bad = np.flatnonzero(np.abs(rowsum - 1.0) > STOCHASTIC_TOL)
        if bad.size:
            raise ValueError(f"transition rows {bad.tolist()} do not sum to 1")
        if not 0.0 <= float(self.gamma) < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        object.__setattr__(self, "transition", _frozen(p))
        object.__setattr__(self, "reward", _frozen(r))
        object.__setattr__(self, "features", _frozen(f))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "features": self.features.tolist(),
        }


@dataclass(frozen=True)
class A2Violation:
    kind: str  # "feature" or "reward"
    states: tuple
    value: float

    def __str__(self):
        if self.kind == "feature":
            return f"||phi({self.states[0]})|| = {self.value:.6g} exceeds {FEATURE_BOUND}"
        return f"|R{self.states}| = {self.value:.6g} exceeds {REWARD_BOUND}"


def validate_a2(spec):
    """List every violation of the bounded features / rewards assumption.

    An empty list means ``||phi(s)|| <= 1/2`` for all states and
    ``|R(s, s')| <= 1`` for all pairs.
    """
    out = []
    norms = np.sqrt(np.sum(spec.features ** 2, axis=1))
    for s in np.flatnonzero(norms > FEATURE_BOUND):
        out.append(A2Violation("feature", (int(s),), float(norms[s])))
    mag = np.abs(spec.reward)
    for s, s2 in zip(*np.nonzero(mag > REWARD_BOUND)):
        out.append(A2Violation("reward", (int(s), int(s2)), float(spec.reward[s, s2])))
    return out


def stationary_distribution(spec):
    """Stationary law of the policy-induced chain.

    Solves ``(P^T - I) nu = 0`` with the last equation replaced by
    ``sum(nu) = 1``. Raises :class:`ErgodicityError` if that system is
    singular or any state has (numerically) zero mass.
    """
    p = spec.transition
    n = p.shape[0]
    m = p.T - np.eye(n)
    m[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        nu = linalg.solve_linear(m, rhs)
    except SingularMatrixError as exc:
        raise ErgodicityError(f"chain is not ergodic/unichain: {exc}") from None
    low = np.flatnonzero(nu <= 1e-12)
    if low.size:
        raise ErgodicityError(f"states {low.tolist()} have stationary mass <= 1e-12")
    nu = nu / nu.sum()
    drift = np.max(np.abs(nu @ p - nu))
    if drift > 1e-10:
        raise ErgodicityError(f"nu^T P deviates from nu^T by {drift:.3e}")
    return nu


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """The pair ``(A, b)`` driving the TD(0) mean dynamics.

    ``theta_star`` is ``None`` when ``A`` is singular; ``theta_ref`` then
    carries an externally supplied point with ``A theta_ref = b``.
    ``spectral.sym_min_eig``/``sym_max_eig`` refer to ``A + A^T``.
    """

    a_matrix: np.ndarray
    b_vector: np.ndarray
    theta_star: np.ndarray = None
    spectral: linalg.SpectralSummary = None
    origin: str = "raw"
    gamma: float = None
    theta_ref: np.ndarray = None

    @property
    def dim(self):
        return self.a_matrix.shape[0]

    @property
    def singular(self):
        return self.theta_star is None

    @property
    def reference(self):
        """Point the iterates are measured against."""
        return self.theta_star if self.theta_star is not None else self.theta_ref

    @classmethod
    def raw(cls, a_matrix, b_vector, theta_ref=None, gamma=None):
        """Build a system directly from ``(A, b)``; no MDP behind it."""
        a = linalg.as_matrix(a_matrix, square=True, name="A")
        b = np.asarray(b_vector, dtype=float).reshape(-1)
        if b.shape[0] != a.shape[0]:
            raise DimensionError(f"b has length {b.shape[0]}, A is {a.shape}")
        try:
            theta_star = linalg.solve_linear(a, b)
        except SingularMatrixError:
            theta_star = None
        ref = None
        if theta_ref is not None:
            ref = np.asarray(theta_ref, dtype=float).reshape(-1)
            if ref.shape != b.shape:
                raise DimensionError("theta_ref length does not match b")
            ref = _frozen(ref)
        return cls(
            a_matrix=_frozen(a),
            b_vector=_frozen(b),
            theta_star=None if theta_star is None else _frozen(theta_star),
            spectral=linalg.spectral_summary(a),
            origin="raw",
            gamma=gamma,
            theta_ref=ref,
        )


def compute_system(spec, nu=None):
    """Exact ``A = E[phi (phi - gamma phi')^T]``, ``b = E[r phi]`` and ``theta*``.

    Expectations are over ``s ~ nu`` and ``s' ~ P(. | s)``.
    """
    if nu is None:
        nu = stationary_distribution(spec)
    phi = spec.features
    p = spec.transition
    weighted = phi * nu[:, None]
    a = weighted.T @ (phi - spec.gamma * (p @ phi))
    mean_reward = np.sum(p * spec.reward, axis=1)
    b = weighted.T @ mean_reward
    summary = linalg.spectral_summary(a)
    if not summary.sym_min_eig > 0:
        raise AssumptionError(
            f"A is not positive definite: lambda_min(A + A^T) = {summary.sym_min_eig:.6g}"
        )
    theta_star = linalg.solve_linear(a, b)
    return LinearSystem(
        a_matrix=_frozen(a),
        b_vector=_frozen(b),
        theta_star=_frozen(theta_star),
        spectral=summary,
        origin="mdp",
        gamma=spec.gamma,
    )


@dataclass(frozen=True)
class Sample:
    phi: np.ndarray
    phi_next: np.ndarray
    reward: float


def _cumulative(p):
    c = np.cumsum(p, axis=-1)
    c[..., -1] = 1.0
    return c


def states_from_uniforms(spec, nu, u_state, u_next):
    """Map uniforms to ``(s, s')`` with ``s ~ nu`` and ``s' ~ P(. | s)``."""
    n = spec.n_states
    s = np.minimum(np.searchsorted(_cumulative(nu), u_state, side="right"), n - 1)
    cum_p = _cumulative(spec.transition)
    s_next = np.minimum(np.sum(u_next[..., None] >= cum_p[s], axis=-1), n - 1)
    return s, s_next


def draw_sample(spec, nu, rng):
    """One iid transition ``(phi(s), phi(s'), R(s, s'))``; advances ``rng``."""
    u = rng.random(2)
    s, s_next = states_from_uniforms(spec, nu, u[:1], u[1:])
    s, s_next = int(s[0]), int(s_next[0])
    return Sample(
        phi=spec.features[s].copy(),
        phi_next=spec.features[s_next].copy(),
        reward=float(spec.reward[s, s_next]),
    )


def sample_transitions(spec, nu, n_samples, rng):
    """Draw ``n_samples`` iid transitions as arrays ``(Phi, rewards, Phi_next)``."""
    u = rng.random((n_samples, 2))
    s, s_next = states_from_uniforms(spec, nu, u[:, 0], u[:, 1])
    return spec.features[s], spec.reward[s, s_next], spec.features[s_next]


@dataclass(frozen=True, eq=False)
class Problem:
    """A linear system plus, when it came from an MDP, the MDP and its law."""

    system: LinearSystem
    spec: MdpSpec = None
    nu: np.ndarray = None
    name: str = ""
    a2_violations: tuple = field(default=())

    @classmethod
    def from_spec(cls, spec, name="", check_a2=True):
        """Build from an MDP. With ``check_a2`` any violation is an error."""
        violations = tuple(validate_a2(spec))
        if check_a2 and violations:
            raise AssumptionError(
                "bounded features/rewards violated: " + "; ".join(map(str, violations))
            )
        nu = stationary_distribution(spec)
        return cls(compute_system(spec, nu), spec, _frozen(nu), name, violations)

    @classmethod
    def raw(cls, a_matrix, b_vector, theta_ref=None, name=""):
        return cls(LinearSystem.raw(a_matrix, b_vector, theta_ref), name=name)

    @property
    def dim(self):
        return self.system.dim

    @property
    def has_sampler(self):
        return self.spec is not None

    @property
    def a2_valid(self):
        return self.spec is not None and not self.a2_violations

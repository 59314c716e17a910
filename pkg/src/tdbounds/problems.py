"""Built-in problems used by the tests, the CLI and the examples in the README."""
import numpy as np

from .engine import NoiseModel
from .mdp import MdpSpec, Problem


def const_chain(gamma=0.5):
    """Two states, uniform transitions, reward 1 and feature 0.5 everywhere.

    Every sample is identical, so sampled TD(0) coincides with its mean
    dynamics. ``A = 0.25 (1 - gamma)``, ``b = 0.5`` and ``theta* = 2 / (1 - gamma)``.
    """
    spec = MdpSpec(
        transition=[[0.5, 0.5], [0.5, 0.5]],
        reward=[[1.0, 1.0], [1.0, 1.0]],
        features=[[0.5], [0.5]],
        gamma=gamma,
    )
    return Problem.from_spec(spec, name="const-chain")


NOISY_TRANSITION = [[0.7, 0.3], [0.4, 0.6]]
NOISY_REWARD = [[0.3, -0.3], [0.6, -0.2]]
NOISY_FEATURES = [[0.2], [0.5]]


def noisy_chain(gamma=0.3):
    """Two states with distinct features (0.2, 0.5) and heterogeneous rewards."""
    spec = MdpSpec(NOISY_TRANSITION, NOISY_REWARD, NOISY_FEATURES, gamma)
    return Problem.from_spec(spec, name="noisy-chain")


def scaled_chain(scale=4.0, gamma=0.5):
    """The noisy chain with features multiplied by ``scale``.

    Large features push the smallest eigenvalue of ``A`` above 1, which the
    bounded-feature assumption rules out; that check is therefore skipped.
    """
    feats = np.asarray(NOISY_FEATURES) * scale
    spec = MdpSpec(NOISY_TRANSITION, NOISY_REWARD, feats, gamma)
    return Problem.from_spec(spec, name=f"scaled-chain-{scale:g}", check_a2=False)


def counterexample():
    """Singular system ``A = [[1, 1], [0, 0]]``, ``b = [2, 0]``.

    ``A`` has eigenvalues 1 and 0, so there is no unique fixed point;
    ``[1, 1]`` is used as the reference equilibrium.
    """
    return Problem.raw([[1.0, 1.0], [0.0, 0.0]], [2.0, 0.0], theta_ref=[1.0, 1.0],
                       name="counterexample")


def counterexample_noise():
    """``M_{n+1} = [1, 1] Z (theta_n[1] - 1)`` with Rademacher ``Z``."""
    return NoiseModel.bernoulli_rank_one(direction=(1.0, 1.0), coordinate=1,
                                         reference=(1.0, 1.0))


def random_mdp(n_states, dim, seed, gamma=0.9, feature_radius=0.5):
    """Random bounded-feature MDP with Dirichlet transitions.

    Rewards are uniform on [-1, 1]; each feature row has norm uniform in
    ``[0.2, 1] * feature_radius``. Redraws until the feature matrix has full
    column rank, which makes ``A`` positive definite.
    """
    if dim > n_states:
        raise ValueError("dim must not exceed n_states")
    rng = np.random.default_rng(seed)
    while True:
        p = rng.dirichlet(np.ones(n_states), size=n_states)
        r = rng.uniform(-1.0, 1.0, size=(n_states, n_states))
        f = rng.normal(size=(n_states, dim))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        f *= feature_radius * rng.uniform(0.2, 1.0, size=(n_states, 1))
        if np.linalg.matrix_rank(f) == dim and p.min() > 1e-6:
            break
    spec = MdpSpec(p, r, f, gamma)
    return Problem.from_spec(spec, name=f"random-{n_states}x{dim}-{seed}")


BUILTIN = {
    "const-chain": const_chain,
    "noisy-chain": noisy_chain,
    "scaled-chain": scaled_chain,
    "counterexample": counterexample,
}


def builtin(name):
    try:
        return BUILTIN[name]()
    except KeyError:
        raise ValueError(f"unknown built-in problem {name!r}; choose from {sorted(BUILTIN)}") from None

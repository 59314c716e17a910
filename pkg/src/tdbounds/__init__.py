"""TD(0) with linear features: simulation, finite-sample bounds and
Monte Carlo checks of those bounds."""
from .bounds import (
    BoundConstants,
    SampleComplexity,
    concentration_tail,
    derive_constants,
    estimate_k_lambda,
    event_probability_bounds,
    expectation_bound_closed,
    expectation_bound_general,
    lambda_n_sequence,
    product_bound,
    sample_complexity,
)
from .engine import (
    NoiseModel,
    StepsizeSchedule,
    TrajectoryRecord,
    decompose_error,
    extract_noise,
    interpolate,
    ode_solution,
    run_trajectory,
    td0_step,
)
from .estimator import TD0Regressor
from .mdp import LinearSystem, MdpSpec, Problem, Sample, compute_system, draw_sample, \
    stationary_distribution, validate_a2

__version__ = "0.1.0"

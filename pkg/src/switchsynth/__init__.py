"""Interval abstraction and switching-strategy synthesis for linear
switched stochastic systems with additive Gaussian noise."""

from .abstraction import (
    BuildError,
    EmptyGrid,
    HybridSystem,
    Imdp,
    build_imdp,
    discretize,
    label_states,
    validate,
)
from .bridge import (
    CtHybridSystem,
    CtModeDynamics,
    bridge_moments,
    ct_safety_imdp,
    matrix_exp,
    sample_dynamics,
    tc_lower,
    tc_upper,
)
from .geometry import (
    HyperRectangle,
    Parallelotope,
    Polytope,
    contains,
    intersects,
    minkowski_sum,
    post_image,
    uniform_grid,
    volume,
)
from .kernel import (
    ActionKernel,
    ModeDynamics,
    ProbInterval,
    SingularCovariance,
    Whitening,
    erf_product,
    grad_log_f,
    make_action,
    max_f_over_polytope,
    min_f_over_polytope,
    sink_bounds,
    transition_bounds,
    whitening,
)
from .logic import (
    Dfa,
    bar_translate,
    dfa_run,
    parse_formula,
    read_dfa,
    template_dfa,
    write_dfa,
)
from .pipeline import (
    build_abstraction,
    dfa_for_formula,
    synthesize,
    verification,
)
from .synthesis import (
    NonConvergence,
    ProductImdp,
    RefinedStrategy,
    Strategy,
    error_metrics,
    estimate_satisfaction,
    o_extreme,
    product,
    project_bounds,
    simulate,
    synthesize_lower,
    upper_under_strategy,
    verify,
    wilson_halfwidth,
)

__version__ = "0.1.0"

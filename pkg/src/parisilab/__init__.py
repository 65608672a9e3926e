"""Numerical laboratory for mixed p-spin Parisi functionals, cascades and finite systems."""

from .errors import CapacityError, ConfigError, DomainError, NumericError, OrderParameterError, ParisiLabError
from .mixture import MixtureSpec, absorb_beta, sk
from .order_parameter import FunctionalOrderParameter
from .parisi_recursion import QuadratureSpec, ParisiValue, annealed_value, derivative_beta_p, evaluate, parisi_value
from .parisi_search import SearchOptions, SearchResult, minimize_fixed_r, refine_r
from .cascades import (
    CascadeTree,
    OverlapSampleSet,
    parisi_via_cascade,
    sample_cascade,
    sample_cascade_replicas,
    sample_replicas,
    truncation_shift,
)
from .finite_gibbs import (
    GAUSSIAN,
    RADEMACHER,
    DisorderModel,
    SpinSystem,
    SystemParams,
    ass_increment,
    ass_telescoping,
    exact_log_partition,
    free_energy,
    sample_gibbs_replicas,
    sample_system,
    universality_gap,
)
from .guerra import GuerraRun, InterpolationPoint, guerra_gap, phi, phi_grid
from .diagnostics import (
    ConstraintMatrix,
    TestReport,
    ac_stability_test,
    gg_delta,
    invariance_check,
    joint_overlap_probability,
    positivity_check,
    ultrametricity_violation,
)

__version__ = "0.1.0"

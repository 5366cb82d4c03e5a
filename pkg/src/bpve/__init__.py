"""Monte Carlo toolkit for branching processes in varying and random
environments: offspring laws, environment sequences, exact simulation,
convergence-condition checkers, and estimators verifying that the
normalized population is either zero or of the order of its mean."""

from .distributions import (
    NotApplicableError,
    OffspringDistribution,
    PhiFunction,
    PopulationOverflowError,
    UnsupportedDistributionError,
)
from .environment import (
    EnvironmentSpec,
    Mixer,
    PRESETS,
    QuenchedEnvironment,
    cooling_preset,
    critical_preset,
    heavy_tail_supercritical_preset,
    quench,
    subcritical_preset,
    supercritical_preset,
)
from .simulate import (
    Trajectory,
    halving_first_passage,
    path_functional,
    simulate_trajectory,
    trajectory_csv,
)
from .conditions import (
    ConditionReport,
    TightnessTable,
    fractional_variance_series,
    increment_variance_series,
    jagers_sum,
    moment_ratio_sup,
    psi_series,
    tightness_diagnostic,
    variance_series,
)
from .estimators import (
    ConditionedSummary,
    EqualityCheck,
    HalvingResult,
    McEstimate,
    PathSpreadSummary,
    collect_w,
    mc_conditioned_critical,
    mc_flt_discrepancy,
    mc_halving_bound,
    mc_increment_covariance,
    mc_l2_increment,
    mc_l2_span,
    mc_survival,
    mc_w_positivity,
)
from .streams import substream

__version__ = "0.1.0"

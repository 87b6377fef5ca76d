"""stablab: a numerical laboratory for the algorithmic stability of SGM.

Trains the stochastic gradient method on pairs of neighboring datasets with
coupled randomness, measures divergence and loss deviation empirically, and
verifies the measurements against closed-form uniform-stability and
excess-risk bounds.
"""

from .core import (
    CertificationError,
    ContractError,
    DataDistribution,
    Dataset,
    Estimate,
    Example,
    FiniteSupportDistribution,
    LossFunction,
    NeighborPair,
    ParamVector,
    RegularityConstants,
    empirical_risk,
    finite_diff_gradient_check,
    load_dataset_csv,
    make_neighbor,
    population_risk_estimate,
    save_dataset_csv,
)
from .problems import (
    LeastSquaresLoss,
    LogisticLoss,
    SigmoidLoss,
    SyntheticDistribution,
    TinyMLPLoss,
    certify_constants,
    check_cocoercivity,
    check_strong_convexity_inequality,
    estimate_constants_empirical,
    synthetic_dataset,
)
from .rules import (
    ClippedRule,
    DropoutRule,
    GradientRule,
    ProjectedRule,
    ProximalRule,
    RuleCertificate,
    Schedule,
    WeightDecayRule,
    certify,
    empirical_boundedness,
    empirical_expansiveness,
)
from .engine import (
    RunConfig,
    SamplingScheme,
    Trajectory,
    average_iterates,
    index_sequence,
    run_sgm,
)
from .lab import (
    GapEstimate,
    PairedTrace,
    StabilityEstimate,
    early_vs_late_substitution,
    estimate_generalization_gap,
    estimate_stability,
    hit_time_distribution,
    run_paired,
)
from .bounds import (
    AveragingBound,
    BoundReport,
    NonconvexBound,
    averaging_bound,
    convex_bound,
    erm_vs_population_oracle,
    growth_recursion_unroll,
    multipass_risk_bound,
    nonconvex_bound,
    ny_risk_bound,
    risk_decomposition,
    strongly_convex_bound,
    strongly_convex_decaying_bound,
)
from .config import ConfigError, ExperimentConfig, parse_config

__version__ = "0.1.0"

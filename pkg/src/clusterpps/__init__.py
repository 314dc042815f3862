"""Design-based estimation for cluster-randomized experiments.

Sampling clusters with probability proportional to size makes the plain
average of within-cluster sample means an unbiased, location-invariant
estimator of the population average treatment effect. This package
implements that design end to end: samplers with exact inclusion
probabilities, the catalogue of point estimators it is compared against,
exact theoretical variances, a conservative variance estimator, and a
reproducible Monte Carlo / exhaustive-enumeration harness.
"""

from .assignment import (
    TreatmentAssignment,
    assign_completely_random,
    assign_stratified,
)
from .design import (
    SRS,
    PPS_EXACT,
    PPS_SUNTER,
    ClusterSample,
    DesignSpec,
    InclusionProbs,
    PpsDesign,
    WithinSpec,
    draw_cluster_sample,
    draw_srs,
    draw_within,
    first_order_pps,
    joint_inclusion,
)
from .errors import NumericError, ValidationError
from .estimators import (
    ESTIMATORS,
    Estimate,
    Realization,
    cluster_sample_mean,
    compute_estimates,
    cs_ht_pps,
    des_raj,
    des_raj_estimated,
    dim,
    estimate_theta,
    hajek,
    ht_pps,
    ht_srs,
    realize,
    us_ht_pps,
)
from .montecarlo import (
    EnumeratedDistribution,
    SimConfig,
    enumerate_realizations,
    replicate_generator,
    run_replicate,
    run_study,
    summarize,
)
from .population import (
    Cluster,
    Population,
    SyntheticSpec,
    generate_synthetic,
    load_population,
    save_population,
)
from .variance import (
    TheoreticalVariance,
    VarianceEstimate,
    approx_var_dim,
    conservative_var_estimate,
    conservative_var_stratified,
    covariance_bound_estimate,
    syg_var_estimate,
    true_var_cs_ht_pps,
    true_var_des_raj,
    true_var_ht_pps,
    true_var_ht_srs,
    within_mean_var_hat,
)

__version__ = "0.1.0"

"""Differential privacy with record omission.

Mechanisms (Laplace/Gaussian/exponential noise, noisy max, noisy average,
clustering), sampling and score-based suppression preprocessing, closed-form
privacy-parameter accounting with inverse calibration, exact oracles with
numerical bound verification, and a reproducible experiment harness.
"""

from .core import (
    Database,
    PrivacyParams,
    RandomStream,
    Record,
    ValueBounds,
    enumerate_unbounded_neighbors,
    symmetric_difference_size,
)
from .accounting import (
    BoundReport,
    InfeasibleError,
    MMParams,
    amplify_poisson,
    calibrate_sampling,
    calibrate_suppression,
    delta_s,
    epsilon_s,
    group_bound_deterministic,
    maximizer_p,
    poisson_floor,
)
from .suppression import (
    AbsoluteDifference,
    DeterministicSuppression,
    DiscreteMetric,
    Distance,
    MMTransform,
    OutlierScoreSuppression,
    PoissonSampling,
    ScaledEuclidean,
    SuppressionKernel,
    kernel_of,
    outlier_score_suppress,
    outlier_scores,
    poisson_sample,
    suppress_by_avg_threshold,
    suppress_by_set,
    suppress_top_fraction,
)
from .mechanisms import (
    ClusteringResult,
    analytic_gaussian_sigma,
    compute_mode,
    dp_kmedian,
    dp_lloyd,
    exponential_mechanism,
    gaussian_profile_delta,
    laplace_draw,
    noisy_average,
    report_noisy_max,
)
from .oracle import (
    KernelBounds,
    SensitivityResult,
    VerificationReport,
    deterministic_sensitivity,
    exhaustive_epsilon_s,
    polytope_vertices,
    support_condition_holds,
    suppression_theorem_bounds,
    tight_dp_of_finite_mechanism,
    verify_bound_forward,
    verify_bound_inverse,
)
from .harness import (
    ExperimentConfig,
    ExperimentRow,
    gen_synthetic_clusters,
    load_column,
    metric_kmedian_cost,
    metric_mode_error,
    metric_mpe,
    metric_nicv,
    run_sampling_experiment,
    run_suppression_experiment,
    wilson_ci,
)

__version__ = "0.1.0"

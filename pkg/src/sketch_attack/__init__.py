"""Universal attacks on CountSketch and AMS estimators, with verification tools."""

from .sketch import (
    ModeError,
    SketchError,
    SketchMatrix,
    SketchParams,
    SketchRandomness,
    SparseVector,
    add_scaled,
    adjusted_measurements,
    ams_row_norms,
    batch_adjusted_measurements,
    derive_seed,
    inner_product_estimates,
    measurement_coefficients,
    new_randomness,
    sketch,
    zeros,
)
from .estimators import (
    ESTIMATOR_KINDS,
    Constant,
    CorrectnessParams,
    CorrectnessReport,
    EstimatorError,
    ReportingFunction,
    median_estimate,
    median_threshold_estimator,
    norm_estimator,
    randomized_estimator_family,
    verify_correctness,
)
from .attack import (
    AttackConfig,
    AttackError,
    AttackTrace,
    GateFailure,
    MeanAttackOutput,
    TailSet,
    ams_attack,
    attack_tails,
    mean_est_attack,
    universal_attack,
)
from .verification import (
    AmsBiasReport,
    BiasReport,
    MeanAttackStats,
    VerificationError,
    ams_bias_under,
    bias_under,
    control_biases,
    gap_estimate,
    mean_attack_stats,
    symmetry_check,
)

__version__ = "0.1.0"

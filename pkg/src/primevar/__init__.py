"""Empirical variance of prime counts in short intervals."""

from .cramer_model import CramerConfig, poisson_limit_check, simulate_counts, variance_ratio_experiment
from .ensemble import (
    EnsembleSpec,
    EnsembleStats,
    SamplePoint,
    Scale,
    build_windows,
    classify_scale,
    compute_stats,
    count_ensemble,
    statistical_error,
    systematic_error,
    to_sample_point,
)
from .errors import (
    ConvergenceError,
    GuardViolation,
    InvalidArgument,
    PrimevarError,
    RankDeficientError,
    ScaleWarning,
    SchemaError,
)
from .fitting import (
    MS_CONSTANT,
    alpha_from_slope,
    consistency_regression,
    fit_alpha_hyperbolic,
    fit_linear,
    ms_predict_variance,
    ms_predict_w,
    taylor_slope,
)
from .prime_engine import (
    BasePrimeTable,
    Window,
    build_base_primes,
    count_primes,
    count_primes_oracle,
    count_tiled,
)

__version__ = "0.1.0"

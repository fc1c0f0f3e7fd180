"""Dynamical-consistency diagnostics for forecasts.

Quantifies whether forecasts preserve the local dynamics of the underlying
system: per-state instantaneous dimension and inverse persistence computed
against a reference attractor, index-based error metrics, signed difference
diagnostics, and transport distances between index distributions, plus data
generators and baseline forecasters to run the whole pipeline at desk scale.
"""

__version__ = "0.1.0"

from .attractor import (
    DEFAULT_QUANTILE,
    MIN_EXCEEDANCES,
    ExceedanceSet,
    InsufficientExceedances,
    ReferenceAttractor,
    batch_exceedances,
    build_reference,
    exceedances,
    neg_log_distance_series,
)
from .core import (
    NormStats,
    SplitSpec,
    TrajectoryDataset,
    compute_norm_stats,
    inverse_zscore,
    load_dataset,
    save_dataset,
    split,
    zscore,
)
from .forecast import (
    Forecaster,
    ForecastTask,
    RolloutCrash,
    analog_forecast,
    direct_eval,
    persistence_forecast,
    recursive_rollout,
    rollout_study,
)
from .generators import (
    KsParams,
    LorenzParams,
    ROLLOUT_PRESET_STEPS,
    TimeScale,
    simulate_ks,
    simulate_lorenz,
    time_scale,
)
from .indices import (
    DynamicalIndices,
    GofResult,
    compute_indices,
    gpd_fit_test,
    inverse_persistence,
    local_dimension,
    write_indices_csv,
)
from .metrics import (
    BinnedErrorCurve,
    DidSample,
    DidSamples,
    EvaluationReport,
    ForecastPair,
    build_report,
    combined_wd,
    did,
    di_error,
    lat_weighted_rmse,
    per_state_squared_error,
    quantile_bin_errors,
    state_error,
    wasserstein_1d,
)

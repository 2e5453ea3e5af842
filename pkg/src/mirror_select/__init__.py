"""Gradient-based feature selection with FDR control via mirror statistics."""

__version__ = "0.1.0"

from .datagen import (
    ClassScoreParams,
    Dataset,
    DesignFamily,
    DesignSpec,
    Dgp,
    Scale,
    SignalMatrix,
    gen_classification,
    gen_regression,
    make_signal_classification,
    make_signal_regression,
    sample_design,
    split_rows,
)
from .diag import (
    DegenerateInputError,
    NormalityReport,
    ks_statistic,
    normality_report,
    project_complement,
    projection_norm_check,
    standardized_null,
)
from .net import (
    Init,
    Loss,
    NetworkParams,
    NetworkSpec,
    NumericOverflowError,
    Sampling,
    TrainConfig,
    backward,
    forward,
    init_params,
    input_sensitivity,
    train,
)
from .selection import (
    MirrorResult,
    Psi,
    SelectionMetrics,
    cutoff,
    evaluate,
    fdp_hat,
    mirror_stats,
    select_features,
    selected_set,
)

__all__ = [name for name in dir() if not name.startswith("_")]

"""Robust linear regression under strong contamination: spectral sample weights plus weighted Huber regression."""

from .dataset import (
    ContaminationSpec,
    CSVFormatError,
    Dataset,
    GeneratorSpec,
    OracleInstance,
    contaminate,
    generate,
    load_csv,
    load_sidecar,
    make_instance,
    n_outliers,
    replay,
    save_csv,
    save_sidecar,
)
from .diagnostics import ConditionReport, RateBundle, check_conditions, error_metrics, rates
from .harness import ExperimentRecord, ExperimentSpec, run_sweep, summarize
from .huber import (
    EstimationResult,
    HuberConfig,
    huber_loss,
    huber_score,
    joint_fit,
    ols_fit,
    plain_huber_fit,
    two_step_estimate,
    weighted_huber_fit,
)
from .robust_weights import RobustWeightConfig, RobustWeightResult, certificate, robust_weights
from .simplex import WeightVector, project
from .spectral import coordwise_median, top_eigenpair, weighted_second_moment

__version__ = "0.1.0"

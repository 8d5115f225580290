"""Data Shapley valuation of training points and metric-dependent noisy-label detection."""

from .core import Coalition, DataPoint, Dataset, Label, Permutation, dataset_from_records, prefix_coalition
from .harness import (
    DetectionReport,
    Direction,
    FlipRecord,
    NoiseSpec,
    Ranking,
    SynthConfig,
    class_mapping_table,
    detection_report,
    inject_noise,
    rank_by_value,
    synth_gaussian,
)
from .metrics import ConfusionCounts, MetricKind, Utility, confusion, score, utility
from .model import Model, TrainConfig, fit, predict
from .shapley import (
    SamplerConfig,
    ShapleyRun,
    ShapleyVector,
    efficiency_gap,
    exact_shapley,
    has_converged,
    mc_shapley,
    mc_shapley_multi,
)

from ._version import __version__

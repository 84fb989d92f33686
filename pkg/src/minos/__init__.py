"""Power-spike workload classification and GPU frequency-cap recommendation."""

from .errors import MinosError
from .features import SpikeVector, WorkloadFeatures, build_spike_vector, extract_features
from .predict import Bounds, Objective, holdout_evaluate, select_optimal_freq
from .refset import ReferenceSet, ScalingProfile, WorkloadRecord, load_refset, save_refset
from .trace import PowerTrace, RawSampleSeries, build_power_trace, read_trace_csv

__version__ = "0.1.0"

__all__ = [
    "Bounds", "MinosError", "Objective", "PowerTrace", "RawSampleSeries", "ReferenceSet",
    "ScalingProfile", "SpikeVector", "WorkloadFeatures", "WorkloadRecord", "build_power_trace",
    "build_spike_vector", "extract_features", "holdout_evaluate", "load_refset", "read_trace_csv",
    "save_refset", "select_optimal_freq",
]

"""Reversible instance normalization for multi-user forecasting, with shift diagnostics."""
from .data import (
    SPLITS,
    SplitAssignment,
    TimeSeriesDataset,
    WindowPair,
    WindowSpec,
    clean_dataset,
    enumerate_windows,
    read_csv,
    sample_windows,
    six_way_split,
    write_csv,
)
from .forecaster import AdamState, LinearForecaster, adam_step, moving_average_decompose
from .normalization import (
    KINDS,
    GlobalStats,
    InstanceStats,
    Modulations,
    NormStrategy,
    WindowNormalizer,
    cmin_init,
    denormalize,
    modulations,
    normalize,
)
from .shift import ShiftReport, energy_distance, feature_map, shift_report
from .synthetic import SyntheticSpec, SyntheticUserParams, closed_form_modulations, generate_dataset, two_cluster_spec
from .training import MetricTable, NormalizedForecaster, TrainConfig, compute_loss, evaluate, train

__version__ = "0.1.0"

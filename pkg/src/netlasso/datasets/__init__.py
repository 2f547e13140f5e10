"""Generators and loaders for the classification, housing and event experiments."""

from .events import (
    EventSeries,
    detect_events,
    detrend_series,
    event_graph,
    load_calit2,
    load_event_list,
    match_events,
    poisson_baseline,
    synth_event_series,
)
from .housing import (
    HousingData,
    StandardizationError,
    build_knn_graph,
    haversine_km,
    load_housing,
    read_housing_csv,
    split_indices,
)
from .svm import SvmBenchmark, SvmBenchmarkSpec, expected_edge_count, gen_svm_benchmark, svm_accuracy

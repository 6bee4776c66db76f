from safedrive.harness.metrics import MetricsReport, evaluate_paths, metrics_from_traces
from safedrive.harness.runner import (
    EXIT_COLLISION,
    EXIT_CONFIG,
    EXIT_CONTAINMENT,
    EXIT_OK,
    ConfigError,
    EpisodeResult,
    RunConfig,
    config_from_dict,
    run_episode,
)
from safedrive.harness.trace import TRACE_SCHEMA, TraceError, read_trace

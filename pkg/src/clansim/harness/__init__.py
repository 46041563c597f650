"""Training problems, data partitioning and experiment runs."""

from .config import load_run_config, run_config_from_dict, run_config_to_dict
from .data import BatchSampler
from .problems import MLP, Logistic, Problem, Quadratic, finite_difference_check, make_problem
from .runner import (
    METRICS_HEADER,
    MetricsRecord,
    RunConfig,
    RunResult,
    expected_bytes_per_step,
    run_experiment,
    summarize,
    write_metrics_csv,
    write_summary_csv,
)

__all__ = [
    "METRICS_HEADER",
    "MLP",
    "BatchSampler",
    "Logistic",
    "MetricsRecord",
    "Problem",
    "Quadratic",
    "RunConfig",
    "RunResult",
    "expected_bytes_per_step",
    "load_run_config",
    "finite_difference_check",
    "make_problem",
    "run_config_from_dict",
    "run_config_to_dict",
    "run_experiment",
    "summarize",
    "write_metrics_csv",
    "write_summary_csv",
]

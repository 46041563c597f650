"""Bound calculators and trajectory verifiers."""

from .bounds import (
    BoundInputs,
    BoundReport,
    Constants,
    corollary_biased,
    corollary_full_precision,
    corollary_unbiased,
    lemma_ef_residual_bound,
    report_for,
    theorem1_rhs,
)
from .monitors import MomentGapReport, ResidualReport, Snapshot, check_ef_residuals, lemma_moment_gap_monitor
from .report import bound_rows, write_bound_csv
from .systems import comm_time, compression_rate, dropped_fraction, ideal_scaling_efficiency

__all__ = [
    "BoundInputs",
    "BoundReport",
    "Constants",
    "MomentGapReport",
    "ResidualReport",
    "Snapshot",
    "bound_rows",
    "check_ef_residuals",
    "comm_time",
    "compression_rate",
    "corollary_biased",
    "corollary_full_precision",
    "corollary_unbiased",
    "dropped_fraction",
    "ideal_scaling_efficiency",
    "lemma_ef_residual_bound",
    "lemma_moment_gap_monitor",
    "report_for",
    "theorem1_rhs",
    "write_bound_csv",
]

"""Evaluation metrics over telemetry logs."""

from .core import (
    GRF_RIDGE,
    MIN_COT_SPEED,
    CoTResult,
    GrfSample,
    SteadyStateResult,
    cost_of_transport,
    estimate_grf,
    estimate_grf_log,
    froude,
    grf_summary,
    moving_average,
    power_loss,
    push_impulse,
    steady_state_from_log,
    steady_state_velocity,
)
from .log import ExperimentLog, load_log, read_jsonl, write_jsonl
from .summary import SUMMARY_COLUMNS, csv_text, read_csv, summarize_log, write_csv

__all__ = [name for name in dir() if not name.startswith("_")]

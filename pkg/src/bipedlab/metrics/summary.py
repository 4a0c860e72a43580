"""One-row-per-run summaries written as CSV."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..dynamics import ActuatorModel, RobotModel
from ..errors import MetricsInputError, UndefinedCoTError, UnsteadyError
from .core import cost_of_transport, estimate_grf_log, froude, grf_summary, push_impulse, steady_state_from_log
from .log import ExperimentLog

SUMMARY_COLUMNS = [
    "command", "command_froude", "v_mean", "error", "error_froude", "froude", "stable_start", "stable_end",
    "cot", "cot_energy", "energy", "grf_mean_pct", "grf_std_pct", "grf_max_residual", "impulse",
]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".10g")


def summarize_log(log: ExperimentLog, model: RobotModel, actuator: ActuatorModel, coulomb=None,
                  window: float = 0.5) -> dict:
    """Every metric that the log supports; unavailable entries are ``None``."""
    g, L = model.gravity, model.leg_length
    command = float(log.command[-1, 0])
    row = dict.fromkeys(SUMMARY_COLUMNS)
    row["command"] = command
    row["command_froude"] = froude(command, g, L)
    try:
        ss = steady_state_from_log(log, model, window)
        row.update(v_mean=ss.v_mean, error=ss.error, error_froude=froude(ss.error, g, L), froude=ss.froude,
                   stable_start=ss.start, stable_end=ss.end)
    except UnsteadyError:
        pass
    if log.tau is not None and log.qd is not None:
        try:
            c = cost_of_transport(log, model, actuator, coulomb)
            row.update(cot=c.cot, cot_energy=c.cot_energy, energy=c.energy)
        except UndefinedCoTError:
            pass
    if log.dyn_q is not None and log.contact is not None:
        samples = estimate_grf_log(log, model)
        stance = [s.forces.sum(axis=0) for s, c in zip(samples, log.contact) if np.any(c > 0)]
        if stance:
            row["grf_mean_pct"], row["grf_std_pct"] = grf_summary(stance, model)
            row["grf_max_residual"] = max(s.residual for s in samples)
    if log.push_force is not None and np.any(log.push_force != 0.0):
        row["impulse"] = float(np.linalg.norm(push_impulse(log.push_force, log.dt)))
    return row


def csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: list[dict], columns: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(rows, columns))
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


__all__ = ["SUMMARY_COLUMNS", "summarize_log", "csv_text", "write_csv", "read_csv", "fmt", "MetricsInputError"]

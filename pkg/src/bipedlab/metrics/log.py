"""Telemetry logs as column arrays."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import MetricsInputError


@dataclass
class ExperimentLog:
    t: np.ndarray
    vx: np.ndarray
    command: np.ndarray  # (N, 2)
    x: np.ndarray | None = None
    pitch_rate: np.ndarray | None = None
    q: np.ndarray | None = None
    qd: np.ndarray | None = None
    qdd: np.ndarray | None = None
    tau: np.ndarray | None = None
    tau_friction: np.ndarray | None = None
    contact: np.ndarray | None = None
    fn: np.ndarray | None = None
    ft: np.ndarray | None = None
    push_force: np.ndarray | None = None  # (N, 2), zero outside pushes
    dyn_q: np.ndarray | None = None
    dyn_v: np.ndarray | None = None
    dyn_qdd: np.ndarray | None = None
    ext_force: np.ndarray | None = None
    terminated: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or t.shape[0] < 2:
            raise MetricsInputError("a log needs at least two samples")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise MetricsInputError("log time must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])) + 1e-12:
            raise MetricsInputError("log samples must be evenly spaced")

    @property
    def dt(self) -> float:
        return float((self.t[-1] - self.t[0]) / (len(self.t) - 1))

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @classmethod
    def from_records(cls, records: list[dict]) -> "ExperimentLog":
        if not records:
            raise MetricsInputError("empty log")

        def col(key, sub=None):
            if sub is None:
                if key not in records[0]:
                    return None
                return np.array([r[key] for r in records], dtype=float)
            if sub not in records[0].get(key, {}):
                return None
            return np.array([r[key][sub] for r in records], dtype=float)

        push = None
        if "push_force" in records[0]:
            push = np.array([r["push_force"] if r.get("push_force") is not None else (0.0, 0.0)
                             for r in records], dtype=float)
        term = None
        if "terminated" in records[0]:
            term = np.array([bool(r["terminated"]) for r in records])
        return cls(
            t=col("t"), vx=col("vx"), command=col("command"), x=col("x"), pitch_rate=col("pitch_rate"),
            q=col("q"), qd=col("qd"), qdd=col("qdd"), tau=col("tau"), tau_friction=col("tau_friction"),
            contact=col("contact"), fn=col("fn"), ft=col("ft"), push_force=push,
            dyn_q=col("dyn", "q_full"), dyn_v=col("dyn", "v_full"), dyn_qdd=col("dyn", "qdd_full"),
            ext_force=col("dyn", "ext_force"), terminated=term,
        )


def read_jsonl(path) -> list[dict]:
    out = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def load_log(path) -> ExperimentLog:
    return ExperimentLog.from_records(read_jsonl(path))

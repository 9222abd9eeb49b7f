"""Scoring of observers and the switched estimate."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def mse(true_series, est_series) -> float:
    a = np.asarray(true_series, dtype=float)
    b = np.asarray(est_series, dtype=float)
    if a.shape != b.shape:
        raise MetricError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise MetricError("empty series")
    return float(np.mean((a - b) ** 2))


def l2_metric(error_series) -> float:
    """Mean of ``sqrt(|e|^2)`` over all steps and components.

    Despite the name this is the mean absolute error, not a Euclidean norm.
    """
    e = np.asarray(error_series, dtype=float)
    if e.size == 0:
        raise MetricError("empty error series")
    return float(np.mean(np.abs(e)))


def linf_metric(error_series) -> float:
    e = np.asarray(error_series, dtype=float)
    if e.size == 0:
        raise MetricError("empty error series")
    return float(np.max(np.abs(e)))


def time_observers(step_times: dict, switch_overhead: float = 0.0) -> dict:
    """Cumulative seconds per observer plus ``SWO`` = whole bank + switching."""
    totals = {k: float(np.sum(v)) for k, v in step_times.items()}
    totals["SWO"] = sum(totals.values()) + float(switch_overhead)
    return totals


@dataclass
class MetricTable:
    """Per observer and variable: MSE against the true state, L2/Linf against measurements."""

    case: str
    mse: dict = field(default_factory=dict)
    l2: dict = field(default_factory=dict)
    linf: dict = field(default_factory=dict)
    l2_stacked: dict = field(default_factory=dict)
    linf_stacked: dict = field(default_factory=dict)
    time: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_series(cls, case, state_names, output_names, x_true, estimates: dict,
                    errors: dict, times: dict, metadata: dict | None = None) -> "MetricTable":
        """``estimates[name]`` is ``(M, n)``, ``errors[name]`` is ``(M, p)``; NaN rows are skipped."""
        table = cls(case=str(case), time=dict(times), metadata=dict(metadata or {}))
        for name, est in estimates.items():
            ok = np.all(np.isfinite(est), axis=1)
            table.mse[name] = {s: mse(x_true[ok, i], est[ok, i]) for i, s in enumerate(state_names)}
            e = errors[name][ok]
            table.l2[name] = {s: l2_metric(e[:, j]) for j, s in enumerate(output_names)}
            table.linf[name] = {s: linf_metric(e[:, j]) for j, s in enumerate(output_names)}
            table.l2_stacked[name] = l2_metric(e)
            table.linf_stacked[name] = linf_metric(e)
        return table

    def to_dict(self) -> dict:
        return {
            "case": self.case, "mse": self.mse, "l2": self.l2, "linf": self.linf,
            "l2_stacked": self.l2_stacked, "linf_stacked": self.linf_stacked,
            "time": self.time, "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricTable":
        return cls(**d)

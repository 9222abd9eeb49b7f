"""CSV/JSON persistence of runs and Monte Carlo studies."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .scenario import OBSERVER_ORDER


class ExportError(OSError):
    pass


def fmt(value) -> str:
    """Shortest decimal that round-trips to the same double; NaN becomes an empty cell."""
    v = float(value)
    return "" if math.isnan(v) else repr(v)


def _writer(path: Path):
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror}") from exc
    return fh, csv.writer(fh, lineterminator="\n")


def trajectory_columns(result) -> list[str]:
    case = result.scenario.case
    cols = ["t"]
    cols += [f"x.{s}" for s in case.state_names]
    cols += [f"y.{s}" for s in case.output_names]
    for kind in result.observers:
        cols += [f"{kind}.{s}" for s in case.state_names]
    cols += [f"swo.{s}" for s in case.state_names]
    cols.append("swo.selected")
    return cols


def write_trajectory(result, path) -> Path:
    path = Path(path)
    plant = result.plant
    blocks = [plant.t[:, None], plant.x, plant.y]
    blocks += [result.x_hat[k] for k in result.observers]
    blocks.append(result.x_hat["SWO"])
    table = np.hstack(blocks)
    selected = list(result.selected) + [""] * (len(table) - len(result.selected))
    fh, w = _writer(path)
    with fh:
        w.writerow(trajectory_columns(result))
        for row, sel in zip(table.tolist(), selected):
            w.writerow([fmt(v) for v in row] + [sel])
    return path


def read_trajectory(path) -> dict:
    """Columns of a trajectory CSV; numeric columns as float arrays."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        if name == "swo.selected":
            out[name] = col
        else:
            out[name] = np.array([float(c) if c else np.nan for c in col])
    return out


def write_switchlog(result, path) -> Path:
    path = Path(path)
    fh, w = _writer(path)
    with fh:
        w.writerow(["step"] + [f"J.{k}" for k in result.observers] + ["selected"])
        for k, sel in enumerate(result.selected):
            w.writerow([k] + [fmt(v) for v in result.J[k]] + [sel])
    return path


def write_metrics(result_or_table, path) -> Path:
    path = Path(path)
    table = getattr(result_or_table, "metrics", result_or_table)
    try:
        path.write_text(table.to_json() + "\n", encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def write_bands(mc, path) -> Path:
    path = Path(path)
    names = mc.scenario.case.state_names
    order = [k for k in OBSERVER_ORDER + ("SWO",) if k in mc.bands]
    header = ["t"]
    for est in order:
        header += [f"{est.lower() if est == 'SWO' else est}.{s}.{q}"
                   for s in names for q in ("p05", "p50", "p95")]
    fh, w = _writer(path)
    with fh:
        w.writerow(header)
        for k, t in enumerate(mc.t):
            row = [fmt(t)]
            for est in order:
                b = mc.bands[est]
                for i in range(len(names)):
                    row += [fmt(b[0, k, i]), fmt(b[1, k, i]), fmt(b[2, k, i])]
            w.writerow(row)
    return path


def write_montecarlo_summary(mc, path) -> Path:
    path = Path(path)
    summary = {
        "case": mc.scenario.case.value,
        "master_seed": mc.scenario.seed,
        "trials": mc.spec.trials,
        "succeeded": mc.n_success,
        "failures": [{"trial": t, "error": e} for t, e in mc.failures],
        "masked": list(mc.scenario.mask),
        "per_trial": [
            {"trial": o.trial, "seed": o.seed, "ok": o.ok,
             "deltas": {str(r): d for r, d in o.deltas.items()},
             "selection": o.selection,
             "metrics": o.metrics.to_dict() if o.metrics else None}
            for o in mc.trials
        ],
    }
    path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return path


FORMATS = ("trajectory", "metrics", "switchlog")


def export_results(result, directory, formats=FORMATS) -> list[Path]:
    """Write the requested artifacts of a run (or a Monte Carlo study) into ``directory``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create {directory}: {exc.strerror}") from exc
    if hasattr(result, "bands"):
        return [write_bands(result, directory / "montecarlo_bands.csv"),
                write_montecarlo_summary(result, directory / "montecarlo.json")]
    written = []
    if "trajectory" in formats:
        written.append(write_trajectory(result, directory / "trajectory.csv"))
    if "metrics" in formats:
        written.append(write_metrics(result, directory / "metrics.json"))
    if "switchlog" in formats:
        written.append(write_switchlog(result, directory / "switchlog.csv"))
    return written

"""Tracking-error metrics and the Gap percentage used to compare controllers."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

METRIC_KEYS = ("cae_p", "cae_v", "mae_p", "mae_v")


@dataclass
class MetricReport:
    cae_p: float
    cae_v: float
    mae_p: float
    mae_v: float
    per_vehicle: dict = field(default_factory=dict)
    controller: str = ""
    scenario: str = ""
    error_kind: str = ""

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_KEYS}


def error_metrics(pos_err, vel_err) -> dict:
    pe, ve = np.abs(np.asarray(pos_err, float)), np.abs(np.asarray(vel_err, float))
    return {"cae_p": float(pe.sum()), "cae_v": float(ve.sum()),
            "mae_p": float(pe.max()), "mae_v": float(ve.max())}


def compute_metrics(log) -> MetricReport:
    """Sum (CAE) and max (MAE) of absolute errors over every vehicle and step."""
    if log.n_steps == 0:
        raise ValueError("empty trajectory log")
    pe, ve = log.position_error(), log.velocity_error()
    per_vehicle = {i: error_metrics(pe[:, i], ve[:, i]) for i in range(pe.shape[1])}
    return MetricReport(**error_metrics(pe, ve), per_vehicle=per_vehicle,
                        controller=log.controller, scenario=log.scenario,
                        error_kind=log.error_kind)


def compute_gap(metric_baseline: float, metric_reference: float) -> float:
    """Percent by which ``metric_reference`` improves on ``metric_baseline``.

    NaN when the baseline is not positive.
    """
    if not metric_baseline > 0:
        return math.nan
    return 100.0 * (metric_baseline - metric_reference) / metric_baseline


TABLE_COLUMNS = ("scenario", "error_kind", "controller", *METRIC_KEYS,
                 *(f"gap_{k}" for k in METRIC_KEYS))


def results_table(reports, reference_controller: str = "mpc_q") -> list[dict]:
    """Rows of the comparison table; gaps are against ``reference_controller`` in the same test."""
    reports = list(reports)
    refs = {(r.scenario, r.error_kind): r for r in reports if r.controller == reference_controller}
    rows = []
    for r in reports:
        row = {"scenario": r.scenario, "error_kind": r.error_kind, "controller": r.controller,
               **r.as_dict()}
        ref = refs.get((r.scenario, r.error_kind))
        for k in METRIC_KEYS:
            row[f"gap_{k}"] = compute_gap(getattr(r, k), getattr(ref, k)) if ref else math.nan
        rows.append(row)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(round(v, 10))
    return str(v)


def write_table_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in TABLE_COLUMNS])

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from platoon_perl.metrics import (TABLE_COLUMNS, MetricReport, compute_gap, compute_metrics,
                                  error_metrics, results_table, write_table_csv)
from platoon_perl.scenario import TrajectoryLog

# Published comparison table: per test, (M, M+N, M+Q) for each metric, then the Gap rows.
TESTS = ["s1_affine", "s1_quadratic", "s2_affine", "s2_quadratic"]
PUBLISHED = {
    "cae_p": [(475.5, 68.7, 62.2), (542.5, 86.9, 79.2), (1388.2, 199.9, 161.0), (1137.0, 181.5, 157.0)],
    "cae_v": [(47.9, 35.0, 32.9), (53.9, 47.9, 38.6), (288.0, 63.3, 41.7), (201.1, 57.4, 48.4)],
    "mae_p": [(1.129, 0.421, 0.370), (1.356, 0.493, 0.417), (5.220, 0.616, 0.493), (3.978, 0.618, 0.552)],
    "mae_v": [(0.260, 0.267, 0.254), (0.301, 0.300, 0.302), (1.132, 0.391, 0.251), (0.884, 0.327, 0.312)],
}
PUBLISHED_GAPS = {
    "cae_p": [(86.92, 9.44), (85.40, 8.88), (88.41, 19.46), (86.19, 13.51)],
    "cae_v": [(31.32, 6.02), (28.33, 19.38), (85.53, 34.19), (75.94, 15.71)],
    "mae_p": [(68.83, 11.92), (69.26, 15.44), (90.55, 19.96), (86.11, 10.63)],
    "mae_v": [(2.32, 4.88), (-0.41, -0.58), (77.80, 35.73), (64.68, 4.68)],
}
# The first test's MAE_p gaps do not follow from its printed MAE_p values.
INCONSISTENT = {("mae_p", 0, "M"): "printed 68.83, inputs give 67.23",
                ("mae_p", 0, "M+N"): "printed 11.92, inputs give 12.11"}


def gap_cases():
    for metric, rows in PUBLISHED.items():
        for t, (m, mn, mq) in enumerate(rows):
            for col, base, printed in (("M", m, PUBLISHED_GAPS[metric][t][0]),
                                       ("M+N", mn, PUBLISHED_GAPS[metric][t][1])):
                marks = []
                if (metric, t, col) in INCONSISTENT:
                    marks = [pytest.mark.xfail(strict=True, reason=INCONSISTENT[(metric, t, col)])]
                yield pytest.param(base, mq, printed, marks=marks,
                                   id=f"{metric}-{TESTS[t]}-{col}")


def make_log(pos_err, vel_err, offset=0.0):
    pos_err, vel_err = np.atleast_2d(pos_err), np.atleast_2d(vel_err)
    z = np.zeros_like(pos_err)
    return TrajectoryLog(0.1, "mpc_only", "uniform", "none", z + offset, z, z,
                         pos_err + offset, vel_err, z, z, z, z,
                         np.zeros(pos_err.shape[0], bool), np.zeros(pos_err.shape[0], bool))


def test_perfect_tracking_is_zero():
    rep = compute_metrics(make_log(np.zeros((5, 3)), np.zeros((5, 3))))
    assert rep.as_dict() == {"cae_p": 0, "cae_v": 0, "mae_p": 0, "mae_v": 0}


def test_hand_sum():
    rep = compute_metrics(make_log([[0.5], [-1.0]], [[0.2], [0.1]]))
    assert rep.cae_p == pytest.approx(1.5) and rep.mae_p == pytest.approx(1.0)
    assert rep.cae_v == pytest.approx(0.3) and rep.mae_v == pytest.approx(0.2)


@given(arrays(float, (6, 3), elements=st.floats(-5, 5)), st.floats(-1e3, 1e3))
def test_translation_invariance(err, shift):
    a = compute_metrics(make_log(err, err))
    b = compute_metrics(make_log(err, err, offset=shift))
    assert b.cae_p == pytest.approx(a.cae_p, abs=1e-9 * (1 + abs(shift)) * err.size)
    assert b.mae_p == pytest.approx(a.mae_p, abs=1e-9 * (1 + abs(shift)))


@given(arrays(float, (8, 2), elements=st.floats(-5, 5)), st.integers(1, 7))
def test_aggregation(err, cut):
    whole = error_metrics(err, err)
    a, b = error_metrics(err[:cut], err[:cut]), error_metrics(err[cut:], err[cut:])
    assert whole["cae_p"] == pytest.approx(a["cae_p"] + b["cae_p"])
    assert whole["mae_v"] == max(a["mae_v"], b["mae_v"])


@given(arrays(float, (4, 2), elements=st.floats(-5, 5)))
def test_mae_below_cae(err):
    m = error_metrics(err, err)
    assert 0 <= m["mae_p"] <= m["cae_p"] + 1e-12


@pytest.mark.parametrize("base,ref,want", [(1388.2, 161.0, 88.41), (475.5, 62.2, 86.92),
                                           (0.884, 0.312, 64.71)])
def test_gap_examples(base, ref, want):
    assert compute_gap(base, ref) == pytest.approx(want, abs=0.15)


@pytest.mark.parametrize("base,ref,printed", list(gap_cases()))
def test_published_gaps(base, ref, printed):
    assert abs(compute_gap(base, ref) - printed) <= 0.15


def test_gap_zero_baseline_is_na():
    assert math.isnan(compute_gap(0.0, 1.0))


@given(st.floats(0.01, 1e4), st.floats(0, 1e4), st.floats(0, 1e4))
def test_gap_self_and_monotone(base, r1, r2):
    assert compute_gap(base, base) == 0
    if r1 <= r2:
        assert compute_gap(base, r1) >= compute_gap(base, r2)


def test_negative_gap_not_clamped():
    assert compute_gap(0.301, 0.302) < 0


def test_results_table_csv(tmp_path):
    reps = [MetricReport(10, 2, 1, 0.5, controller="mpc_only", scenario="uniform", error_kind="affine"),
            MetricReport(4, 1, 0.5, 0.5, controller="mpc_q", scenario="uniform", error_kind="affine")]
    rows = results_table(reps)
    assert rows[0]["gap_cae_p"] == pytest.approx(60.0)
    path = tmp_path / "t.csv"
    write_table_csv(rows, path)
    text = path.read_bytes().decode()
    assert text.splitlines()[0] == ",".join(TABLE_COLUMNS)
    assert text.endswith("\n") and "\r" not in text
    assert len(text.splitlines()) == 3


def test_missing_reference_gives_na():
    rows = results_table([MetricReport(1, 1, 1, 1, controller="mpc_only")])
    assert math.isnan(rows[0]["gap_cae_v"])

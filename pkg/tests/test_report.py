import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neuropipe import report
from neuropipe.cv_engine import DecisionLog, DecisionRow, FoldResult
from neuropipe.errors import DataError

from oracles import oracle_operating_point


def make_log(y, s, pred=None, mle="m"):
    if pred is None:
        pred = [int(v >= 0.5) for v in s]
    return DecisionLog(mle, [DecisionRow(0, 0, f"s{i:03d}", int(a), int(p), float(b), "c")
                             for i, (a, b, p) in enumerate(zip(y, s, pred))])


HAND_Y = [0] * 5 + [1] * 5
HAND_S = [0.1, 0.2, 0.3, 0.4, 0.9, 0.5, 0.86, 0.9, 0.92, 0.95]


def test_hand_example_threshold_enumeration():
    row = report.operating_table(make_log(HAND_Y, HAND_S), [0.2]).rows[0]
    # enumerating thresholds: t = 0.5 admits one healthy score (0.9) and all five patients
    assert row.achieved_fpr == pytest.approx(0.2)
    assert (row.tpr, row.threshold) == (1.0, 0.5)
    assert oracle_operating_point(HAND_Y, HAND_S, 0.2) == (0.2, 1.0, 0.5)


def score_logs():
    return st.lists(st.tuples(st.integers(0, 1), st.integers(0, 12)), min_size=2, max_size=40).filter(
        lambda xs: len({a for a, _ in xs}) == 2)


@given(score_logs(), st.lists(st.floats(0, 1), min_size=1, max_size=5))
def test_operating_table_equals_exhaustive_search(pairs, targets):
    y = [a for a, _ in pairs]
    s = [b / 12 for _, b in pairs]
    table = report.operating_table(make_log(y, s), targets)
    assert [r.target_fpr for r in table.rows] == sorted(targets)
    for r in table.rows:
        fpr, tpr, thr = oracle_operating_point(y, s, r.target_fpr)
        assert (r.achieved_fpr, r.tpr, r.threshold) == (fpr, tpr, thr)
        assert r.achieved_fpr <= r.target_fpr + 1e-12
    tprs = [r.tpr for r in table.rows]
    assert tprs == sorted(tprs)


@given(score_logs())
def test_auc_two_ways_and_roc_monotone(pairs):
    y = [a for a, _ in pairs]
    s = [b / 12 for _, b in pairs]
    log = make_log(y, s)
    assert abs(report.auc_trapezoid(log) - report.auc_rank(log)) < 1e-9
    pts = report.roc_points(log)
    assert pts[0][:2] == (0.0, 0.0) and pts[-1][:2] == (1.0, 1.0)
    for a, b in zip(pts, pts[1:]):
        assert b[0] >= a[0] and b[1] >= a[1] and b[2] < a[2]


def test_default_grid_and_perfect_separation():
    log = make_log([0] * 25 + [1] * 25, list(np.linspace(0, 0.4, 25)) + list(np.linspace(0.6, 1, 25)))
    table = report.operating_table(log)
    assert [r.target_fpr for r in table.rows] == [0.10, 0.15, 0.20, 0.30]
    assert all(r.tpr == 1.0 and r.achieved_fpr == 0 for r in table.rows)
    assert report.auc_rank(log) == 1.0


def test_sens_spec():
    y = [1, 1, 0, 0]
    assert report.sens_spec(make_log(y, [.9] * 4, pred=y)) == (1.0, 1.0)
    assert report.sens_spec(make_log(y, [.9] * 4, pred=[1] * 4)) == (1.0, 0.0)
    # the pcq counting log: 8/10 and 6/10 positive decisions for two CS1 subjects
    rows = [DecisionRow(r, 0, sid, 1, int(r < hits), 0.5, "c") for sid, hits in (("a", 8), ("b", 6))
            for r in range(10)] + [DecisionRow(0, 0, "h", 0, 0, 0.1, "c")]
    assert report.sens_spec(DecisionLog("m", rows))[0] == pytest.approx(0.7)


def test_degenerate_log_errors():
    log = make_log([1, 1], [0.2, 0.8])
    for fn in (report.operating_table, report.roc_points, report.sens_spec, report.auc_rank):
        with pytest.raises(DataError, match="degenerate"):
            fn(log)


def fold(i, selected, importances=None):
    return FoldResult(0, i, "c", 0, None, selected, importances)


def test_importance_ranking():
    folds = [fold(0, ["a", "b"], {"a": 0.2, "b": 0.8}), fold(1, ["a", "c"], {"a": 0.4, "c": 0.6}),
             fold(2, ["a", "b"], {"a": 0.9, "b": 0.1})]
    rep = report.importance_report(folds)
    assert rep.top(3) == ["a", "b", "c"]
    assert rep.entries[0].frequency == 1.0 and rep.entries[1].frequency == pytest.approx(2 / 3)
    assert rep.entries[0].importance == pytest.approx(0.5) and rep.note is None
    freq_only = report.importance_report([fold(0, ["x", "y"]), fold(1, ["y"])])
    assert freq_only.top(2) == ["y", "x"] and freq_only.note
    assert freq_only.entries[0].importance is None
    with pytest.raises(DataError):
        report.importance_report([fold(0, None)])


def test_render_three_files_byte_identical(tmp_path):
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, 60)
    log = make_log(y, np.clip(0.3 * y + 0.7 * rng.random(60), 0, 1))
    a = report.render(log, tmp_path / "a")
    b = report.render(log, tmp_path / "b")
    assert [p.name for p in a] == ["operating_table.csv", "summary.json", "roc.svg"]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    csv_lines = a[0].read_text().splitlines()
    assert csv_lines[0] == "target_fpr,achieved_fpr,tpr,threshold" and len(csv_lines) == 5
    summary = json.loads(a[1].read_text())
    assert summary["auc"] == pytest.approx(report.auc_rank(log))
    assert report.POOLING_NOTE in summary["notes"]
    assert a[2].read_text().lstrip().startswith("<?xml")
    with pytest.raises(DataError):
        report.render(make_log([0, 0], [0.1, 0.2]), tmp_path / "c")

"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (visible in the
plain ``pytest -v`` output) before asserting.
"""

import os
import time

import numpy as np
import pytest

from neuropipe import classify, cli, conformal, dimred, pcq, report
from neuropipe.cohort import select_task_subset
from neuropipe.cv_engine import DecisionLog, DecisionRow, fit_pipeline, build_cells, make_folds, run_experiment
from neuropipe.flag_topology import DirectedGraph, betti_numbers, build_flag_complex, euler_characteristic
from neuropipe.graph_features import Graph, graph_feature_vector
from neuropipe.ingest import spec_from_dict
from neuropipe.synth import SynthSpec, generate, generate_tabular

from oracles import naive_rate, oracle_betti, oracle_metrics, oracle_operating_point, oracle_simplices

JOBS = os.cpu_count() or 1


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


# -------------------------------------------------------------- 1 and 2


def test_1_graph_metrics_oracle(verdict):
    rng = np.random.default_rng(101)
    worst, elapsed = 0.0, 0.0
    for _ in range(500):
        n = int(rng.integers(2, 8))
        a = np.triu(rng.random((n, n)) < rng.uniform(0.1, 0.9), 1)
        g = Graph(a | a.T, ())
        t0 = time.perf_counter()
        got = graph_feature_vector(g).values
        elapsed += time.perf_counter() - t0
        rows, glob = oracle_metrics(g.adjacency.tolist())
        ref = np.array([float(x) for r in rows for x in r]
                       + [float("nan") if glob[0] is None else float(glob[0]), float(glob[1])])
        both_nan = np.isnan(got) & np.isnan(ref)
        assert np.array_equal(np.isnan(got), np.isnan(ref))
        worst = max(worst, float(np.max(np.abs(np.where(both_nan, 0, got - ref)))))
    ok = worst <= 1e-12 and elapsed < 10
    verdict(1, ok, f"500 graphs, max |error| {worst:.1e} (<= 1e-12), metric time {elapsed:.2f}s (< 10s)")
    assert ok


def test_2_topology_oracle(verdict):
    t0 = time.perf_counter()
    cycle = build_flag_complex(DirectedGraph(3, frozenset({(0, 1), (1, 2), (2, 0)})))
    tri = build_flag_complex(DirectedGraph(3, frozenset({(0, 1), (1, 2), (0, 2)})))
    hand = (betti_numbers(cycle)[:2] == [1, 1] and euler_characteristic(cycle) == 0
            and betti_numbers(tri)[:2] == [1, 0] and euler_characteristic(tri) == 1)
    rng = np.random.default_rng(202)
    mismatches = euler_fail = 0
    for _ in range(200):
        n = int(rng.integers(1, 7))
        p = rng.uniform(0.1, 0.8)
        edges = frozenset((i, j) for i in range(n) for j in range(n) if i != j and rng.random() < p)
        c = build_flag_complex(DirectedGraph(n, edges), 3)
        b = betti_numbers(c)
        ref = oracle_simplices(n, edges, 3)
        mismatches += [list(s) for s in c.simplices] != ref or b != oracle_betti(ref)
        euler_fail += euler_characteristic(c) != sum((-1) ** k * x for k, x in enumerate(b))
    elapsed = time.perf_counter() - t0
    ok = hand and mismatches == 0 and euler_fail == 0 and elapsed < 30
    verdict(2, ok, f"hand cases {'ok' if hand else 'wrong'}, {mismatches} oracle mismatches, "
                   f"{euler_fail} Euler failures over 200 digraphs, {elapsed:.1f}s (< 30s)")
    assert ok


# ------------------------------------------------------------------- 3


NULL_SPEC = {"name": "null", "task": "EvsH",
             "selection": {"method": "anova", "k": [50]},
             "classifier": {"family": "knn", "grid": {"k": [15]}},
             "cv": {"scheme": "loocv", "repeats": 1}}


@pytest.mark.slow
def test_3_leakage_guard(verdict):
    t0 = time.perf_counter()
    honest, leaky = [], []
    for seed in range(20):
        cohort = generate_tabular(SynthSpec(n_pos=100, n_neg=100, p=2000, s=0, delta=0.0, seed=seed)).cohort
        spec = spec_from_dict({**NULL_SPEC, "cv": {**NULL_SPEC["cv"], "seed": seed}})
        honest.append(run_experiment(spec, cohort, jobs=JOBS, traced=False).report.accuracy)
        res = run_experiment(spec, cohort, jobs=JOBS, debug_leak="select")
        assert res.report.violations
        leaky.append(res.report.accuracy)
    elapsed = time.perf_counter() - t0
    mh, ml = float(np.mean(honest)), float(np.mean(leaky))
    ok = 0.45 <= mh <= 0.55 and ml >= 0.65 and elapsed < 600
    verdict(3, ok, f"null LOOCV mean accuracy {mh:.3f} (in [0.45, 0.55]), double-dipping mean "
                   f"{ml:.3f} (>= 0.65), {elapsed:.0f}s (< 600s)")
    assert ok


# ------------------------------------------------------------------- 4


@pytest.mark.slow
def test_4_signal_recovery(verdict):
    t0 = time.perf_counter()
    sc = generate_tabular(SynthSpec(n_pos=50, n_neg=50, p=500, s=10, delta=3.0, seed=4))
    spec = spec_from_dict({"name": "planted", "task": "EvsH",
                           "selection": {"method": "anova", "k": [10, 20]},
                           "classifier": {"family": "lr"},
                           "cv": {"folds": 5, "repeats": 10, "seed": 4}})
    res = run_experiment(spec, sc.cohort, jobs=JOBS)
    top = report.importance_report(res.report).top(20)
    hits = len(set(top) & set(sc.planted_names))
    elapsed = time.perf_counter() - t0
    r = res.report
    ok = r.sensitivity >= 0.9 and r.specificity >= 0.9 and hits >= 8 and elapsed < 900
    verdict(4, ok, f"sensitivity {r.sensitivity:.3f}, specificity {r.specificity:.3f} (>= 0.9), "
                   f"{hits}/10 planted in top 20 (>= 8), {elapsed:.0f}s (< 900s)")
    assert ok


# ------------------------------------------------------------------- 5


def random_log(rng, mle):
    rows = []
    for i in range(int(rng.integers(4, 30))):
        cls = int(rng.integers(0, 2)) if i > 1 else i
        for r in range(int(rng.integers(1, 11))):
            rows.append(DecisionRow(r, int(rng.integers(0, 5)), f"s{i:02d}", cls,
                                    int(rng.random() < rng.uniform(0.2, 0.8)), float(rng.random()), "c"))
    return DecisionLog(mle, rows)


def test_5_pcq_rates(verdict):
    rng = np.random.default_rng(505)
    exact_fail, worst = 0, 0.0
    for k in range(100):
        log = random_log(rng, f"m{k}")
        t = pcq.build_pcq([log])
        for true_class in (0, 1):
            for decided in (0, 1):
                exact_fail += pcq.rate(t, log.mle, true_class, decided) != float(
                    naive_rate(log.rows, true_class, decided))
        f = pcq.subject_frequencies(t, log.mle)
        weighted = float(np.sum(f.n_cv * f.frequencies) / np.sum(f.n_cv))
        worst = max(worst, abs(weighted - pcq.tp_rate(t, log.mle)))
    ok = exact_fail == 0 and worst <= 1e-12
    verdict(5, ok, f"{exact_fail} rate mismatches vs enumeration, pooled rate vs weighted frequencies max gap {worst:.1e}")
    assert ok


# ------------------------------------------------------------------- 6


@pytest.mark.slow
def test_6_conformal_validity(verdict):
    t0 = time.perf_counter()
    spec = SynthSpec(n_pos=60, n_neg=60, p=5, s=2, delta=1.0, seed=6)
    train = generate_tabular(spec)
    fm = train.cohort.blocks["morphometry"]
    ytr = np.array([train.labels[s] for s in fm.subject_ids])
    model = classify.fit(classify.ClassifierSpec("lr"), fm.values, ytr)
    rng = np.random.default_rng(606)
    planted = list(train.planted)
    n_cal, trials = 99, 2000

    def draw(n):
        y = rng.integers(0, 2, n)
        X = rng.standard_normal((n, spec.p))
        X[np.ix_(y == 1, planted)] += spec.delta
        return X, y

    coverage = {}
    for eps in (0.05, 0.1, 0.2):
        hits = 0
        for _ in range(trials):
            X, y = draw(n_cal + 1)
            cal = conformal.calibrate(model, X[:-1], y[:-1], epsilon=eps)
            hits += int(y[-1]) in conformal.prediction_set(cal, X[-1:])
        coverage[eps] = hits / trials
    elapsed = time.perf_counter() - t0
    ok = all(c >= 1 - e - 0.03 for e, c in coverage.items()) and elapsed < 300
    verdict(6, ok, ", ".join(f"eps={e}: coverage {c:.3f} (>= {1 - e - 0.03:.2f})" for e, c in coverage.items())
            + f", {elapsed:.0f}s (< 300s)")
    assert ok


# ------------------------------------------------------------------- 7


def test_7_numerical_checks(verdict):
    rng = np.random.default_rng(707)
    worst_grad = 0.0
    h = 1e-6
    for _ in range(50):
        n, p = int(rng.integers(3, 15)), int(rng.integers(1, 6))
        X = rng.standard_normal((n, p))
        y = rng.integers(0, 2, n).astype(float)
        w, b, lam = rng.standard_normal(p), float(rng.standard_normal()), float(rng.uniform(0.01, 2))
        gw, gb = classify.lr_gradient(w, b, X, y, lam)
        theta = np.append(w, b)
        fd = np.empty_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (classify.lr_objective((theta + e)[:-1], (theta + e)[-1], X, y, lam)
                     - classify.lr_objective((theta - e)[:-1], (theta - e)[-1], X, y, lam)) / (2 * h)
        worst_grad = max(worst_grad, float(np.linalg.norm(np.append(gw, gb) - fd) / np.linalg.norm(fd)))
    worst_orth = worst_ratio = 0.0
    for _ in range(50):
        X = rng.standard_normal((10, 10)) @ rng.standard_normal((10, 10))
        m = dimred.pca_fit(X, 5)
        worst_orth = max(worst_orth, float(np.max(np.abs(m.components @ m.components.T - np.eye(5)))))
        ev = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1]
        worst_ratio = max(worst_ratio, float(np.max(np.abs(m.explained_variance_ratio - ev[:5] / ev.sum()))))
    ok = worst_grad < 1e-5 and worst_orth <= 1e-8 and worst_ratio <= 1e-9
    verdict(7, ok, f"LR gradient max rel. error {worst_grad:.1e} (< 1e-5), PCA orthonormality "
                   f"{worst_orth:.1e} (<= 1e-8), explained ratio gap {worst_ratio:.1e} (<= 1e-9)")
    assert ok


# ------------------------------------------------------------------- 8


def test_8_report_fidelity(verdict):
    rng = np.random.default_rng(808)
    structure = mismatches = 0
    for _ in range(200):
        n = int(rng.integers(4, 60))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = np.round(rng.random(n) * rng.integers(2, 20)) / 20
        log = DecisionLog("m", [DecisionRow(0, 0, f"s{i}", int(a), int(b >= 0.5), float(b), "c")
                                for i, (a, b) in enumerate(zip(y, s))])
        table = report.operating_table(log)
        structure += [r.target_fpr for r in table.rows] != [0.10, 0.15, 0.20, 0.30]
        for r in table.rows:
            mismatches += (r.achieved_fpr, r.tpr, r.threshold) != oracle_operating_point(y, s, r.target_fpr)
    healthy = [0.1, 0.2, 0.3, 0.4, 0.9]
    patients = [0.5, 0.86, 0.9, 0.92, 0.95]
    hand = DecisionLog("hand", [DecisionRow(0, 0, f"h{i}", 0, 0, v, "c") for i, v in enumerate(healthy)]
                       + [DecisionRow(0, 0, f"p{i}", 1, 1, v, "c") for i, v in enumerate(patients)])
    row = report.operating_table(hand, [0.2]).rows[0]
    hand_ok = row.achieved_fpr == pytest.approx(0.2) and row.tpr == pytest.approx(0.8)
    ok = structure == 0 and mismatches == 0 and hand_ok
    verdict(8, ok, f"{structure} grid-structure errors, {mismatches} mismatches vs exhaustive search "
                   f"over 200 logs; hand example at 20%: achieved FPR {row.achieved_fpr:.2f}, "
                   f"TPR {row.tpr:.2f} (expected 0.80) at threshold {row.threshold}")
    assert structure == 0 and mismatches == 0
    assert row.achieved_fpr == pytest.approx(0.2)
    assert row.tpr == pytest.approx(0.8)


# ------------------------------------------------------------------- 9


RICH_SPEC = """
name = "det"
task = {name = "EvsH"}
[selection]
method = ["anova", "model"]
k = [5, 10]
model = "lr"
[reduction]
method = ["none", "pca"]
components = [3]
[[classifier]]
family = "rfc"
grid = {n_trees = [20]}
[[classifier]]
family = "knn"
grid = {k = [3, 5]}
[cv]
folds = 5
repeats = 2
"""


@pytest.mark.slow
def test_9_determinism_across_jobs(verdict, tmp_path):
    (tmp_path / "spec.toml").write_text(RICH_SPEC)
    (tmp_path / "synth.toml").write_text("n_pos = 20\nn_neg = 20\nseed = 9\np = 40\ns = 5\ndelta = 1.2\n")
    assert cli.main(["synth", "--spec", str(tmp_path / "synth.toml"), "--out", str(tmp_path / "c")]) == 0
    for jobs in ("1", "3"):
        assert cli.main(["run", "--spec", str(tmp_path / "spec.toml"), "--cohort", str(tmp_path / "c"),
                         "--out", str(tmp_path / f"o{jobs}"), "--seed", "9", "--jobs", jobs]) == 0
    a = (tmp_path / "o1" / "decision_log.csv").read_bytes()
    b = (tmp_path / "o3" / "decision_log.csv").read_bytes()
    ok = a == b
    verdict(9, ok, f"decision logs for --jobs 1 and --jobs 3 {'are' if ok else 'are NOT'} byte-identical "
                   f"({len(a)} bytes)")
    assert ok


# ------------------------------------------------------------------ 10


def test_10_structural_fidelity(verdict):
    rng = np.random.default_rng(1010)
    a = np.triu(rng.random((116, 116)) < 0.1, 1)
    length = len(graph_feature_vector(Graph(a | a.T, ())).values)
    sc = generate_tabular(SynthSpec(n_pos=25, n_neg=25, p=20, s=3, seed=10))
    spec = spec_from_dict({"name": "tenfold", "task": "EvsH", "classifier": {"family": "lr"},
                           "cv": {"folds": 5, "repeats": 10, "seed": 10}})
    res = run_experiment(spec, sc.cohort, jobs=JOBS)
    table = pcq.build_pcq([res.log], sc.cohort)
    n_cv = {table.cell(s, "tenfold").n_cv for s in table.subject_ids}
    ok = length == 698 and n_cv == {10}
    verdict(10, ok, f"116-ROI graph vector length {length} (698), N_CV values {sorted(n_cv)} ({{10}})")
    assert ok

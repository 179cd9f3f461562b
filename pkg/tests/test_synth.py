import numpy as np
import pytest
from scipy.stats import norm

from neuropipe import ingest, synth
from neuropipe.errors import DataError
from neuropipe.flag_topology import topology_block
from neuropipe.graph_features import graph_block
from neuropipe.synth import SynthSpec


def rank_auc(pos, neg):
    pos, neg = np.asarray(pos)[:, None], np.asarray(neg)[None, :]
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


def test_deterministic_and_seed_sensitive(tmp_path):
    spec = SynthSpec(n_pos=6, n_neg=5, p=8, s=3, n_rois=5, seed=9)
    a, b = synth.generate(spec), synth.generate(spec)
    ingest.write_cohort(a.cohort, tmp_path / "a")
    ingest.write_cohort(b.cohort, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    c = synth.generate(spec.with_seed(10))
    assert not np.array_equal(c.cohort.blocks["morphometry"].values, a.cohort.blocks["morphometry"].values)


def test_ground_truth_and_roundtrip(tmp_path):
    sc = synth.generate(SynthSpec(n_pos=7, n_neg=4, p=12, s=4, n_rois=4, seed=1))
    assert sum(sc.labels.values()) == 7 and len(sc.planted) == 4
    assert sc.planted_names == tuple(f"f{j:04d}" for j in sc.planted)
    status = sc.cohort.status_of()
    assert all((status[s] == "E") == bool(y) for s, y in sc.labels.items())
    ingest.write_cohort(sc.cohort, tmp_path / "c")
    back = ingest.load_cohort(tmp_path / "c")
    assert back.blocks["morphometry"] == sc.cohort.blocks["morphometry"]
    assert back.connectivity == sc.cohort.connectivity
    assert [s.id for s in back.subjects] == sc.cohort.ids


def test_moments_within_three_standard_errors():
    spec = SynthSpec(n_pos=5000, n_neg=5000, p=4, s=2, delta=1.5, seed=3, covariates=False)
    sc = synth.generate_tabular(spec)
    X = sc.cohort.blocks["morphometry"].values
    y = np.array([sc.labels[s] for s in sc.cohort.blocks["morphometry"].subject_ids])
    for cls in (0, 1):
        block = X[y == cls]
        n = block.shape[0]
        for j in range(spec.p):
            mu = spec.delta if (cls == 1 and j in sc.planted) else 0.0
            assert abs(block[:, j].mean() - mu) < 3 / np.sqrt(n)
            assert abs(block[:, j].std(ddof=1) - 1.0) < 3 * np.sqrt(0.5 / (n - 1))


def test_bayes_accuracy_of_planted_cohort():
    spec = SynthSpec(n_pos=100, n_neg=100, p=500, s=10, delta=3.0, seed=0)
    bayes = norm.cdf(spec.delta * np.sqrt(spec.s) / 2)
    assert bayes > 0.99
    # Monte-Carlo: the Bayes rule thresholds the planted-feature sum at s*delta/2
    sc = synth.generate_tabular(spec.with_seed(1))
    fm = sc.cohort.blocks["morphometry"]
    y = np.array([sc.labels[s] for s in fm.subject_ids])
    pred = fm.values[:, list(sc.planted)].sum(axis=1) > spec.s * spec.delta / 2
    assert np.mean(pred == y) > 0.97
    null = SynthSpec(n_pos=10, n_neg=10, p=5, s=0, delta=0.0)
    assert norm.cdf(null.delta * np.sqrt(max(null.s, 1)) / 2) == 0.5


def test_global_efficiency_separates_classes():
    spec = SynthSpec(n_pos=100, n_neg=100, p=0, s=0, n_rois=12, w_intra=(0.7, 0.3), w_sd=0.15, seed=2)
    sc = synth.generate(spec)
    fm = graph_block(sc.cohort.connectivity, threshold=0.5)
    eff = fm.values[:, list(fm.feature_names).index("global_efficiency")]
    y = np.array([sc.labels[s] for s in fm.subject_ids])
    assert rank_auc(eff[y == 1], eff[y == 0]) > 0.9


def test_equal_parameters_give_no_signal():
    spec = SynthSpec(n_pos=100, n_neg=100, p=0, s=0, n_rois=10, w_intra=(0.5, 0.5), w_sd=0.2, seed=4)
    sc = synth.generate(spec)
    fm = graph_block(sc.cohort.connectivity, threshold=0.5)
    eff = fm.values[:, list(fm.feature_names).index("global_efficiency")]
    y = np.array([sc.labels[s] for s in fm.subject_ids])
    assert 0.35 < rank_auc(eff[y == 1], eff[y == 0]) < 0.65


def test_directed_topology_carries_signal():
    spec = SynthSpec(n_pos=40, n_neg=40, p=0, s=0, n_rois=8, directed=True, seed=5)
    sc = synth.generate(spec)
    assert all(m.directed for m in sc.cohort.connectivity.values())
    fm = topology_block(sc.cohort.connectivity, threshold=0.5, max_dim=2)
    y = np.array([sc.labels[s] for s in fm.subject_ids])
    tri = fm.values[:, fm.feature_names.index("count_2")]
    assert rank_auc(tri[y == 1], tri[y == 0]) > 0.9
    with pytest.raises(DataError, match="undirected"):
        graph_block(sc.cohort.connectivity, threshold=0.5)


def test_spec_file_loading(tmp_path, monkeypatch):
    (tmp_path / "s.toml").write_text(
        "n_pos = 3\nn_neg = 4\n[tabular]\np = 6\ns = 2\ndelta = 2.0\n"
        "[connectivity]\nn_rois = 4\np_intra = [0.9, 0.5]\nw_inter = 0.2\n")
    monkeypatch.setenv("NEUROPIPE_SEED", "17")
    spec = synth.load_synth_spec(tmp_path / "s.toml")
    assert spec.seed == 17 and spec.p == 6 and spec.p_intra == (0.9, 0.5) and spec.w_inter == (0.2, 0.2)
    (tmp_path / "bad.toml").write_text("n_pos = 3\nbogus = 1\n")
    with pytest.raises(DataError, match="bogus"):
        synth.load_synth_spec(tmp_path / "bad.toml")


@pytest.mark.parametrize("kwargs", [dict(s=11, p=10), dict(delta=-1.0), dict(p_intra=(1.2, 0.5)),
                                    dict(n_pos=0), dict(p=0, s=0)])
def test_invalid_specs(kwargs):
    with pytest.raises(DataError):
        SynthSpec(**kwargs)

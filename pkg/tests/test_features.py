import logging
import math
from collections import Counter

import numpy as np
import pytest
from scipy import stats

import oracles
from xrprofile.debias import DebiasedSeries, Kind
from xrprofile.features import (
    DEFAULT_BANK, FeatureError, FeatureTable, Scope, Target, aggregate, benjamini_yekutieli, build_matrix,
    feature_id, parse_feature_id, relevance_pvalues, select_relevant,
)
from xrprofile.synthgen import PopulationSpec, Scenario, generate
from xrprofile.telemetry import Action, Family, Task, Workload


def series(values):
    return DebiasedSeries(Kind.Movement, (Family.HeadPosition,), np.asarray(values, dtype=float), 5)


def test_bank_names_cover_oracles():
    assert sorted(DEFAULT_BANK.names) == sorted(oracles.aggregators())
    assert len(DEFAULT_BANK) == 25


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6, 7, 30])
def test_aggregators_on_short_series(n, rng):
    x = rng.normal(size=n)
    ref = oracles.aggregators()
    for agg in DEFAULT_BANK.aggregators:
        got = agg(x)
        assert oracles.close(got, float(ref[agg.name](x.tolist())), 1e-9, 1.0), (agg.name, n, got)


def test_constant_series_conventions():
    x = np.full(20, 2.5)
    vals = {a.name: a(x) for a in DEFAULT_BANK.aggregators}
    assert vals["skewness"] == 0.0 and vals["kurtosis"] == 0.0
    assert vals["binned_entropy"] == 0.0
    assert math.isnan(vals["autocorr_1"])
    assert vals["zero_crossings"] == 0.0 and vals["longest_increasing_run"] == 1.0


def test_binned_entropy_matches_histogram(rng):
    for _ in range(50):
        x = rng.normal(size=int(rng.integers(2, 60)))
        counts, _ = np.histogram(x, bins=10)
        p = counts[counts > 0] / len(x)
        agg = dict((a.name, a) for a in DEFAULT_BANK.aggregators)["binned_entropy"]
        assert agg(x) == pytest.approx(-np.sum(p * np.log(p)), rel=1e-12)


def test_batched_equals_single(rng):
    block = rng.normal(size=(7, 15))
    block[3] = 1.0  # a constant row must not disturb its neighbours
    batched = DEFAULT_BANK.apply(block)
    for i, row in enumerate(block):
        single = DEFAULT_BANK.apply(row[None, :])[0]
        np.testing.assert_array_equal(batched[i], single)


def test_undefined_imputed_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        out = aggregate(series([1.0, 2.0]))
    assert out["HeadPosition__Movement__kurtosis"] == 0.0
    assert out["HeadPosition__Movement__autocorr_5"] == 0.0
    assert "imputed" in caplog.text
    c = Counter()
    aggregate(series([1.0, 2.0]), undefined=c)
    assert c["skewness"] == 1 and c["autocorr_5"] == 1


def test_empty_series_rejected():
    with pytest.raises(FeatureError):
        aggregate(series([]))


def test_feature_id_roundtrip():
    fid = feature_id("EyeLeft+EyeRight__PupilAsymmetry", "rms")
    assert fid == "EyeLeft+EyeRight__PupilAsymmetry__rms"
    fams, kind, agg = parse_feature_id(fid)
    assert fams == (Family.EyeLeft, Family.EyeRight) and kind == "PupilAsymmetry" and agg == "rms"
    with pytest.raises(FeatureError, match="malformed"):
        parse_feature_id("HeadPosition_Movement_mean")


def test_build_matrix_shape_and_order(ar_small, ar_table):
    ds = ar_small[0]
    assert ar_table.X.shape == (len(ds.recordings), 5 * 25)
    keys = list(zip(ar_table.labels["user_id"], ar_table.labels["trial_id"], ar_table.labels["segment_id"]))
    assert keys == sorted(keys)
    assert np.all(np.isfinite(ar_table.X))


def test_build_matrix_vr_width(vr_small):
    table = build_matrix(vr_small[0])
    assert table.X.shape[1] == 19 * 25


def test_build_matrix_parallel_identical(ar_small, ar_table):
    par = build_matrix(ar_small[0], jobs=2)
    assert par.feature_ids == ar_table.feature_ids
    np.testing.assert_array_equal(par.X, ar_table.X)


def test_scope_filter(ar_table):
    walk = ar_table.filter(Scope(actions=(Action.Walk,), workloads=(Workload.High,)))
    assert set(walk.labels["action"]) == {"Walk"} and set(walk.labels["task"]) == {"NT_High"}
    mt = ar_table.filter(Scope(tasks=(Task.MT,)))
    assert set(mt.labels["workload"]) == {"High"}
    with pytest.raises(FeatureError, match="no recordings"):
        build_matrix(ar_small_dataset(), scope=Scope(actions=(Action.Idle,)))


def ar_small_dataset():
    return generate(PopulationSpec(n_users=1), Scenario(device="AR", n_trials=1))[0]


def test_csv_roundtrip_exact(ar_table, tmp_path):
    path = tmp_path / "f.csv"
    ar_table.to_csv(str(path))
    back = FeatureTable.from_csv(str(path))
    assert back.feature_ids == ar_table.feature_ids
    np.testing.assert_array_equal(back.X, ar_table.X)
    assert back.labels.equals(ar_table.labels)


def test_rank_tests_match_scipy(rng):
    X = rng.normal(size=(30, 3))
    y2 = np.array(["a", "b"] * 15, dtype=object)
    p = relevance_pvalues(X, y2)
    for j in range(3):
        ref = stats.mannwhitneyu(X[y2 == "a", j], X[y2 == "b", j], alternative="two-sided", method="asymptotic")
        assert p[j] == pytest.approx(ref.pvalue, rel=1e-12)
    y3 = np.array(["a", "b", "c"] * 10, dtype=object)
    p = relevance_pvalues(X, y3)
    for j in range(3):
        ref = stats.kruskal(*(X[y3 == c, j] for c in "abc"))
        assert p[j] == pytest.approx(ref.pvalue, rel=1e-12)


def test_constant_column_gets_p_one(rng):
    X = np.column_stack([np.ones(20), rng.normal(size=20)])
    y = np.array(["a", "b"] * 10, dtype=object)
    assert relevance_pvalues(X, y)[0] == 1.0
    with pytest.raises(FeatureError, match="degenerate target"):
        relevance_pvalues(X, np.array(["a"] * 20, dtype=object))


def test_by_adjustment_by_hand():
    p = np.array([0.01, 0.04, 0.03, 0.5])
    m = 4
    c = sum(1 / i for i in range(1, m + 1))
    order = np.argsort(p)
    raw = [p[order[i]] * m * c / (i + 1) for i in range(m)]
    adj = np.minimum.accumulate(raw[::-1])[::-1]
    expect = np.empty(m)
    expect[order] = np.minimum(adj, 1)
    np.testing.assert_allclose(benjamini_yekutieli(p), expect, rtol=1e-12)


def test_by_controls_false_discoveries_under_null():
    # global null: any discovery is false, so the discovery rate is the FDR
    rng = np.random.default_rng(0)
    q = 0.05
    hits = sum(np.any(benjamini_yekutieli(rng.uniform(size=200)) < q) for _ in range(2000))
    assert hits / 2000 <= q


def _table(X, y):
    import pandas as pd

    from xrprofile.features import LABEL_COLUMNS

    n = len(y)
    lab = pd.DataFrame({c: [""] * n for c in LABEL_COLUMNS})
    lab["gender"] = y
    lab["user_id"] = [f"u{i}" for i in range(n)]
    ids = tuple(f"HeadPosition__Movement__c{j}" for j in range(X.shape[1]))
    return FeatureTable(ids, X, lab)


def test_selection_finds_planted_column():
    rng = np.random.default_rng(3)
    y = np.array(["Female", "Male"] * 40, dtype=object)
    X = rng.normal(size=(80, 30))
    X[:, 7] += 2.0 * (y == "Male")
    keep = select_relevant(_table(X, y), Target.Gender, 0.05)
    assert "HeadPosition__Movement__c7" in keep
    assert len(keep) <= 2
    with pytest.raises(FeatureError, match="fdr_level"):
        select_relevant(_table(X, y), Target.Gender, 1.5)

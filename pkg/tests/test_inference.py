import math

import numpy as np
import pytest

from conftest import school_labels, toy_dataset
from analysis.inference import (
    CateTable,
    ate,
    basic_interval,
    cate_summary,
    cluster_bootstrap,
    cluster_bootstrap_multi,
    histogram,
    histogram_frame,
    interval_text,
    naive_ate,
    pehe,
    resample_schools,
)
from cohort.dataset import GroundTruth
from errors import AggregationError, ArgumentError
from tools import derive_seed


def _cate(values, model_id="m"):
    values = np.asarray(values, dtype=float)
    return CateTable(
        row_ids=np.arange(values.size),
        school_ids=np.array([f"s{i % 3}" for i in range(values.size)], dtype=object),
        tau_hat=values,
        model_id=model_id,
        seed=0,
    )


def _naive(dataset, seed):
    return naive_ate(dataset)


def test_naive_difference_in_means():
    data = toy_dataset([0, 1, 0, 1], [1.0, 3.0, 2.0, 6.0], ["a", "a", "b", "b"])
    assert naive_ate(data) == pytest.approx(3.0)
    with pytest.raises(ArgumentError):
        naive_ate(toy_dataset([1, 1], [1.0, 2.0], ["a", "b"]))


def test_ate_is_mean_of_imputed_effects():
    assert ate(_cate([0.1, 0.2, 0.6])) == pytest.approx(0.3)


def test_cate_table_rejects_bad_columns():
    with pytest.raises(ArgumentError):
        _cate([0.1, np.nan])
    with pytest.raises(ArgumentError):
        CateTable(row_ids=np.arange(2), school_ids=np.array(["a"], dtype=object), tau_hat=np.zeros(2), model_id="m", seed=0)


def test_single_school_gives_zero_width_interval():
    data = toy_dataset([0, 1, 0, 1, 1], [1.0, 2.0, 0.5, 4.0, 3.0], ["only"] * 5)
    result = cluster_bootstrap(data, _naive, B=30, seed=2)
    assert result.ci_low == pytest.approx(result.point_estimate)
    assert result.ci_high == pytest.approx(result.point_estimate)
    np.testing.assert_allclose(result.replicates, result.point_estimate)


def test_constant_statistic_gives_zero_width_interval(small_cohort):
    data, _ = small_cohort
    result = cluster_bootstrap(data, lambda d, s: 0.5, B=25, seed=1)
    assert (result.ci_low, result.ci_high) == (0.5, 0.5)
    assert result.B == 25 and result.n_failed == 0


def test_resample_copies_whole_schools(rng):
    schools = school_labels(5, 1) + school_labels(5, 4)[5:]
    data = toy_dataset([i % 2 for i in range(len(schools))], [float(i) for i in range(len(schools))], schools)
    sizes = {sid: rows.size for sid, rows in data.school_index.items()}
    sample = resample_schools(data, rng)
    assert sample.n_schools == data.n_schools
    for label, rows in sample.school_index.items():
        sid, draw = label.split("#b")
        assert rows.size == sizes[sid]
        assert 0 <= int(draw) < data.n_schools


def test_replicate_can_be_rerun_alone(small_cohort):
    data, _ = small_cohort
    result = cluster_bootstrap(data, _naive, B=12, seed=17)
    k = 7
    alone = naive_ate(resample_schools(data, np.random.default_rng([17, k])))
    assert result.replicates[k] == alone


def test_bootstrap_is_thread_invariant(small_cohort):
    data, _ = small_cohort
    a = cluster_bootstrap(data, _naive, B=40, seed=5, threads=1)
    b = cluster_bootstrap(data, _naive, B=40, seed=5, threads=4)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    assert (a.ci_low, a.ci_high) == (b.ci_low, b.ci_high)
    c = cluster_bootstrap(data, _naive, B=40, seed=6)
    assert not np.array_equal(a.replicates, c.replicates)


def test_failed_replicates_are_dropped_up_to_the_limit(small_cohort):
    data, _ = small_cohort
    bad = {derive_seed(3, k) for k in (2, 9)}

    def statistic(dataset, seed):
        if seed in bad:
            raise RuntimeError("singular fit")
        return naive_ate(dataset)

    result = cluster_bootstrap(data, statistic, B=20, seed=3)
    assert result.n_failed == 2
    assert result.replicates.shape == (18,)
    assert result.B == 20


def test_too_many_failures_raise(small_cohort):
    data, _ = small_cohort
    bad = {derive_seed(3, k) for k in range(5)}

    def statistic(dataset, seed):
        if seed in bad:
            return float("nan")
        return naive_ate(dataset)

    with pytest.raises(AggregationError):
        cluster_bootstrap(data, statistic, B=20, seed=3)

    def always(dataset, seed):
        if seed != 3:
            raise RuntimeError("boom")
        return 0.0

    with pytest.raises(AggregationError):
        cluster_bootstrap(data, always, B=4, seed=3)


def test_multi_bootstrap_shares_replicates(small_cohort):
    data, _ = small_cohort
    results = cluster_bootstrap_multi(data, lambda d, s: {"a": naive_ate(d), "b": 2.0 * naive_ate(d)}, B=15, seed=8)
    assert set(results) == {"a", "b"}
    np.testing.assert_allclose(results["b"].replicates, 2.0 * results["a"].replicates)
    assert results["b"].ci_low == pytest.approx(2.0 * results["a"].ci_low)
    with pytest.raises(ArgumentError):
        cluster_bootstrap(data, lambda d, s: {"a": 1.0, "b": 2.0}, B=3)


def test_bootstrap_argument_checks(small_cohort):
    data, _ = small_cohort
    with pytest.raises(ArgumentError):
        cluster_bootstrap(data, _naive, B=0)
    with pytest.raises(ArgumentError):
        cluster_bootstrap(data, _naive, B=5, level=1.0)


def test_basic_interval_reflects_quantiles():
    low, high = basic_interval(1.0, np.arange(101.0), 0.9)
    assert low == pytest.approx(2.0 - 95.0)
    assert high == pytest.approx(2.0 - 5.0)


def test_pehe_against_truth():
    truth = GroundTruth(tau=np.array([1.0, 4.0]), mu0=np.zeros(2), propensity=np.full(2, 0.5))
    assert pehe(_cate([1.0, 2.0]), truth) == pytest.approx(math.sqrt(2.0))
    with pytest.raises(ArgumentError):
        pehe(_cate([1.0]), truth)


def test_histogram_of_constant_values_widens_range():
    counts, edges = histogram(np.full(7, 2.0), 4)
    assert edges[0] == 1.5 and edges[-1] == 2.5
    assert counts.sum() == 7
    frame = histogram_frame(_cate(np.full(7, 2.0)), bins=4)
    assert list(frame.columns) == ["bin_low", "bin_high", "count"]
    assert frame["count"].sum() == 7


def test_cate_summary_describes_distribution():
    summary = cate_summary(_cate([-1.0, 1.0, 2.0, 2.0]), bins=5)
    assert summary["mean"] == pytest.approx(1.0)
    assert summary["share_positive"] == pytest.approx(0.75)
    assert summary["min"] == -1.0 and summary["max"] == 2.0
    assert sum(summary["histogram"]["counts"]) == 4


def test_interval_text_formatting():
    assert interval_text(0.2561, 0.2249, 0.2987) == "0.26 [0.22, 0.30]"
    assert interval_text(-0.05, -0.1, 0.0, digits=3) == "-0.050 [-0.100, 0.000]"

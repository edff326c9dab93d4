import math

import numpy as np
import pytest

from conftest import school_labels, toy_dataset, toy_schema
from analysis.diagnostics import (
    balance_report,
    covariate_marginals,
    group_mmd,
    marginal_frames,
    pca_project,
    permutation_null,
    smd,
    smd_table,
)
from cohort.dataset import Column
from errors import ArgumentError


def test_smd_zero_for_matched_groups():
    data = toy_dataset([0, 0, 1, 1], [0.0] * 4, ["a", "b", "c", "d"], {"x": [1.0, 2.0, 1.0, 2.0]})
    assert smd(data, "x") == 0.0


def test_smd_uses_pooled_population_variance():
    data = toy_dataset([0, 0, 1, 1], [0.0] * 4, ["a", "b", "c", "d"], {"x": [0.0, 2.0, 1.0, 3.0]})
    assert smd(data, "x") == pytest.approx(1.0)


def test_smd_of_constant_covariate_is_zero():
    data = toy_dataset([0, 1, 0, 1], [0.0] * 4, ["a", "a", "b", "b"], {"x": [4.0] * 4})
    assert smd(data, "x") == 0.0


def test_categorical_smd_needs_a_level():
    schema = toy_schema((Column("g", level="school", kind="categorical"),))
    data = toy_dataset([0, 1, 0, 1], [0.0] * 4, ["a", "b", "c", "d"], {"g": ["A", "A", "B", "A"]}, schema=schema)
    with pytest.raises(ArgumentError):
        smd(data, "g")
    # indicator: control [1, 0], treated [1, 1]
    assert smd(data, "g=A") == pytest.approx((1.0 - 0.5) / math.sqrt(0.25 / 2.0))
    assert set(smd_table(data)) == {"g=A", "g=B"}
    with pytest.raises(ArgumentError):
        smd(data, "h")


def test_randomized_assignment_is_balanced_on_student_covariates(small_cohort):
    data, _ = small_cohort
    g0, g1 = data.groups()
    se = math.sqrt(1.0 / g0.size + 1.0 / g1.size)
    for name in ("S3", "C1", "C2", "C3"):
        assert abs(smd(data, name)) < 4 * se


def test_marginals_share_edges_and_count_every_row(small_cohort):
    data, _ = small_cohort
    g0, g1 = data.groups()
    marginals = covariate_marginals(data, n_bins=8)
    assert any(name.startswith("XC=") for name in marginals)
    for m in marginals.values():
        assert m.edges.shape == (9,)
        assert m.counts0.sum() == g0.size
        assert m.counts1.sum() == g1.size
    name, frame = marginal_frames(balance_report(data, n_bins=8))[0]
    assert list(frame.columns) == ["bin_low", "bin_high", "count_control", "count_treated"]
    with pytest.raises(ArgumentError):
        covariate_marginals(data, n_bins=0)


def test_constant_covariate_marginal_is_centered():
    data = toy_dataset([0, 1, 0], [0.0] * 3, ["a", "b", "c"], {"x": [2.0, 2.0, 2.0]})
    m = covariate_marginals(data, n_bins=2)["x"]
    np.testing.assert_allclose(m.edges, [1.5, 2.0, 2.5])
    assert m.counts0.tolist() == [0, 2]
    assert m.counts1.tolist() == [0, 1]


def test_separated_groups_have_mmd_near_two():
    x = [0.0] * 20 + [1000.0] * 20
    data = toy_dataset([0] * 20 + [1] * 20, [0.0] * 40, school_labels(8, 5), {"x": x})
    result = group_mmd(data, sigma=0.1)
    assert result.value == pytest.approx(2.0, abs=1e-9)
    assert result.sigma == 0.1
    test = permutation_null(data, sigma=0.1, n_permutations=50, seed=0)
    assert test.observed == pytest.approx(2.0, abs=1e-9)
    assert test.observed > test.null_q95
    assert test.p_value == pytest.approx(1.0 / 51.0)


def test_randomized_cohort_is_inside_permutation_null(small_cohort):
    data, _ = small_cohort
    test = permutation_null(data, n_permutations=100, seed=3)
    assert test.null.shape == (100,)
    assert test.p_value > 1.0 / 101.0
    assert test.sigma > 0


def test_permutation_null_subsamples_large_cohorts(nslm_cohort):
    data, _ = nslm_cohort
    test = permutation_null(data, n_permutations=5, seed=1, max_rows=500)
    assert test.n_rows == 500
    again = permutation_null(data, n_permutations=5, seed=1, max_rows=500)
    np.testing.assert_array_equal(test.null, again.null)


def test_projection_of_rank_one_covariates():
    x = np.linspace(-1.0, 1.0, 12)
    data = toy_dataset([i % 2 for i in range(12)], [0.0] * 12, school_labels(3, 4), {"x": list(x), "w": list(2.0 * x + 1.0)})
    scores = pca_project(data)
    assert scores.shape == (12, 2)
    np.testing.assert_allclose(scores[:, 1], 0.0, atol=1e-9)
    assert scores[-1, 0] > scores[0, 0]
    single = toy_dataset([0, 1], [0.0, 0.0], ["a", "b"], {"x": [0.0, 1.0]})
    with pytest.raises(ArgumentError):
        pca_project(single)


def test_balance_report_contents(small_cohort):
    data, _ = small_cohort
    report = balance_report(data, n_bins=10)
    payload = report.to_dict()
    assert set(payload) == {"group_sizes", "smd", "max_abs_smd", "mmd2", "mmd_sigma", "projection", "marginals"}
    assert payload["group_sizes"]["control"] + payload["group_sizes"]["treated"] == data.m
    assert payload["max_abs_smd"] == max(abs(v) for v in payload["smd"].values())
    frame = report.projection_frame()
    assert list(frame.columns) == ["x", "y", "z"]
    assert len(frame) == data.m


def test_diagnostics_need_both_groups():
    data = toy_dataset([1, 1], [0.0, 1.0], ["a", "b"], {"x": [0.0, 1.0]})
    with pytest.raises(ArgumentError):
        smd(data, "x")
    with pytest.raises(ArgumentError):
        group_mmd(data)

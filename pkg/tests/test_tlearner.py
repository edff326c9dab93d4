import numpy as np
import pytest

from conftest import school_labels, toy_dataset
from analysis.inference import ate, r2_heldout
from cohort.dataset import fit_encoder
from errors import ArgumentError, FitError, UndefinedMetricError
from estimators.tlearner import OutcomePairModel, fit_t_learner, impute_cate
from learners import EstimatorConfig
from learners.ridge import RidgeModel

RIDGE_EXACT = EstimatorConfig(family="ridge", ridge_lambda=0.0)


def _alternating(n_schools=6, per=10, y=None, x=None):
    m = n_schools * per
    z = [i % 2 for i in range(m)]
    x = np.linspace(-1.0, 1.0, m) if x is None else x
    y = np.asarray(z, dtype=float) if y is None else y
    return toy_dataset(z, list(y), school_labels(n_schools, per), {"x": list(x)})


def test_outcome_equal_to_treatment_gives_unit_effect():
    data = _alternating()
    model = fit_t_learner(data, RIDGE_EXACT, seed=0)
    cate = impute_cate(model, data)
    np.testing.assert_allclose(cate.tau_hat, np.ones(data.m), atol=1e-9)
    assert ate(cate) == pytest.approx(1.0)


def test_shared_linear_outcome_has_no_effect():
    x = np.linspace(-2.0, 2.0, 60)
    data = _alternating(y=3.0 * x - 1.0, x=x)
    cate = impute_cate(fit_t_learner(data, RIDGE_EXACT, seed=3), data)
    np.testing.assert_allclose(cate.tau_hat, 0.0, atol=1e-9)


def test_empty_group_is_a_fit_error():
    data = toy_dataset([0, 0, 0], [1.0, 2.0, 3.0], ["a", "b", "c"])
    with pytest.raises(FitError, match="treated"):
        fit_t_learner(data, RIDGE_EXACT)
    data = toy_dataset([1, 1], [1.0, 2.0], ["a", "b"])
    with pytest.raises(FitError, match="control"):
        fit_t_learner(data, RIDGE_EXACT)


def _pair(f0, f1, data):
    return OutcomePairModel(encoder=fit_encoder(data), strategy="t_learner", family="ridge", model_id="hand", seed=0, f0=f0, f1=f1)


def test_identical_arms_give_zero_and_offset_arms_give_offset():
    data = _alternating()
    base = RidgeModel(coef=np.array([0.7]), intercept=0.2, n_features=1)
    shifted = RidgeModel(coef=np.array([0.7]), intercept=0.2 + 0.45, n_features=1)
    np.testing.assert_array_equal(impute_cate(_pair(base, base, data), data).tau_hat, np.zeros(data.m))
    np.testing.assert_allclose(impute_cate(_pair(base, shifted, data), data).tau_hat, 0.45)


def test_pair_needs_both_arms():
    data = _alternating()
    base = RidgeModel(coef=np.array([0.0]), intercept=0.0, n_features=1)
    with pytest.raises(ArgumentError):
        OutcomePairModel(encoder=fit_encoder(data), strategy="t_learner", family="ridge", model_id="x", seed=0, f0=base)
    with pytest.raises(ArgumentError):
        OutcomePairModel(encoder=fit_encoder(data), strategy="s_learner", family="ridge", model_id="x", seed=0, f0=base, f1=base)


def test_outcome_models_use_their_own_group_only():
    # Controls sit on y = x, treated on y = 2x + 1; each arm must see only its rows.
    x = np.linspace(-1.0, 1.0, 40)
    z = np.array([i % 2 for i in range(40)])
    y = np.where(z == 1, 2.0 * x + 1.0, x)
    data = toy_dataset(list(z), list(y), school_labels(4, 10), {"x": list(x)})
    model = fit_t_learner(data, RIDGE_EXACT)
    mu0, mu1 = model.predict_outcomes(data)
    np.testing.assert_allclose(mu0, x, atol=1e-9)
    np.testing.assert_allclose(mu1, 2.0 * x + 1.0, atol=1e-9)
    np.testing.assert_allclose(impute_cate(model, data).tau_hat, x + 1.0, atol=1e-9)


def test_tlearner_thread_count_does_not_change_fit(small_cohort):
    data, _ = small_cohort
    config = EstimatorConfig(family="forest", n_trees=8, min_leaf_rows=10)
    a = impute_cate(fit_t_learner(data, config, seed=5, threads=1), data)
    b = impute_cate(fit_t_learner(data, config, seed=5, threads=2), data)
    np.testing.assert_array_equal(a.tau_hat, b.tau_hat)


def test_model_record_names_both_arms(small_cohort):
    data, _ = small_cohort
    model = fit_t_learner(data, EstimatorConfig(family="ridge", ridge_lambda=0.5), seed=2, model_id="ridge#0")
    record = model.to_dict()
    assert record["strategy"] == "t_learner"
    assert record["model_id"] == "ridge#0"
    assert {"f0", "f1", "encoder"} <= set(record)
    assert impute_cate(model, data).model_id == "ridge#0"


class _Fixed:
    def __init__(self, mu0, mu1):
        self.mu0, self.mu1 = np.asarray(mu0, dtype=float), np.asarray(mu1, dtype=float)

    def predict_outcomes(self, data):
        return self.mu0, self.mu1


def test_heldout_r2_scores_factual_arm():
    data = toy_dataset([0, 1, 0, 1], [1.0, 2.0, 3.0, 4.0], ["a", "a", "b", "b"])
    perfect = _Fixed([1.0, 99.0, 3.0, 99.0], [99.0, 2.0, 99.0, 4.0])
    assert r2_heldout(perfect, data) == pytest.approx(1.0)
    flat = _Fixed(np.full(4, 2.5), np.full(4, 2.5))
    assert r2_heldout(flat, data) == pytest.approx(0.0)
    bad = _Fixed(np.full(4, 10.0), np.full(4, 10.0))
    assert r2_heldout(bad, data) < 0.0


def test_heldout_r2_undefined_for_constant_outcome():
    data = toy_dataset([0, 1], [2.0, 2.0], ["a", "b"])
    with pytest.raises(UndefinedMetricError):
        r2_heldout(_Fixed([2.0, 2.0], [2.0, 2.0]), data)


def test_heldout_r2_ignores_row_order(small_cohort):
    data, _ = small_cohort
    model = fit_t_learner(data, EstimatorConfig(family="ridge", ridge_lambda=0.1), seed=0)
    order = np.random.default_rng(8).permutation(data.m)
    assert r2_heldout(model, data.take(order)) == pytest.approx(r2_heldout(model, data), rel=0, abs=1e-12)


RIDGE_PENALIZED = EstimatorConfig(family="ridge", ridge_lambda=1.0)


@pytest.mark.parametrize("dropped, kept_arm", [(1, "f0"), (0, "f1")])
def test_arm_fit_ignores_rows_of_the_other_group(dropped, kept_arm):
    # row 1 is treated, row 0 is control; the shared encoder stays pinned.
    x = np.linspace(-1.0, 1.0, 60)
    y = 0.8 * x + 0.3 * np.sin(7.0 * x) + np.array([i % 2 for i in range(60)], dtype=float)
    data = _alternating(y=y, x=x)
    encoder = fit_encoder(data)
    full = fit_t_learner(data, RIDGE_PENALIZED, seed=1, encoder=encoder)
    reduced = data.take([i for i in range(data.m) if i != dropped])
    refit = fit_t_learner(reduced, RIDGE_PENALIZED, seed=1, encoder=encoder)
    before, after = getattr(full, kept_arm), getattr(refit, kept_arm)
    np.testing.assert_array_equal(before.coef, after.coef)
    assert before.intercept == after.intercept
    other = "f1" if kept_arm == "f0" else "f0"
    assert not np.array_equal(getattr(full, other).coef, getattr(refit, other).coef)


def test_outcome_shift_leaves_effects_unchanged():
    x = np.linspace(-1.0, 1.0, 60)
    y = 0.5 * x + 0.2 * x ** 2 + 0.4 * np.array([i % 2 for i in range(60)], dtype=float)
    data = _alternating(y=y, x=x)
    shifted = _alternating(y=y + 3.5, x=x)
    a = fit_t_learner(data, RIDGE_PENALIZED, seed=0)
    b = fit_t_learner(shifted, RIDGE_PENALIZED, seed=0)
    mu0_a, mu1_a = a.predict_outcomes(data)
    mu0_b, mu1_b = b.predict_outcomes(shifted)
    np.testing.assert_allclose(mu0_b - mu0_a, 3.5, atol=1e-9)
    np.testing.assert_allclose(mu1_b - mu1_a, 3.5, atol=1e-9)
    diff = impute_cate(b, shifted).tau_hat - impute_cate(a, data).tau_hat
    assert np.max(np.abs(diff)) < 1e-6

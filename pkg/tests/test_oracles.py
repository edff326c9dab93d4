"""Monte-Carlo checks against the synthetic generator's known effects. Run with ``-m slow``."""
import numpy as np
import pytest

from analysis.diagnostics import group_mmd, permutation_null, smd
from analysis.inference import ate, cluster_bootstrap, naive_ate
from analysis.interpret import feature_importance, interpret_tree_fit
from cohort.dataset import SyntheticConfig, expected_naive_bias, generate_synthetic
from cohort.splitting import balanced_split, n_train_schools, score_partition
from estimators.repnet import RepNetConfig, as_outcome_pair, repnet_fit
from estimators.tlearner import fit_t_learner, impute_cate
from learners import EstimatorConfig

pytestmark = pytest.mark.slow

RIDGE = EstimatorConfig(family="ridge", ridge_lambda=0.01)
NET = {"rep_layers": [32, 32], "head_layers": [16], "epochs": 40, "step_size": 0.002, "batch_size": 256}
STEP_EFFECT = {"kind": "threshold", "base": 0.1, "delta": 0.3, "conditions": [{"covariate": "X1", "op": "<", "value": 0.0}]}


@pytest.fixture(scope="module")
def constant_cohort():
    return generate_synthetic(SyntheticConfig(n_schools=76, students_per_school=140, seed=101))


def test_ridge_recovers_constant_effect(constant_cohort):
    data, truth = constant_cohort
    estimate = ate(impute_cate(fit_t_learner(data, RIDGE, seed=0), data))
    assert abs(estimate - 0.26) <= 0.03
    assert truth.ate == pytest.approx(0.26)


@pytest.mark.parametrize("family", ["tarnet", "cfr"])
def test_representation_networks_recover_constant_effect(constant_cohort, family):
    data, _ = constant_cohort
    net = repnet_fit(data, RepNetConfig.from_candidate(family, NET), seed=0)
    estimate = ate(impute_cate(as_outcome_pair(net), data))
    assert abs(estimate - 0.26) <= 0.03


def test_naive_bias_matches_closed_form_and_ridge_adjusts():
    config = SyntheticConfig(
        n_schools=100,
        students_per_school=100,
        assignment={"kind": "confounded", "covariate": "S3", "p": 0.5, "strength": 1.0},
        seed=11,
    )
    data, truth = generate_synthetic(config)
    bias = naive_ate(data) - truth.ate
    boot = cluster_bootstrap(data, lambda d, s: naive_ate(d), B=200, seed=5)
    se = float(np.std(boot.replicates))
    expected = expected_naive_bias(config)
    assert expected > 0.05
    assert abs(bias - expected) < 3 * se
    adjusted = ate(impute_cate(fit_t_learner(data, RIDGE, seed=0), data))
    assert abs(adjusted - truth.ate) <= 0.04


def test_cfr_recovers_step_heterogeneity():
    data, truth = generate_synthetic(SyntheticConfig(n_schools=76, students_per_school=140, effect=STEP_EFFECT, noise_sd=0.25, seed=202))
    net = repnet_fit(data, RepNetConfig.from_candidate("cfr", {**NET, "epochs": 60}), seed=3)
    pair = as_outcome_pair(net)
    cate = impute_cate(pair, data)

    tree = interpret_tree_fit(cate, data, list(data.schema.covariate_names), max_depth=2)
    assert tree.feature_names[int(tree.tree.feature[0])] == "X1"
    grid = np.unique(data.values["X1"])
    k = int(np.searchsorted(grid, 0.0))
    assert grid[max(k - 2, 0)] <= tree.tree.threshold[0] <= grid[min(k + 1, grid.size - 1)]

    report = feature_importance(cate, pair.encoder.transform(data), EstimatorConfig(family="forest", n_trees=50, min_leaf_rows=50), seed=0)
    assert report.ranked()[0][0] == "X1"
    inside = (cate.tau_hat >= 0.0) & (cate.tau_hat <= 0.5)
    assert inside.mean() >= 0.95
    assert truth.tau.min() == pytest.approx(0.1) and truth.tau.max() == pytest.approx(0.4)


def test_larger_alpha_gives_closer_group_representations():
    config = SyntheticConfig(
        n_schools=40,
        students_per_school=60,
        assignment={"kind": "confounded", "covariate": "S3", "p": 0.5, "strength": 2.0},
        seed=303,
    )
    data, _ = generate_synthetic(config)
    base = {**NET, "epochs": 20, "mmd_sigma": 1.0}
    plain = repnet_fit(data, RepNetConfig.from_candidate("tarnet", base), seed=1)
    strong = repnet_fit(data, RepNetConfig.from_candidate("cfr", {**base, "alpha": 10.0}), seed=1)
    assert strong.trace["mmd"][-1] < plain.trace["mmd"][-1]


def test_bootstrap_interval_coverage():
    covered = 0
    reps = 100
    for r in range(reps):
        data, _ = generate_synthetic(SyntheticConfig(n_schools=20, students_per_school=100, seed=10_000 + r))

        def statistic(sample, seed, data=data):
            return ate(impute_cate(fit_t_learner(sample, RIDGE, seed=seed), data))

        point = statistic(data, 0)
        result = cluster_bootstrap(data, statistic, B=200, seed=r, point_estimate=point)
        covered += int(result.ci_low <= 0.26 <= result.ci_high)
    assert 88 <= covered <= 99


def test_split_beats_typical_random_partition():
    data, _ = generate_synthetic(SyntheticConfig(n_schools=40, students_per_school=30, seed=404))
    split = balanced_split(data, n_candidates=2000, seed=0)
    rng = np.random.default_rng(1)
    k = n_train_schools(data.n_schools, 0.8)
    scores = [score_partition(data, list(rng.choice(data.schools, size=k, replace=False))) for _ in range(1000)]
    assert split.score <= float(np.median(scores))


def test_randomized_assignment_balance_at_scale():
    data, _ = generate_synthetic(SyntheticConfig(n_schools=100, students_per_school=100, seed=505))
    for name in ("S3", "C1", "C2", "C3"):
        assert abs(smd(data, name)) < 0.1
    test = permutation_null(data, n_permutations=200, seed=0)
    assert test.observed < test.null_q95 or test.p_value > 0.05
    assert group_mmd(data).value >= 0.0

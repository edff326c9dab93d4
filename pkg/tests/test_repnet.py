import math

import numpy as np
import pytest

from errors import ArgumentError, ConfigError, FitError
from estimators.repnet import (
    RepNetConfig,
    RepNetModel,
    as_outcome_pair,
    fit_network,
    mmd2_rbf,
    mmd2_rbf_with_grad,
    repnet_fit,
    repnet_objective,
    representation_mmd,
    stratified_batches,
)
from estimators.tlearner import impute_cate
from learners.mlp import init_layers


# ---------------------------------------------------------------------------
# MMD
# ---------------------------------------------------------------------------


def test_mmd_of_a_set_with_itself_is_zero(rng):
    A = rng.normal(size=(15, 3))
    assert mmd2_rbf(A, A, 1.3) == pytest.approx(0.0, abs=1e-12)


def test_mmd_two_points_by_hand():
    # 1 + 1 - 2 * exp(-1/2)
    assert mmd2_rbf([[0.0]], [[1.0]], 1.0) == pytest.approx(2.0 - 2.0 * math.exp(-0.5))
    assert mmd2_rbf([0.0], [1.0], 1.0) == pytest.approx(0.786939, abs=1e-6)


def test_mmd_is_symmetric_and_nonnegative(rng):
    for _ in range(5):
        A = rng.normal(size=(7, 2))
        B = rng.normal(loc=0.3, size=(11, 2))
        ab = mmd2_rbf(A, B, 0.9)
        assert ab >= 0.0
        assert ab == pytest.approx(mmd2_rbf(B, A, 0.9), rel=1e-12)


def test_mmd_of_far_apart_sets_approaches_two():
    A = np.zeros((5, 2))
    B = np.full((4, 2), 100.0)
    assert mmd2_rbf(A, B, 1.0) == pytest.approx(2.0, abs=1e-12)


def test_mmd_does_not_depend_on_block_size(rng):
    A = rng.normal(size=(50, 4))
    B = rng.normal(size=(37, 4))
    full = mmd2_rbf(A, B, 1.7)
    assert mmd2_rbf(A, B, 1.7, block_size=3) == pytest.approx(full, rel=1e-10)


def test_mmd_argument_checks():
    with pytest.raises(ArgumentError):
        mmd2_rbf(np.zeros((0, 2)), np.zeros((3, 2)), 1.0)
    with pytest.raises(ArgumentError):
        mmd2_rbf(np.zeros((2, 2)), np.zeros((3, 3)), 1.0)
    with pytest.raises(ArgumentError):
        mmd2_rbf(np.zeros((2, 2)), np.zeros((3, 2)), 0.0)


def test_mmd_gradient_matches_finite_differences(rng):
    A = rng.normal(size=(4, 2))
    B = rng.normal(loc=0.5, size=(3, 2))
    value, grad_a, grad_b = mmd2_rbf_with_grad(A, B, 0.8)
    assert value == pytest.approx(mmd2_rbf(A, B, 0.8), rel=1e-12)
    eps = 1e-6
    for points, grad, first in ((A, grad_a, True), (B, grad_b, False)):
        for i in range(points.shape[0]):
            for j in range(points.shape[1]):
                up, down = points.copy(), points.copy()
                up[i, j] += eps
                down[i, j] -= eps
                if first:
                    numeric = (mmd2_rbf(up, B, 0.8) - mmd2_rbf(down, B, 0.8)) / (2 * eps)
                else:
                    numeric = (mmd2_rbf(A, up, 0.8) - mmd2_rbf(A, down, 0.8)) / (2 * eps)
                assert grad[i, j] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


# ---------------------------------------------------------------------------
# objective and model
# ---------------------------------------------------------------------------


def _hand_net(rng, activation="tanh", alpha=0.7):
    phi = init_layers([3, 4], activation, "uniform", rng)
    head0 = init_layers([4, 3, 1], activation, "uniform", rng)
    head1 = init_layers([4, 3, 1], activation, "uniform", rng)
    jitter = lambda layers: tuple((W, rng.normal(scale=0.1, size=b.shape)) for W, b in layers)  # noqa: E731
    return RepNetModel(
        phi=jitter(phi),
        head0=jitter(head0),
        head1=jitter(head1),
        activation=activation,
        sigma=1.1,
        alpha=alpha,
        n_features=3,
    )


def test_objective_gradient_matches_finite_differences(rng):
    net = _hand_net(rng)
    X = rng.normal(size=(12, 3))
    y = rng.normal(size=12)
    z = np.array([0, 1] * 6)
    vector = net.flat_params()
    _, grad = repnet_objective(net, X, y, z, l2_penalty=1e-3)
    eps = 1e-6
    for k in range(vector.size):
        up, down = vector.copy(), vector.copy()
        up[k] += eps
        down[k] -= eps
        numeric = (
            repnet_objective(net, X, y, z, l2_penalty=1e-3, vector=up)[0]
            - repnet_objective(net, X, y, z, l2_penalty=1e-3, vector=down)[0]
        ) / (2 * eps)
        assert grad[k] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_objective_adds_weighted_mmd(rng):
    net = _hand_net(rng)
    X = rng.normal(size=(10, 3))
    y = rng.normal(size=10)
    z = np.array([0, 1] * 5)
    plain, _ = repnet_objective(net, X, y, z, alpha=0.0)
    penalized, _ = repnet_objective(net, X, y, z, alpha=0.7)
    rep = net.represent(X)
    expected = 0.7 * mmd2_rbf(rep[z == 0], rep[z == 1], net.sigma)
    assert penalized - plain == pytest.approx(expected, rel=1e-9)


def _bias_head(value, width=4):
    return ((np.zeros((width, 1)), np.array([value])),)


def test_bias_only_heads_give_constant_effect(rng):
    phi = tuple(init_layers([3, 4], "relu", "uniform", rng))
    X = rng.normal(size=(9, 3))
    net = RepNetModel(phi=phi, head0=_bias_head(0.2), head1=_bias_head(0.5), activation="relu", sigma=1.0, alpha=0.0, n_features=3)
    mu0, mu1 = net.predict_pair(X)
    np.testing.assert_allclose(mu1 - mu0, 0.3)
    same = RepNetModel(phi=phi, head0=_bias_head(0.2), head1=_bias_head(0.2), activation="relu", sigma=1.0, alpha=0.0, n_features=3)
    mu0, mu1 = same.predict_pair(X)
    np.testing.assert_array_equal(mu1 - mu0, np.zeros(9))
    with pytest.raises(ArgumentError):
        net.predict_pair(np.zeros((2, 4)))


def test_flat_params_round_trip(rng):
    net = _hand_net(rng)
    again = net.with_flat_params(net.flat_params())
    X = rng.normal(size=(5, 3))
    for a, b in zip(net.predict_pair(X), again.predict_pair(X)):
        np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# batches and configuration
# ---------------------------------------------------------------------------


def test_stratified_batches_hold_both_groups(rng):
    g0 = np.arange(3)
    g1 = np.arange(3, 53)
    batches = stratified_batches(g0, g1, 10, rng)
    assert len(batches) == 3
    for rows in batches:
        assert np.any(rows < 3) and np.any(rows >= 3)
    every = np.sort(np.concatenate(batches))
    np.testing.assert_array_equal(every, np.arange(53))


def test_stratified_batches_count_follows_batch_size(rng):
    batches = stratified_batches(np.arange(50), np.arange(50, 100), 25, rng)
    assert len(batches) == 4


def test_repnet_candidate_validation():
    assert RepNetConfig.from_candidate("cfr", {}).alpha == 1.0
    assert RepNetConfig.from_candidate("tarnet", {}).alpha == 0.0
    assert RepNetConfig.from_candidate("cfr", {"alpha": 0.3}).family == "cfr"
    with pytest.raises(ConfigError):
        RepNetConfig.from_candidate("tarnet", {"alpha": 0.5})
    with pytest.raises(ConfigError):
        RepNetConfig.from_candidate("cfr", {"alpha": 0.0})
    with pytest.raises(ConfigError):
        RepNetConfig.from_candidate("cfr", {"epochs": 0})
    with pytest.raises(ConfigError):
        RepNetConfig.from_candidate("tarnet", {"dropout": 0.1})


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

SMALL = {"rep_layers": [8], "head_layers": [4], "epochs": 3, "batch_size": 32}


def _arrays(rng, m=60):
    X = rng.normal(size=(m, 3))
    z = (np.arange(m) % 2).astype(int)
    y = X[:, 0] + 0.4 * z + rng.normal(scale=0.1, size=m)
    return X, y, z


def test_zero_alpha_training_ignores_bandwidth(rng):
    X, y, z = _arrays(rng)
    a = fit_network(X, y, z, RepNetConfig.from_candidate("tarnet", SMALL), seed=4)
    b = fit_network(X, y, z, RepNetConfig.from_candidate("tarnet", {**SMALL, "mmd_sigma": 5.0}), seed=4)
    np.testing.assert_array_equal(a.flat_params(), b.flat_params())
    assert a.alpha == 0.0


def test_network_fit_is_deterministic(rng):
    X, y, z = _arrays(rng)
    config = RepNetConfig.from_candidate("cfr", SMALL)
    a = fit_network(X, y, z, config, seed=9)
    b = fit_network(X, y, z, config, seed=9)
    np.testing.assert_array_equal(a.flat_params(), b.flat_params())
    assert a.sigma == b.sigma > 0
    assert len(a.trace["objective"]) == 3
    c = fit_network(X, y, z, config, seed=10)
    assert not np.array_equal(a.flat_params(), c.flat_params())


def test_network_needs_both_groups(rng):
    X, y, _ = _arrays(rng)
    with pytest.raises(FitError):
        fit_network(X, y, np.zeros(X.shape[0], dtype=int), RepNetConfig(**SMALL), seed=0)


def test_fitted_network_scores_as_outcome_pair(small_cohort):
    data, _ = small_cohort
    net = repnet_fit(data, RepNetConfig.from_candidate("cfr", {**SMALL, "epochs": 2, "batch_size": 128}), seed=1)
    pair = as_outcome_pair(net, model_id="cfr#0")
    assert pair.strategy == "repnet" and pair.family == "cfr"
    cate = impute_cate(pair, data)
    assert len(cate) == data.m
    assert np.all(np.isfinite(cate.tau_hat))
    assert representation_mmd(net, data) >= 0.0
    record = pair.to_dict()
    assert record["net"]["family"] == "repnet"
    assert record["net"]["params"]["alpha"] == 1.0

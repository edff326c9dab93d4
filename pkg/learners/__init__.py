"""From-scratch base regressors sharing one fit/predict contract."""
from __future__ import annotations

from typing import Any, Optional

try:
    from .base import BASE_FAMILIES, EstimatorConfig, FittedModel, model_from_dict, model_to_dict, predict
    from .cart import TreeModel, tree_fit
    from .ensembles import ForestModel, GbmModel, forest_fit, gbm_fit, split_counts
    from .mlp import MlpModel, mlp_fit, mlp_objective
    from .ridge import RidgeModel, ridge_fit, ridge_objective
except ImportError:
    from learners.base import BASE_FAMILIES, EstimatorConfig, FittedModel, model_from_dict, model_to_dict, predict
    from learners.cart import TreeModel, tree_fit
    from learners.ensembles import ForestModel, GbmModel, forest_fit, gbm_fit, split_counts
    from learners.mlp import MlpModel, mlp_fit, mlp_objective
    from learners.ridge import RidgeModel, ridge_fit, ridge_objective


def fit_estimator(config: EstimatorConfig, X: Any, y: Any, *, seed: Optional[int] = None, groups: Any = None, threads: int = 1) -> FittedModel:
    """Fit the family named by ``config`` on (X, y)."""
    family = config.family
    if family == "ridge":
        return ridge_fit(X, y, config.ridge_lambda)
    if family == "tree":
        return tree_fit(X, y, params=config, groups=groups)
    if family == "forest":
        return forest_fit(X, y, params=config, groups=groups, seed=seed, threads=threads)
    if family == "gbm":
        return gbm_fit(X, y, params=config, groups=groups, seed=seed)
    return mlp_fit(X, y, params=config, seed=seed)


__all__ = [
    "BASE_FAMILIES",
    "EstimatorConfig",
    "FittedModel",
    "ForestModel",
    "GbmModel",
    "MlpModel",
    "RidgeModel",
    "TreeModel",
    "fit_estimator",
    "forest_fit",
    "gbm_fit",
    "mlp_fit",
    "mlp_objective",
    "model_from_dict",
    "model_to_dict",
    "predict",
    "ridge_fit",
    "ridge_objective",
    "split_counts",
    "tree_fit",
]

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

try:
    from ..errors import ArgumentError
    from ..tools import run_sync_tasks_strict
    from .base import EstimatorConfig, FittedModel, as_matrix, as_targets, register
    from .cart import TreeModel, resolve_params, tree_fit
except ImportError:
    from errors import ArgumentError
    from tools import run_sync_tasks_strict
    from learners.base import EstimatorConfig, FittedModel, as_matrix, as_targets, register
    from learners.cart import TreeModel, resolve_params, tree_fit

logger = logging.getLogger(__name__)


def _trees_to_params(trees: Tuple[TreeModel, ...]) -> list:
    return [{"params": t.params_dict(), "meta": dict(t.meta)} for t in trees]


def _trees_from_params(n_features: int, items: list) -> Tuple[TreeModel, ...]:
    return tuple(TreeModel.from_params(n_features, item["params"], dict(item.get("meta", {}))) for item in items)


@register
@dataclass(frozen=True)
class ForestModel(FittedModel):
    family = "forest"

    trees: Tuple[TreeModel, ...]
    n_features: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)

    def apply(self, X: Any) -> np.ndarray:
        """Leaf id per (row, tree)."""
        return np.column_stack([tree.apply(X) for tree in self.trees])

    def params_dict(self) -> Dict[str, Any]:
        return {"trees": _trees_to_params(self.trees)}

    @classmethod
    def from_params(cls, n_features: int, params: Dict[str, Any], meta: Dict[str, Any]) -> "ForestModel":
        return cls(trees=_trees_from_params(n_features, params["trees"]), n_features=n_features, meta=meta)


@register
@dataclass(frozen=True)
class GbmModel(FittedModel):
    family = "gbm"

    init: float
    learning_rate: float
    trees: Tuple[TreeModel, ...]
    n_features: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.init)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def params_dict(self) -> Dict[str, Any]:
        return {"init": self.init, "learning_rate": self.learning_rate, "trees": _trees_to_params(self.trees)}

    @classmethod
    def from_params(cls, n_features: int, params: Dict[str, Any], meta: Dict[str, Any]) -> "GbmModel":
        return cls(
            init=float(params["init"]),
            learning_rate=float(params["learning_rate"]),
            trees=_trees_from_params(n_features, params["trees"]),
            n_features=n_features,
            meta=meta,
        )


def _fit_forest_tree(
    X: np.ndarray,
    y: np.ndarray,
    groups: Optional[np.ndarray],
    cfg: EstimatorConfig,
    seed: int,
    index: int,
) -> TreeModel:
    rng = np.random.default_rng([seed, index])
    m, d = X.shape
    n_sample = max(1, int(round(cfg.row_subsample * m)))
    if cfg.bootstrap:
        rows = np.sort(rng.integers(0, m, size=n_sample))
    else:
        rows = np.sort(rng.choice(m, size=n_sample, replace=False))
    max_features = min(d, max(1, math.ceil(cfg.feature_subsample * d))) if d else None
    return tree_fit(
        X[rows],
        y[rows],
        params=cfg,
        groups=None if groups is None else groups[rows],
        max_features=max_features,
        rng=rng,
    )


def forest_fit(
    X: Any,
    y: Any,
    params: Optional[EstimatorConfig] = None,
    *,
    groups: Any = None,
    seed: Optional[int] = None,
    threads: int = 1,
    **overrides: Any,
) -> ForestModel:
    """Average of ``n_trees`` CART trees, tree ``t`` drawing rows and split features from
    the substream ``default_rng([seed, t])``."""
    cfg = resolve_params(params, "forest", overrides)
    Xm = as_matrix(X)
    target = as_targets(y, Xm.shape[0])
    group_arr = None if groups is None else np.asarray(groups)
    base_seed = int(seed if seed is not None else (cfg.seed or 0))
    tasks = [
        (lambda t=t: _fit_forest_tree(Xm, target, group_arr, cfg, base_seed, t))
        for t in range(cfg.n_trees)
    ]
    trees = tuple(run_sync_tasks_strict(tasks, threads))
    logger.debug("Forest fitted | trees=%d rows=%d", len(trees), Xm.shape[0])
    return ForestModel(
        trees=trees,
        n_features=Xm.shape[1],
        meta={"seed": base_seed, "n_trees": cfg.n_trees, "bootstrap": cfg.bootstrap},
    )


def gbm_fit(
    X: Any,
    y: Any,
    params: Optional[EstimatorConfig] = None,
    *,
    groups: Any = None,
    seed: Optional[int] = None,
    **overrides: Any,
) -> GbmModel:
    """Least-squares boosting: start at mean(y), add ``learning_rate`` times a
    depth-limited tree fit to the current residuals each round."""
    cfg = resolve_params(params, "gbm", overrides)
    Xm = as_matrix(X)
    target = as_targets(y, Xm.shape[0])
    init = float(np.mean(target))
    current = np.full(target.shape[0], init)
    trees = []
    trace = []
    for round_index in range(cfg.n_rounds):
        tree = tree_fit(Xm, target - current, params=cfg, groups=groups)
        current = current + cfg.learning_rate * tree.predict(Xm)
        mse = float(np.mean((target - current) ** 2))
        if not math.isfinite(mse):
            raise ArgumentError(f"boosting diverged at round {round_index}")
        trees.append(tree)
        trace.append(mse)
    return GbmModel(
        init=init,
        learning_rate=cfg.learning_rate,
        trees=tuple(trees),
        n_features=Xm.shape[1],
        meta={
            "seed": int(seed if seed is not None else (cfg.seed or 0)),
            "initial_mse": float(np.mean((target - init) ** 2)),
            "loss_trace": trace,
        },
    )


def split_counts(model: FittedModel, n_features: Optional[int] = None) -> np.ndarray:
    """Number of internal nodes splitting on each feature, summed over all trees."""
    width = model.n_features if n_features is None else n_features
    if isinstance(model, TreeModel):
        trees: Tuple[TreeModel, ...] = (model,)
    elif isinstance(model, (ForestModel, GbmModel)):
        trees = model.trees
    else:
        raise ArgumentError(f"split counts are defined for tree models, not {model.family}")
    counts = np.zeros(width, dtype=np.int64)
    for tree in trees:
        counts += np.bincount(tree.split_features, minlength=width)
    return counts

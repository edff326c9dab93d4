"""Greedy binary regression trees (CART, squared error) with row- and school-count leaf limits."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

try:
    from ..errors import ArgumentError
    from .base import EstimatorConfig, FittedModel, as_matrix, as_targets, as_weights, register
except ImportError:
    from errors import ArgumentError
    from learners.base import EstimatorConfig, FittedModel, as_matrix, as_targets, as_weights, register

LEAF = -1


@register
@dataclass(frozen=True)
class TreeModel(FittedModel):
    """Flat node arrays in preorder; node 0 is the root, ``feature == -1`` marks a leaf.

    A row goes to the left child when ``x[feature] <= threshold``.
    """

    family = "tree"

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_rows: np.ndarray
    n_schools: np.ndarray
    n_features: int
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == LEAF

    @property
    def leaf_ids(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    @property
    def split_features(self) -> np.ndarray:
        return self.feature[self.feature != LEAF]

    def node_depths(self) -> np.ndarray:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] != LEAF:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return depth

    @property
    def depth(self) -> int:
        return int(self.node_depths().max())

    def apply(self, X: Any) -> np.ndarray:
        arr = as_matrix(X)
        if arr.shape[1] != self.n_features:
            raise ArgumentError(f"tree expects {self.n_features} features, got {arr.shape[1]}")
        node = np.zeros(arr.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while np.any(active):
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = arr[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] != LEAF
        return node

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def params_dict(self) -> Dict[str, Any]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_rows": self.n_rows.tolist(),
            "n_schools": self.n_schools.tolist(),
        }

    @classmethod
    def from_params(cls, n_features: int, params: Dict[str, Any], meta: Dict[str, Any]) -> "TreeModel":
        ints = {k: np.asarray(params[k], dtype=np.int64) for k in ("feature", "left", "right", "n_rows", "n_schools")}
        return cls(
            threshold=np.asarray(params["threshold"], dtype=float),
            value=np.asarray(params["value"], dtype=float),
            n_features=n_features,
            meta=meta,
            **ints,
        )


def resolve_params(params: Optional[EstimatorConfig], family: str, overrides: Dict[str, Any]) -> EstimatorConfig:
    if params is None:
        return EstimatorConfig(family=family, **overrides)
    if overrides:
        return EstimatorConfig.model_validate({**params.model_dump(exclude_unset=True), **overrides})
    return params


def _group_codes(groups: Any, n_rows: int) -> Optional[np.ndarray]:
    if groups is None:
        return None
    arr = np.asarray(groups)
    if arr.shape[0] != n_rows:
        raise ArgumentError("school ids must align with rows")
    _, codes = np.unique(arr.astype(str), return_inverse=True)
    return codes.astype(np.int64)


def _distinct_prefix_suffix(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct group counts in g[:i+1] and g[i+1:] for every i."""
    n = g.shape[0]
    pos = np.arange(n)
    size = int(g.max()) + 1
    first = np.full(size, n, dtype=np.int64)
    last = np.full(size, -1, dtype=np.int64)
    np.minimum.at(first, g, pos)
    np.maximum.at(last, g, pos)
    prefix = np.cumsum(pos == first[g])
    suffix = int(np.sum(last >= 0)) - np.cumsum(pos == last[g])
    return prefix, suffix


@dataclass
class _Split:
    gain: float
    feature: int
    threshold: float
    left_rows: np.ndarray
    right_rows: np.ndarray


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    codes: Optional[np.ndarray],
    rows: np.ndarray,
    features: np.ndarray,
    min_rows: int,
    min_schools: int,
) -> Optional[_Split]:
    wn = w[rows]
    total_w = float(wn.sum())
    yc = y[rows] - float(np.dot(wn, y[rows]) / total_w)
    best: Optional[_Split] = None
    for f in features:
        xs = X[rows, f]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        candidates = np.flatnonzero(xs_sorted[:-1] < xs_sorted[1:])
        if candidates.size == 0:
            continue
        n_left = candidates + 1
        ok = (n_left >= min_rows) & (rows.shape[0] - n_left >= min_rows)
        if codes is not None and min_schools > 1:
            prefix, suffix = _distinct_prefix_suffix(codes[rows][order])
            ok &= (prefix[candidates] >= min_schools) & (suffix[candidates] >= min_schools)
        cw = np.cumsum(wn[order])[candidates]
        cs = np.cumsum(wn[order] * yc[order])[candidates]
        right_w = total_w - cw
        ok &= (cw > 0) & (right_w > 0)
        if not np.any(ok):
            continue
        gain = np.full(candidates.shape[0], -np.inf)
        gain[ok] = cs[ok] ** 2 * (1.0 / cw[ok] + 1.0 / right_w[ok])
        k = int(np.argmax(gain))
        if not gain[k] > 0:
            continue
        if best is None or gain[k] > best.gain:
            i = int(candidates[k])
            lo, hi = float(xs_sorted[i]), float(xs_sorted[i + 1])
            threshold = 0.5 * (lo + hi)
            if threshold >= hi:
                threshold = lo
            best = _Split(float(gain[k]), int(f), threshold, rows[order[: i + 1]], rows[order[i + 1:]])
    if best is not None:
        best.left_rows = np.sort(best.left_rows)
        best.right_rows = np.sort(best.right_rows)
    return best


def tree_fit(
    X: Any,
    y: Any,
    weights: Any = None,
    params: Optional[EstimatorConfig] = None,
    *,
    groups: Any = None,
    max_features: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    **overrides: Any,
) -> TreeModel:
    """Grow a CART regression tree.

    Each node picks the (feature, midpoint threshold) with the largest weighted variance
    reduction; ties keep the lower feature index, then the lower threshold. A split is
    rejected when a child would hold fewer than ``min_leaf_rows`` rows or, with
    ``groups`` given, fewer than ``min_leaf_schools`` distinct schools.
    """
    cfg = resolve_params(params, "tree", overrides)
    Xm = as_matrix(X)
    target = as_targets(y, Xm.shape[0])
    w = as_weights(weights, Xm.shape[0])
    codes = _group_codes(groups, Xm.shape[0])
    if cfg.min_leaf_schools > 1 and codes is None:
        raise ArgumentError("min_leaf_schools > 1 requires per-row school ids")
    d = Xm.shape[1]
    if max_features is not None and not 1 <= max_features <= d:
        raise ArgumentError(f"max_features must lie in [1, {d}]")
    if max_features is not None and max_features < d and rng is None:
        raise ArgumentError("feature subsampling needs an rng")

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []
    n_rows: List[int] = []
    n_schools: List[int] = []

    stack: List[Tuple[np.ndarray, int, int, bool]] = [(np.arange(Xm.shape[0]), 0, -1, True)]
    while stack:
        rows, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            if is_left:
                left[parent] = node
            else:
                right[parent] = node
        y_node = target[rows]
        constant = bool(y_node.max() == y_node.min())
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y_node[0]) if constant else float(np.average(y_node, weights=w[rows])))
        n_rows.append(int(rows.shape[0]))
        n_schools.append(int(np.unique(codes[rows]).shape[0]) if codes is not None else 0)

        if constant or d == 0:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        if rows.shape[0] < 2 * cfg.min_leaf_rows:
            continue
        if codes is not None and n_schools[node] < 2 * cfg.min_leaf_schools:
            continue
        if max_features is not None and max_features < d:
            features = np.sort(rng.choice(d, size=max_features, replace=False))
        else:
            features = np.arange(d)
        split = _best_split(Xm, target, w, codes, rows, features, cfg.min_leaf_rows, cfg.min_leaf_schools)
        if split is None:
            continue
        feature[node] = split.feature
        threshold[node] = split.threshold
        stack.append((split.right_rows, depth + 1, node, False))
        stack.append((split.left_rows, depth + 1, node, True))

    return TreeModel(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
        n_rows=np.asarray(n_rows, dtype=np.int64),
        n_schools=np.asarray(n_schools, dtype=np.int64),
        n_features=d,
        meta={
            "max_depth": cfg.max_depth,
            "min_leaf_rows": cfg.min_leaf_rows,
            "min_leaf_schools": cfg.min_leaf_schools,
            "n_leaves": int(sum(1 for f in feature if f == LEAF)),
        },
    )

"""Post-hoc descriptions of imputed effects: importance, stratified summaries, small trees, rules."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

try:
    from ..cohort.dataset import Dataset, FeatureMatrix, covariate_design
    from ..config import MIN_LEAF_SCHOOLS_DEFAULT, MIN_LEAF_STUDENTS_DEFAULT
    from ..errors import ArgumentError, FitError
    from ..learners import EstimatorConfig, TreeModel, forest_fit, split_counts, tree_fit
    from .inference import CateTable
except ImportError:
    from cohort.dataset import Dataset, FeatureMatrix, covariate_design
    from config import MIN_LEAF_SCHOOLS_DEFAULT, MIN_LEAF_STUDENTS_DEFAULT
    from errors import ArgumentError, FitError
    from learners import EstimatorConfig, TreeModel, forest_fit, split_counts, tree_fit
    from analysis.inference import CateTable

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Split-frequency importance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImportanceReport:
    feature_names: Tuple[str, ...]
    split_counts: np.ndarray
    split_frequency: np.ndarray
    rank: np.ndarray
    by_source: Dict[str, float] = field(default_factory=dict)

    @property
    def no_heterogeneity(self) -> bool:
        return int(self.split_counts.sum()) == 0

    def ranked(self) -> List[Tuple[str, float]]:
        order = np.argsort(self.rank, kind="stable")
        return [(self.feature_names[i], float(self.split_frequency[i])) for i in order]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "no_heterogeneity": self.no_heterogeneity,
            "features": [
                {
                    "feature": name,
                    "split_frequency": float(freq),
                    "split_count": int(count),
                    "rank": int(rank),
                }
                for name, freq, count, rank in zip(self.feature_names, self.split_frequency, self.split_counts, self.rank)
            ],
            "by_source": dict(self.by_source),
        }


def _ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks by descending value; ties keep feature order."""
    order = sorted(range(values.shape[0]), key=lambda i: (-values[i], i))
    ranks = np.empty(values.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, values.shape[0] + 1)
    return ranks


def feature_importance(
    cate: CateTable,
    features: FeatureMatrix,
    forest_params: Optional[EstimatorConfig] = None,
    *,
    seed: int = 0,
    threads: int = 1,
) -> ImportanceReport:
    """Fit a forest to the imputed effects and report each feature's share of split nodes."""
    if features.values.shape[0] != len(cate):
        raise ArgumentError("features and CATE table must have the same rows")
    params = forest_params or EstimatorConfig(family="forest", n_trees=100, min_leaf_rows=20)
    forest = forest_fit(features.values, cate.tau_hat, params=params, seed=seed, threads=threads)
    counts = split_counts(forest, features.width)
    total = int(counts.sum())
    freq = counts / total if total else np.zeros(features.width)
    by_source: Dict[str, float] = {}
    for source, value in zip(features.sources(), freq):
        by_source[source] = by_source.get(source, 0.0) + float(value)
    if total == 0:
        logger.info("No heterogeneity detected: the importance forest made no splits")
    return ImportanceReport(
        feature_names=tuple(features.feature_names),
        split_counts=counts,
        split_frequency=freq,
        rank=_ranks(freq),
        by_source=by_source,
    )


# ---------------------------------------------------------------------------
# Stratification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Stratum:
    label: str
    mean: float
    min: float
    max: float
    n_students: int
    n_schools: int
    lower: Optional[float] = None
    upper: Optional[float] = None
    category: Optional[str] = None


@dataclass(frozen=True)
class StratificationSummary:
    covariate: str
    kind: str
    binning: str
    strata: Tuple[Stratum, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "covariate": self.covariate,
                    "stratum": s.label,
                    "lower": s.lower,
                    "upper": s.upper,
                    "mean_tau": s.mean,
                    "min_tau": s.min,
                    "max_tau": s.max,
                    "n_students": s.n_students,
                    "n_schools": s.n_schools,
                }
                for s in self.strata
            ]
        )


def _stratum(label: str, rows: np.ndarray, tau: np.ndarray, schools: np.ndarray, **extra: Any) -> Stratum:
    values = tau[rows]
    return Stratum(
        label=label,
        mean=float(np.mean(values)),
        min=float(np.min(values)),
        max=float(np.max(values)),
        n_students=int(rows.shape[0]),
        n_schools=int(np.unique(schools[rows].astype(str)).shape[0]),
        **extra,
    )


def bin_edges(values: np.ndarray, n_bins: int, binning: str = "quantile") -> np.ndarray:
    """Interior cut points; a value equal to a cut point falls in the upper bin."""
    if binning == "quantile":
        cuts = np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    elif binning == "uniform":
        cuts = np.linspace(float(np.min(values)), float(np.max(values)), n_bins + 1)[1:-1]
    else:
        raise ArgumentError(f"unknown binning {binning!r}")
    cuts = np.unique(cuts)
    return cuts[(cuts > np.min(values)) & (cuts <= np.max(values))]


def stratify_cate(cate: CateTable, dataset: Dataset, covariate: str, n_bins: int = 4, binning: str = "quantile") -> StratificationSummary:
    """Mean, min and max of tau_hat per stratum; numeric covariates are binned, categoricals
    get one stratum per category. Empty bins are dropped."""
    if len(cate) != dataset.m:
        raise ArgumentError("CATE table does not align with the dataset")
    if covariate not in dataset.schema.covariate_names:
        raise ArgumentError(f"unknown covariate {covariate!r}")
    if n_bins < 1:
        raise ArgumentError("n_bins must be >= 1")
    col = dataset.schema.column(covariate)
    values = dataset.values[covariate]
    tau = cate.tau_hat
    strata: List[Stratum] = []
    if col.kind == "categorical":
        for category in sorted(set(str(v) for v in values)):
            rows = np.flatnonzero(values == category)
            strata.append(_stratum(f"{covariate}={category}", rows, tau, dataset.school_ids, category=category))
        return StratificationSummary(covariate, "categorical", "category", tuple(strata))

    cuts = bin_edges(values, n_bins, binning)
    assign = np.searchsorted(cuts, values, side="right")
    bounds = np.concatenate([[float(np.min(values))], cuts, [float(np.max(values))]])
    for b in range(cuts.shape[0] + 1):
        rows = np.flatnonzero(assign == b)
        if rows.size == 0:
            continue
        lo, hi = float(bounds[b]), float(bounds[b + 1])
        closing = "]" if b == cuts.shape[0] else ")"
        strata.append(_stratum(f"[{lo:.4g}, {hi:.4g}{closing}", rows, tau, dataset.school_ids, lower=lo, upper=hi))
    return StratificationSummary(covariate, "numeric", binning, tuple(strata))


# ---------------------------------------------------------------------------
# Leaf-constrained interpretation trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    feature: str
    op: str
    threshold: float

    def holds(self, column: np.ndarray) -> np.ndarray:
        return column <= self.threshold if self.op == "<=" else column > self.threshold

    def text(self) -> str:
        if "=" in self.feature:
            source, category = self.feature.split("=", 1)
            return f"{source} != {category}" if self.op == "<=" else f"{source} == {category}"
        return f"{self.feature} {self.op} {self.threshold:.6g}"


@dataclass(frozen=True)
class Rule:
    leaf: int
    conditions: Tuple[Condition, ...]
    mean: float
    n_students: int
    n_schools: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "leaf": self.leaf,
            "conditions": [{"feature": c.feature, "op": c.op, "threshold": c.threshold} for c in self.conditions],
            "mean_tau": self.mean,
            "n_students": self.n_students,
            "n_schools": self.n_schools,
            "text": rule_text(self),
        }


@dataclass(frozen=True)
class InterpretTree:
    tree: TreeModel
    covariates: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    min_schools: int
    min_students: int
    max_depth: int
    root_only: bool = False
    reason: Optional[str] = None

    def design(self, dataset: Dataset) -> np.ndarray:
        return design_for(dataset, self.feature_names)

    def predict(self, dataset: Dataset) -> np.ndarray:
        return self.tree.predict(self.design(dataset))

    def leaves(self) -> List[Dict[str, Any]]:
        return [
            {
                "leaf": int(node),
                "mean_tau": float(self.tree.value[node]),
                "n_students": int(self.tree.n_rows[node]),
                "n_schools": int(self.tree.n_schools[node]),
            }
            for node in self.tree.leaf_ids
        ]

    def to_dict(self) -> Dict[str, Any]:
        t = self.tree
        return {
            "covariates": list(self.covariates),
            "feature_names": list(self.feature_names),
            "constraints": {"min_schools": self.min_schools, "min_students": self.min_students},
            "max_depth": self.max_depth,
            "root_only": self.root_only,
            "reason": self.reason,
            "nodes": [
                {
                    "id": node,
                    "feature": None if t.feature[node] < 0 else self.feature_names[int(t.feature[node])],
                    "threshold": None if t.feature[node] < 0 else float(t.threshold[node]),
                    "left": None if t.feature[node] < 0 else int(t.left[node]),
                    "right": None if t.feature[node] < 0 else int(t.right[node]),
                    "mean_tau": float(t.value[node]),
                    "n_students": int(t.n_rows[node]),
                    "n_schools": int(t.n_schools[node]),
                }
                for node in range(t.n_nodes)
            ],
            "rules": [rule.to_dict() for rule in export_rules(self)],
        }


def design_for(dataset: Dataset, feature_names: Sequence[str]) -> np.ndarray:
    """Raw design matrix with columns in ``feature_names`` order (``name=level`` for indicators)."""
    columns: List[np.ndarray] = []
    for name in feature_names:
        if name in dataset.values:
            columns.append(dataset.values[name].astype(float))
            continue
        source, _, category = name.partition("=")
        if source not in dataset.values:
            raise ArgumentError(f"dataset has no covariate for feature {name!r}")
        columns.append((dataset.values[source] == category).astype(float))
    return np.column_stack(columns)


def default_constraints(dataset: Dataset, covariates: Sequence[str]) -> Tuple[int, int]:
    """(min_schools, min_students): 10 schools for school-level subsets, 1000 students
    once a student-level covariate is included; 1 otherwise."""
    levels = {dataset.schema.column(name).level for name in covariates}
    min_schools = MIN_LEAF_SCHOOLS_DEFAULT if levels == {"school"} else 1
    min_students = MIN_LEAF_STUDENTS_DEFAULT if "student" in levels else 1
    return min_schools, min_students


def interpret_tree_fit(
    cate: CateTable,
    dataset: Dataset,
    covariate_subset: Sequence[str],
    constraints: Optional[Mapping[str, int]] = None,
    max_depth: int = 3,
    *,
    strict: bool = False,
) -> InterpretTree:
    """Regression tree of tau_hat on raw covariates, every leaf holding at least
    ``min_schools`` distinct schools and ``min_students`` rows.

    When the whole dataset already violates the constraints the result is a root-only tree
    flagged ``root_only``; with ``strict`` a ``FitError`` is raised instead.
    """
    if not covariate_subset:
        raise ArgumentError("covariate subset must be nonempty")
    if len(cate) != dataset.m:
        raise ArgumentError("CATE table does not align with the dataset")
    for name in covariate_subset:
        if name not in dataset.schema.covariate_names:
            raise ArgumentError(f"unknown covariate {name!r}")
    min_schools, min_students = default_constraints(dataset, covariate_subset)
    if constraints:
        min_schools = int(constraints.get("min_schools") or min_schools)
        min_students = int(constraints.get("min_students") or min_students)

    reason = None
    if dataset.n_schools < min_schools:
        reason = f"{dataset.n_schools} schools, fewer than min_schools={min_schools}"
    elif dataset.m < min_students:
        reason = f"{dataset.m} students, fewer than min_students={min_students}"
    if reason and strict:
        raise FitError(f"leaf constraints unsatisfiable at the root: {reason}")

    X, names = covariate_design(dataset, covariate_subset)
    params = EstimatorConfig(family="tree", max_depth=max_depth, min_leaf_rows=min_students, min_leaf_schools=min_schools)
    tree = tree_fit(X, cate.tau_hat, params=params, groups=dataset.school_ids)
    if reason:
        logger.warning("Interpretation tree on %s is root-only: %s", list(covariate_subset), reason)
    return InterpretTree(
        tree=tree,
        covariates=tuple(covariate_subset),
        feature_names=names,
        min_schools=min_schools,
        min_students=min_students,
        max_depth=max_depth,
        root_only=reason is not None or tree.n_nodes == 1,
        reason=reason,
    )


def export_rules(tree: InterpretTree) -> List[Rule]:
    """One rule per leaf, the conjunction of the conditions on its root path."""
    t = tree.tree
    rules: List[Rule] = []
    stack: List[Tuple[int, Tuple[Condition, ...]]] = [(0, ())]
    while stack:
        node, path = stack.pop()
        if t.feature[node] < 0:
            rules.append(Rule(int(node), path, float(t.value[node]), int(t.n_rows[node]), int(t.n_schools[node])))
            continue
        name = tree.feature_names[int(t.feature[node])]
        thr = float(t.threshold[node])
        stack.append((int(t.right[node]), path + (Condition(name, ">", thr),)))
        stack.append((int(t.left[node]), path + (Condition(name, "<=", thr),)))
    return rules


def evaluate_rules(rules: Sequence[Rule], X: np.ndarray, feature_names: Sequence[str]) -> np.ndarray:
    """Predict with exported rules; rows matching no rule get NaN."""
    position = {name: j for j, name in enumerate(feature_names)}
    out = np.full(X.shape[0], np.nan)
    for rule in rules:
        mask = np.ones(X.shape[0], dtype=bool)
        for cond in rule.conditions:
            mask &= cond.holds(X[:, position[cond.feature]])
        out[mask] = rule.mean
    return out


def rule_text(rule: Rule) -> str:
    clause = " AND ".join(c.text() for c in rule.conditions) or "TRUE"
    return f"IF {clause} THEN tau_hat = {rule.mean:.4f} (students={rule.n_students}, schools={rule.n_schools})"


def rules_to_text(rules: Sequence[Rule]) -> str:
    return "\n".join(rule_text(rule) for rule in rules) + "\n"


def pair_grid(tree: InterpretTree, dataset: Dataset, resolution: int = 50) -> pd.DataFrame:
    """Leaf id and leaf mean on a resolution x resolution grid over two numeric covariates."""
    if len(tree.feature_names) != 2 or any("=" in n for n in tree.feature_names):
        raise ArgumentError("pair grids need a tree over exactly two numeric covariates")
    x_name, y_name = tree.feature_names
    xs = np.linspace(*_value_range(dataset.values[x_name]), resolution)
    ys = np.linspace(*_value_range(dataset.values[y_name]), resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    leaf = tree.tree.apply(grid)
    return pd.DataFrame({"x": grid[:, 0], "y": grid[:, 1], "leaf_id": leaf, "leaf_mean": tree.tree.value[leaf]})


def _value_range(values: np.ndarray) -> Tuple[float, float]:
    return float(np.min(values)), float(np.max(values))

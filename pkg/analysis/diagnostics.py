"""Overlap and balance between treatment groups, computed from the data alone."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

try:
    from ..cohort.dataset import Dataset, covariate_design, encode
    from ..errors import ArgumentError
    from ..estimators.repnet import median_heuristic, mmd2_rbf
except ImportError:
    from cohort.dataset import Dataset, covariate_design, encode
    from errors import ArgumentError
    from estimators.repnet import median_heuristic, mmd2_rbf

logger = logging.getLogger(__name__)

SIGMA_SAMPLE_ROWS = 1000
PROJECTION_NOTE = "principal components of the encoded covariates (deterministic stand-in for t-SNE)"


def _groups(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    g0, g1 = dataset.groups()
    if g0.size == 0 or g1.size == 0:
        raise ArgumentError("diagnostics need both treatment groups")
    return g0, g1


def _column(dataset: Dataset, name: str) -> np.ndarray:
    if name in dataset.values:
        col = dataset.schema.column(name)
        if col.kind == "categorical":
            raise ArgumentError(f"{name!r} is categorical; pass one level as '{name}=<level>'")
        return dataset.values[name].astype(float)
    source, sep, level = name.partition("=")
    if sep and source in dataset.values:
        return (dataset.values[source] == level).astype(float)
    raise ArgumentError(f"unknown covariate {name!r}")


def smd(dataset: Dataset, covariate: str) -> float:
    """(mean_1 - mean_0) / sqrt((v0 + v1) / 2) with population variances; 0 when both are 0."""
    g0, g1 = _groups(dataset)
    values = _column(dataset, covariate)
    pooled = np.sqrt((np.var(values[g0]) + np.var(values[g1])) / 2.0)
    if not pooled > 0:
        return 0.0
    return float((np.mean(values[g1]) - np.mean(values[g0])) / pooled)


def smd_table(dataset: Dataset) -> Dict[str, float]:
    _, names = covariate_design(dataset, dataset.schema.covariate_names)
    return {name: smd(dataset, name) for name in names}


@dataclass(frozen=True)
class Marginal:
    feature: str
    edges: np.ndarray
    counts0: np.ndarray
    counts1: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "bin_low": self.edges[:-1],
                "bin_high": self.edges[1:],
                "count_control": self.counts0,
                "count_treated": self.counts1,
            }
        )


def covariate_marginals(dataset: Dataset, n_bins: int = 20) -> Dict[str, Marginal]:
    """Per-group histograms over shared uniform-width edges from the pooled values."""
    if n_bins < 1:
        raise ArgumentError("n_bins must be >= 1")
    g0, g1 = dataset.groups()
    X, names = covariate_design(dataset, dataset.schema.covariate_names)
    out: Dict[str, Marginal] = {}
    for j, name in enumerate(names):
        values = X[:, j]
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, n_bins + 1)
        c0, _ = np.histogram(values[g0], bins=edges)
        c1, _ = np.histogram(values[g1], bins=edges)
        out[name] = Marginal(name, edges, c0, c1)
    return out


@dataclass(frozen=True)
class MmdResult:
    value: float
    sigma: float


def _encoded(dataset: Dataset) -> np.ndarray:
    return encode(dataset, fit_on=None).values


def default_sigma(points: np.ndarray) -> float:
    """Median pairwise distance over a fixed subsample of rows."""
    rng = np.random.default_rng(0)
    if points.shape[0] > SIGMA_SAMPLE_ROWS:
        points = points[np.sort(rng.choice(points.shape[0], SIGMA_SAMPLE_ROWS, replace=False))]
    return median_heuristic(points)


def group_mmd(dataset: Dataset, sigma: Optional[float] = None) -> MmdResult:
    """Squared MMD between the encoded covariates of the two groups, full cohort."""
    g0, g1 = _groups(dataset)
    X = _encoded(dataset)
    bandwidth = float(sigma) if sigma is not None else default_sigma(X)
    return MmdResult(value=mmd2_rbf(X[g0], X[g1], bandwidth), sigma=bandwidth)


@dataclass(frozen=True)
class PermutationTest:
    observed: float
    null: np.ndarray
    sigma: float
    n_rows: int

    @property
    def p_value(self) -> float:
        return float((1 + np.sum(self.null >= self.observed)) / (1 + self.null.shape[0]))

    @property
    def null_q95(self) -> float:
        return float(np.quantile(self.null, 0.95))


def permutation_null(
    dataset: Dataset,
    sigma: Optional[float] = None,
    n_permutations: int = 200,
    seed: int = 0,
    *,
    max_rows: int = 2000,
) -> PermutationTest:
    """Group MMD against its distribution under shuffled treatment labels.

    Uses one kernel matrix on at most ``max_rows`` rows drawn once from ``seed``; the
    observed value is computed on the same rows.
    """
    _groups(dataset)
    rng = np.random.default_rng(seed)
    X = _encoded(dataset)
    z = np.asarray(dataset.z, dtype=int)
    if X.shape[0] > max_rows:
        rows = np.sort(rng.choice(X.shape[0], max_rows, replace=False))
        X, z = X[rows], z[rows]
    bandwidth = float(sigma) if sigma is not None else default_sigma(X)
    K = np.exp(-cdist(X, X, "sqeuclidean") / (2.0 * bandwidth ** 2))

    def _stat(labels: np.ndarray) -> float:
        s1 = labels.astype(float)
        s0 = 1.0 - s1
        n0, n1 = s0.sum(), s1.sum()
        if n0 == 0 or n1 == 0:
            return 0.0
        k_s0 = K @ s0
        k_s1 = K @ s1
        value = s0 @ k_s0 / n0 ** 2 + s1 @ k_s1 / n1 ** 2 - 2.0 * (s0 @ k_s1) / (n0 * n1)
        return max(float(value), 0.0)

    observed = _stat(z)
    null = np.array([_stat(rng.permutation(z)) for _ in range(n_permutations)])
    return PermutationTest(observed=observed, null=null, sigma=bandwidth, n_rows=int(X.shape[0]))


def pca_project(dataset: Dataset) -> np.ndarray:
    """Scores on the top-2 principal axes of the encoded covariates.

    Each axis is signed so its first nonzero loading is positive.
    """
    X = _encoded(dataset)
    if X.shape[1] < 2:
        raise ArgumentError("projection needs at least 2 encoded feature columns")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / X.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals, kind="stable")[::-1][:2]
    axes = eigvecs[:, order]
    for k in range(2):
        nonzero = np.flatnonzero(np.abs(axes[:, k]) > 1e-12)
        if nonzero.size and axes[nonzero[0], k] < 0:
            axes[:, k] = -axes[:, k]
    return centered @ axes


@dataclass(frozen=True)
class BalanceReport:
    smd: Dict[str, float]
    marginals: Dict[str, Marginal]
    mmd: MmdResult
    projection: np.ndarray
    z: np.ndarray
    group_sizes: Tuple[int, int]

    def projection_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.projection[:, 0], "y": self.projection[:, 1], "z": self.z.astype(int)})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "group_sizes": {"control": self.group_sizes[0], "treated": self.group_sizes[1]},
            "smd": dict(self.smd),
            "max_abs_smd": max((abs(v) for v in self.smd.values()), default=0.0),
            "mmd2": self.mmd.value,
            "mmd_sigma": self.mmd.sigma,
            "projection": PROJECTION_NOTE,
            "marginals": {
                name: {"edges": m.edges.tolist(), "control": m.counts0.tolist(), "treated": m.counts1.tolist()}
                for name, m in self.marginals.items()
            },
        }


def balance_report(dataset: Dataset, n_bins: int = 20, sigma: Optional[float] = None) -> BalanceReport:
    g0, g1 = _groups(dataset)
    report = BalanceReport(
        smd=smd_table(dataset),
        marginals=covariate_marginals(dataset, n_bins),
        mmd=group_mmd(dataset, sigma),
        projection=pca_project(dataset),
        z=np.asarray(dataset.z),
        group_sizes=(int(g0.size), int(g1.size)),
    )
    logger.info("Balance | max|smd|=%.4f mmd2=%.4g sigma=%.4g", report.to_dict()["max_abs_smd"], report.mmd.value, report.mmd.sigma)
    return report


def marginal_frames(report: BalanceReport) -> List[Tuple[str, pd.DataFrame]]:
    return [(name, m.to_frame()) for name, m in report.marginals.items()]

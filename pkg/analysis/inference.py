"""Effect estimates and school-level cluster bootstrap intervals."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import pandas as pd

try:
    from ..cohort.dataset import Dataset, GroundTruth
    from ..config import MAX_FAILED_REPLICATE_SHARE
    from ..errors import AggregationError, ArgumentError, UndefinedMetricError
    from ..tools import derive_seed, run_sync_tasks
except ImportError:
    from cohort.dataset import Dataset, GroundTruth
    from config import MAX_FAILED_REPLICATE_SHARE
    from errors import AggregationError, ArgumentError, UndefinedMetricError
    from tools import derive_seed, run_sync_tasks

logger = logging.getLogger(__name__)

StatisticValue = Union[float, Mapping[str, float]]
Statistic = Callable[[Dataset, int], StatisticValue]


@dataclass(frozen=True)
class CateTable:
    """Imputed effects for every row of a scored dataset. Replicate 0 is the point estimate."""

    row_ids: np.ndarray
    school_ids: np.ndarray
    tau_hat: np.ndarray
    model_id: str
    seed: int
    replicate: int = 0
    strategy: str = "t_learner"

    def __post_init__(self) -> None:
        if not (self.row_ids.shape[0] == self.school_ids.shape[0] == self.tau_hat.shape[0]):
            raise ArgumentError("CATE table columns must have equal length")
        if not np.all(np.isfinite(self.tau_hat)):
            raise ArgumentError(f"non-finite imputed effects from {self.model_id}")
        self.tau_hat.setflags(write=False)

    def __len__(self) -> int:
        return int(self.tau_hat.shape[0])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "row_id": self.row_ids,
                "school_id": self.school_ids,
                "tau_hat": self.tau_hat,
                "model_id": self.model_id,
            }
        )

    def to_csv(self, path: Path | str) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(out, index=False, lineterminator="\n")
        return out


@dataclass(frozen=True)
class BootstrapResult:
    point_estimate: float
    replicates: np.ndarray
    ci_low: float
    ci_high: float
    level: float
    method: str = "basic"
    n_failed: int = 0
    seed: int = 0

    @property
    def B(self) -> int:
        return int(self.replicates.shape[0]) + self.n_failed

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point_estimate": self.point_estimate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "method": self.method,
            "B": self.B,
            "n_failed": self.n_failed,
            "seed": self.seed,
        }


def naive_ate(dataset: Dataset) -> float:
    g0, g1 = dataset.groups()
    if g0.size == 0 or g1.size == 0:
        raise ArgumentError("naive estimator needs both treatment groups")
    return float(np.mean(dataset.y[g1]) - np.mean(dataset.y[g0]))


def ate(cate: CateTable) -> float:
    if len(cate) == 0:
        raise ArgumentError("empty CATE table")
    return float(np.mean(cate.tau_hat))


def r2_heldout(model: Any, valid: Dataset) -> float:
    """Factual R^2: each row is scored by the outcome model of its own treatment group."""
    mu0, mu1 = model.predict_outcomes(valid)
    pred = np.where(valid.z == 1, mu1, mu0)
    sst = float(np.sum((valid.y - np.mean(valid.y)) ** 2))
    if not sst > 0:
        raise UndefinedMetricError("held-out R^2 is undefined when the outcome has zero variance")
    sse = float(np.sum((valid.y - pred) ** 2))
    return 1.0 - sse / sst


def pehe(cate: CateTable, truth: GroundTruth) -> float:
    if truth.tau.shape[0] != len(cate):
        raise ArgumentError("ground truth does not align with the CATE table")
    return float(math.sqrt(np.mean((cate.tau_hat - truth.tau) ** 2)))


def histogram(values: np.ndarray, bins: int) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return counts, edges


def cate_summary(cate: CateTable, bins: int = 50) -> Dict[str, Any]:
    tau = cate.tau_hat
    counts, edges = histogram(tau, bins)
    q_lo, q_hi = np.quantile(tau, [0.025, 0.975])
    return {
        "model_id": cate.model_id,
        "mean": float(np.mean(tau)),
        "sd": float(np.std(tau)),
        "min": float(np.min(tau)),
        "max": float(np.max(tau)),
        "share_positive": float(np.mean(tau > 0)),
        "central_95": [float(q_lo), float(q_hi)],
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
    }


def histogram_frame(cate: CateTable, bins: int = 50) -> pd.DataFrame:
    counts, edges = histogram(cate.tau_hat, bins)
    return pd.DataFrame({"bin_low": edges[:-1], "bin_high": edges[1:], "count": counts})


def resample_schools(dataset: Dataset, rng: np.random.Generator, index: Optional[Mapping[str, np.ndarray]] = None) -> Dataset:
    """Draw n schools with replacement, copying all rows of each draw.

    Draw ``j`` of school ``s`` is relabelled ``s#b{j}`` so repeated schools stay distinct clusters.
    """
    index = dataset.school_index if index is None else index
    picks = rng.integers(0, dataset.n_schools, size=dataset.n_schools)
    row_blocks: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for j, code in enumerate(picks):
        sid = dataset.schools[int(code)]
        rows = index[sid]
        row_blocks.append(rows)
        labels.append(np.full(rows.shape[0], f"{sid}#b{j}", dtype=object))
    return dataset.take(np.concatenate(row_blocks), relabel=np.concatenate(labels))


def basic_interval(point: float, replicates: np.ndarray, level: float) -> Tuple[float, float]:
    """Empirical bootstrap interval [2*theta - q_hi, 2*theta - q_lo]."""
    alpha = 1.0 - level
    q_lo, q_hi = np.quantile(np.sort(replicates), [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(2.0 * point - q_hi), float(2.0 * point - q_lo)


def _as_mapping(value: StatisticValue) -> Dict[str, float]:
    if isinstance(value, Mapping):
        return {str(k): float(v) for k, v in value.items()}
    return {"value": float(value)}


def cluster_bootstrap_multi(
    dataset: Dataset,
    statistic: Statistic,
    B: int,
    level: float = 0.95,
    seed: int = 0,
    *,
    point_estimate: Optional[StatisticValue] = None,
    threads: int = 1,
) -> Dict[str, BootstrapResult]:
    """Bootstrap several statistics computed from the same replicate.

    Replicate ``k`` resamples schools with ``default_rng([seed, k])`` and hands the
    statistic the seed ``derive_seed(seed, k)``, so any replicate can be rerun alone.
    """
    if B < 1:
        raise ArgumentError("B must be >= 1")
    if not 0.0 < level < 1.0:
        raise ArgumentError("level must lie in (0, 1)")
    index = dataset.school_index
    point = _as_mapping(point_estimate if point_estimate is not None else statistic(dataset, int(seed)))

    def _replicate(k: int) -> Dict[str, float]:
        sample = resample_schools(dataset, np.random.default_rng([seed, k]), index)
        return _as_mapping(statistic(sample, derive_seed(seed, k)))

    results, errors = run_sync_tasks([(lambda k=k: _replicate(k)) for k in range(B)], threads)
    collected: Dict[str, List[float]] = {key: [] for key in point}
    failed = 0
    for k, (value, err) in enumerate(zip(results, errors)):
        if err is not None:
            logger.warning("Bootstrap replicate %d failed: %s", k, err)
            failed += 1
            continue
        if set(value) != set(point) or not all(math.isfinite(v) for v in value.values()):
            logger.warning("Bootstrap replicate %d returned unusable values", k)
            failed += 1
            continue
        for key, v in value.items():
            collected[key].append(v)
    if failed > MAX_FAILED_REPLICATE_SHARE * B or failed == B:
        raise AggregationError(f"{failed} of {B} bootstrap replicates failed")
    if failed:
        logger.info("Bootstrap finished with %d failed replicates out of %d", failed, B)

    out: Dict[str, BootstrapResult] = {}
    for key, values in collected.items():
        reps = np.asarray(values, dtype=float)
        lo, hi = basic_interval(point[key], reps, level)
        out[key] = BootstrapResult(
            point_estimate=point[key],
            replicates=reps,
            ci_low=lo,
            ci_high=hi,
            level=level,
            n_failed=failed,
            seed=int(seed),
        )
    return out


def cluster_bootstrap(
    dataset: Dataset,
    statistic: Callable[[Dataset, int], float],
    B: int,
    level: float = 0.95,
    seed: int = 0,
    *,
    point_estimate: Optional[float] = None,
    threads: int = 1,
) -> BootstrapResult:
    results = cluster_bootstrap_multi(
        dataset,
        statistic,
        B,
        level,
        seed,
        point_estimate=point_estimate,
        threads=threads,
    )
    if set(results) != {"value"}:
        raise ArgumentError("cluster_bootstrap expects a scalar statistic; use cluster_bootstrap_multi")
    return results["value"]


def interval_text(estimate: float, low: float, high: float, digits: int = 2) -> str:
    return f"{estimate:.{digits}f} [{low:.{digits}f}, {high:.{digits}f}]"

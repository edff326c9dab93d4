"""School-level train/validation split chosen by random search over balanced partitions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

try:
    from ..errors import ArgumentError
    from ..tools import run_sync_tasks
    from .dataset import Dataset, encode
except ImportError:
    from errors import ArgumentError
    from tools import run_sync_tasks
    from cohort.dataset import Dataset, encode

logger = logging.getLogger(__name__)

CHUNK_SIZE = 1000
WEIGHTINGS = ("student", "school")


@dataclass(frozen=True)
class MomentVector:
    """First and second raw moments of each encoded column, then the treatment share."""

    values: np.ndarray
    has_treatment: bool = True

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ArgumentError("moment vector entries must be finite")


@dataclass(frozen=True)
class SplitAssignment:
    train_schools: Tuple[str, ...]
    valid_schools: Tuple[str, ...]
    score: float
    candidate_count: int
    seed: int
    train_frac: float = 0.8
    w_z: float = 10.0
    moment_weighting: str = "student"
    best_candidate: int = 0

    def train_rows(self, dataset: Dataset) -> np.ndarray:
        return _rows_for(dataset, self.train_schools)

    def valid_rows(self, dataset: Dataset) -> np.ndarray:
        return _rows_for(dataset, self.valid_schools)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "train_schools": list(self.train_schools),
            "valid_schools": list(self.valid_schools),
            "score": self.score,
            "candidate_count": self.candidate_count,
            "best_candidate": self.best_candidate,
            "seed": self.seed,
            "parameters": {
                "train_frac": self.train_frac,
                "n_train_schools": len(self.train_schools),
                "w_z": self.w_z,
                "moment_weighting": self.moment_weighting,
                "fraction_applies_to": "schools",
            },
        }


def _rows_for(dataset: Dataset, schools: Sequence[str]) -> np.ndarray:
    wanted = np.isin(np.asarray(dataset.schools, dtype=object), np.asarray(list(schools), dtype=object))
    return np.flatnonzero(wanted[dataset.school_codes])


def split_score(a: MomentVector, b: MomentVector, w_z: float = 10.0) -> float:
    if a.values.shape != b.values.shape:
        raise ArgumentError(f"moment vectors differ in length: {a.values.shape[0]} vs {b.values.shape[0]}")
    diff = np.asarray(a.values, dtype=float) - np.asarray(b.values, dtype=float)
    if a.has_treatment and b.has_treatment and diff.size:
        diff[-1] *= w_z
    return float(np.linalg.norm(diff))


def n_train_schools(n_schools: int, train_frac: float) -> int:
    return min(max(int(math.floor(train_frac * n_schools + 0.5)), 1), n_schools - 1)


def _school_sums(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Per-school sums of [x, x^2, z] and student counts."""
    features = encode(dataset, fit_on=None).values
    stacked = np.hstack([features, features ** 2, dataset.z.astype(float)[:, None]])
    sums = np.zeros((dataset.n_schools, stacked.shape[1]))
    np.add.at(sums, dataset.school_codes, stacked)
    counts = np.bincount(dataset.school_codes, minlength=dataset.n_schools).astype(float)
    return sums, counts


def _side_moments(membership: np.ndarray, sums: np.ndarray, counts: np.ndarray, weighting: str) -> np.ndarray:
    if weighting == "student":
        return (membership @ sums) / (membership @ counts)[:, None]
    means = sums / counts[:, None]
    return (membership @ means) / membership.sum(axis=1)[:, None]


def moment_vector(dataset: Dataset, schools: Sequence[str], weighting: str = "student") -> MomentVector:
    if weighting not in WEIGHTINGS:
        raise ArgumentError(f"moment_weighting must be one of {WEIGHTINGS}")
    sums, counts = _school_sums(dataset)
    member = np.isin(np.asarray(dataset.schools, dtype=object), np.asarray(list(schools), dtype=object))
    if not member.any():
        raise ArgumentError("moment vector needs at least one school")
    return MomentVector(_side_moments(member[None, :].astype(float), sums, counts, weighting)[0])


def score_partition(dataset: Dataset, train_schools: Sequence[str], *, w_z: float = 10.0, moment_weighting: str = "student") -> float:
    valid = [s for s in dataset.schools if s not in set(train_schools)]
    return split_score(
        moment_vector(dataset, train_schools, moment_weighting),
        moment_vector(dataset, valid, moment_weighting),
        w_z,
    )


def _score_chunk(membership: np.ndarray, sums: np.ndarray, counts: np.ndarray, w_z: float, weighting: str) -> np.ndarray:
    train = _side_moments(membership, sums, counts, weighting)
    valid = _side_moments(1.0 - membership, sums, counts, weighting)
    diff = train - valid
    diff[:, -1] *= w_z
    return np.sqrt(np.sum(diff ** 2, axis=1))


def balanced_split(
    dataset: Dataset,
    train_frac: float = 0.8,
    n_candidates: int = 10_000,
    w_z: float = 10.0,
    seed: int = 0,
    *,
    moment_weighting: str = "student",
    threads: int = 1,
) -> SplitAssignment:
    """Sample ``n_candidates`` school partitions and keep the most balanced one.

    Candidates are drawn sequentially from one stream, so a larger ``n_candidates``
    extends the same candidate list. Ties go to the earliest candidate.
    """
    if not 0.0 < train_frac < 1.0:
        raise ArgumentError("train_frac must lie in (0, 1)")
    if n_candidates < 1:
        raise ArgumentError("n_candidates must be >= 1")
    if dataset.n_schools < 2:
        raise ArgumentError(f"balanced_split needs at least 2 schools, got {dataset.n_schools}")
    if moment_weighting not in WEIGHTINGS:
        raise ArgumentError(f"moment_weighting must be one of {WEIGHTINGS}")

    n = dataset.n_schools
    n_train = n_train_schools(n, train_frac)
    sums, counts = _school_sums(dataset)

    rng = np.random.default_rng(seed)
    membership = np.zeros((n_candidates, n), dtype=float)
    for k in range(n_candidates):
        membership[k, rng.permutation(n)[:n_train]] = 1.0

    starts = list(range(0, n_candidates, CHUNK_SIZE))
    tasks = [
        (lambda lo=lo: _score_chunk(membership[lo:lo + CHUNK_SIZE], sums, counts, w_z, moment_weighting))
        for lo in starts
    ]
    results, errors = run_sync_tasks(tasks, threads)
    for err in errors:
        if err is not None:
            raise err
    scores = np.concatenate(results)
    best = int(np.argmin(scores))

    chosen = membership[best].astype(bool)
    train = tuple(s for s, keep in zip(dataset.schools, chosen) if keep)
    valid = tuple(s for s, keep in zip(dataset.schools, chosen) if not keep)
    logger.info(
        "Split selected | candidate=%d/%d score=%.6g train_schools=%d valid_schools=%d",
        best, n_candidates, scores[best], len(train), len(valid),
    )
    return SplitAssignment(
        train_schools=train,
        valid_schools=valid,
        score=float(scores[best]),
        candidate_count=n_candidates,
        seed=int(seed),
        train_frac=float(train_frac),
        w_z=float(w_z),
        moment_weighting=moment_weighting,
        best_candidate=best,
    )


def split_rows(dataset: Dataset, split: SplitAssignment) -> Tuple[np.ndarray, np.ndarray]:
    return split.train_rows(dataset), split.valid_rows(dataset)


def moment_labels(dataset: Dataset) -> List[str]:
    names = list(encode(dataset, fit_on=None).feature_names)
    return [f"mean:{n}" for n in names] + [f"m2:{n}" for n in names] + ["treatment_share"]

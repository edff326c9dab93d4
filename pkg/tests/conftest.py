"""Shared fixtures: tiny hand-built cohorts and small synthetic NSLM-shaped cohorts."""
from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pytest

ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from cohort.dataset import Column, Dataset, Schema, SyntheticConfig, generate_synthetic  # noqa: E402


def toy_schema(covariates: Sequence[Column] = (Column("x", level="student"),)) -> Schema:
    return Schema(
        columns=(
            Column("school", level="school", kind="categorical", role="school_id"),
            Column("z", role="treatment"),
            Column("y", role="outcome"),
            *covariates,
        )
    )


def toy_dataset(
    z: Sequence[int],
    y: Sequence[float],
    schools: Sequence[str],
    covariates: Optional[Dict[str, Sequence[Any]]] = None,
    schema: Optional[Schema] = None,
) -> Dataset:
    covariates = {"x": np.zeros(len(y))} if covariates is None else covariates
    if schema is None:
        schema = toy_schema(tuple(Column(name, level="student") for name in covariates))
    columns: Dict[str, Any] = {"school": list(schools), "z": list(z), "y": list(y)}
    columns.update(covariates)
    return Dataset.from_columns(schema, columns)


def school_labels(n_schools: int, per_school: int) -> list:
    return [f"s{j:02d}" for j in range(n_schools) for _ in range(per_school)]


@pytest.fixture
def make_toy():
    return toy_dataset


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def small_cohort():
    """20 schools x 50 students, constant effect 0.26, randomized treatment."""
    return generate_synthetic(SyntheticConfig(n_schools=20, students_per_school=50, seed=1))


@pytest.fixture
def nslm_cohort():
    """76 schools x 40 students with a step effect in X1."""
    config = SyntheticConfig(
        n_schools=76,
        students_per_school=40,
        effect={"kind": "threshold", "base": 0.1, "delta": 0.3, "conditions": [{"covariate": "X1", "op": "<", "value": 0.0}]},
        seed=7,
    )
    return generate_synthetic(config)

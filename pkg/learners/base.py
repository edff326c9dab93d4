"""Shared contract for the base regressors: configuration, fitted-model interface, JSON form."""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Callable, ClassVar, Dict, List, Literal, Optional, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

try:
    from ..errors import ArgumentError, ConfigError
except ImportError:
    from errors import ArgumentError, ConfigError

MODEL_FORMAT = "hetfx-model"
MODEL_VERSION = 1

BASE_FAMILIES = ("ridge", "tree", "forest", "gbm", "mlp")
GBM_DEPTH_DEFAULT = 3


class EstimatorConfig(BaseModel):
    """Hyper-parameters for one base-learner candidate. Unused fields are ignored by a family."""

    model_config = ConfigDict(extra="forbid")

    family: Literal["ridge", "tree", "forest", "gbm", "mlp"]
    # ridge
    ridge_lambda: float = Field(1.0, ge=0.0)
    # tree (also the base tree of forest / gbm)
    max_depth: Optional[int] = Field(None, ge=0)
    min_leaf_rows: int = Field(1, ge=1)
    min_leaf_schools: int = Field(1, ge=1)
    # forest
    n_trees: int = Field(100, ge=1)
    feature_subsample: float = Field(1.0 / 3.0, gt=0.0, le=1.0)
    row_subsample: float = Field(1.0, gt=0.0, le=1.0)
    bootstrap: bool = True
    # gbm
    n_rounds: int = Field(100, ge=1)
    learning_rate: float = Field(0.1, gt=0.0, le=1.0)
    # mlp
    layer_widths: List[int] = Field(default_factory=lambda: [64, 64])
    activation: Literal["relu", "tanh", "sigmoid", "identity"] = "relu"
    l2_penalty: float = Field(1e-4, ge=0.0)
    init: Literal["uniform", "zeros"] = "uniform"
    optimizer: Literal["sgd", "adam"] = "sgd"
    step_size: float = Field(1e-2, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(128, ge=1)
    shuffle: bool = True
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _family_defaults(self) -> "EstimatorConfig":
        if any(w < 1 for w in self.layer_widths):
            raise ValueError("layer widths must be >= 1")
        if self.family == "gbm" and "max_depth" not in self.model_fields_set:
            self.max_depth = GBM_DEPTH_DEFAULT
        return self

    @classmethod
    def from_candidate(cls, family: str, candidate: Dict[str, Any]) -> "EstimatorConfig":
        try:
            return cls.model_validate({"family": family, **candidate})
        except ValidationError as exc:
            raise ConfigError(f"invalid {family} candidate {candidate}: {exc}") from exc

    def label(self) -> str:
        """Short stable id listing the explicitly set parameters."""
        fields = sorted(k for k in self.model_fields_set if k not in ("family", "seed"))
        inner = ",".join(f"{k}={getattr(self, k)}" for k in fields)
        return f"{self.family}({inner})"


def as_matrix(X: Any) -> np.ndarray:
    values = getattr(X, "values", X)
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ArgumentError(f"feature matrix must be 2-D, got shape {arr.shape}")
    return arr


def as_targets(y: Any, n_rows: int) -> np.ndarray:
    arr = np.asarray(y, dtype=float).reshape(-1)
    if arr.shape[0] != n_rows:
        raise ArgumentError(f"targets have {arr.shape[0]} rows, features have {n_rows}")
    if n_rows < 1:
        raise ArgumentError("cannot fit on empty input")
    return arr


def as_weights(weights: Any, n_rows: int) -> np.ndarray:
    if weights is None:
        return np.ones(n_rows)
    arr = np.asarray(weights, dtype=float).reshape(-1)
    if arr.shape[0] != n_rows:
        raise ArgumentError("weights must align with rows")
    if np.any(arr < 0) or not np.any(arr > 0):
        raise ArgumentError("weights must be nonnegative with a positive total")
    return arr


class FittedModel(ABC):
    family: ClassVar[str] = ""

    n_features: int
    meta: Dict[str, Any]

    def predict(self, X: Any) -> np.ndarray:
        arr = as_matrix(X)
        if arr.shape[1] != self.n_features:
            raise ArgumentError(f"{self.family} model expects {self.n_features} features, got {arr.shape[1]}")
        return self._predict(arr)

    @abstractmethod
    def _predict(self, X: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def params_dict(self) -> Dict[str, Any]:
        ...

    @classmethod
    @abstractmethod
    def from_params(cls, n_features: int, params: Dict[str, Any], meta: Dict[str, Any]) -> "FittedModel":
        ...


_REGISTRY: Dict[str, Type[FittedModel]] = {}


def register(cls: Type[FittedModel]) -> Type[FittedModel]:
    _REGISTRY[cls.family] = cls
    return cls


def predict(model: FittedModel, X: Any) -> np.ndarray:
    return model.predict(X)


def model_to_dict(model: FittedModel) -> Dict[str, Any]:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "family": model.family,
        "n_features": model.n_features,
        "params": model.params_dict(),
        "meta": dict(model.meta),
    }


def model_from_dict(payload: Dict[str, Any]) -> FittedModel:
    if payload.get("format") != MODEL_FORMAT:
        raise ArgumentError(f"not a serialized model: format={payload.get('format')!r}")
    if payload.get("version") != MODEL_VERSION:
        raise ArgumentError(f"unsupported model version {payload.get('version')!r}")
    cls = _REGISTRY.get(str(payload.get("family")))
    if cls is None:
        raise ArgumentError(f"unknown model family {payload.get('family')!r}")
    return cls.from_params(int(payload["n_features"]), payload["params"], dict(payload.get("meta", {})))


FitFunction = Callable[..., FittedModel]

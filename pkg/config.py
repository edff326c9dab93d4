from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    from .errors import ConfigError
except ImportError:
    from errors import ConfigError

logger = logging.getLogger("hetfx.config")


def _sanitize_positive(value: str | None, fallback: int) -> int:
    if value is None:
        return fallback
    try:
        parsed = int(value)
        return parsed if parsed > 0 else fallback
    except Exception:
        return fallback


# Writable output directory; overridable via env var HETFX_OUTPUT_DIR.
OUTPUT_DIR = os.getenv("HETFX_OUTPUT_DIR", "generated")
THREADS_DEFAULT = _sanitize_positive(os.getenv("HETFX_THREADS"), 1)

# Step 1: sample splitting
TRAIN_FRAC_DEFAULT = 0.8
TREATMENT_WEIGHT_DEFAULT = 10.0
N_CANDIDATES_DEFAULT = _sanitize_positive(os.getenv("HETFX_N_CANDIDATES"), 10_000)

# Step 2: uncertainty
BOOTSTRAP_B_DEFAULT = _sanitize_positive(os.getenv("HETFX_BOOTSTRAP_B"), 500)
CONFIDENCE_LEVEL_DEFAULT = 0.95
MAX_FAILED_REPLICATE_SHARE = 0.2

# Step 3: interpretation
MIN_LEAF_SCHOOLS_DEFAULT = 10
MIN_LEAF_STUDENTS_DEFAULT = 1000
INTERPRET_DEPTH_DEFAULT = 3
STRATIFY_BINS_DEFAULT = 4
PAIR_GRID_RESOLUTION = 50
CATE_HISTOGRAM_BINS = 50

# Diagnostics
MARGINAL_BINS_DEFAULT = 20

# Family order doubles as the tie-break when two families share the best validation R².
FAMILY_ORDER = ("ridge", "tree", "forest", "gbm", "mlp", "tarnet", "cfr")
REPNET_FAMILIES = ("tarnet", "cfr")


def threads_for(value: int | None) -> int:
    """Resolve the worker thread count: explicit value, then HETFX_THREADS, then 1."""
    if value is not None:
        try:
            parsed = int(value)
        except (TypeError, ValueError):
            parsed = 0
        if parsed > 0:
            return parsed
        logger.warning("Ignoring thread count %r; falling back to HETFX_THREADS or %d.", value, THREADS_DEFAULT)
    return _sanitize_positive(os.getenv("HETFX_THREADS"), THREADS_DEFAULT)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticSettings(_Section):
    n_schools: int = Field(76, ge=2)
    students_per_school: int = Field(140, ge=1)
    effect: Dict[str, Any] = Field(default_factory=lambda: {"kind": "constant", "value": 0.26})
    baseline: Dict[str, Any] = Field(default_factory=lambda: {"kind": "linear"})
    assignment: Dict[str, Any] = Field(default_factory=lambda: {"kind": "randomized", "p": 0.5})
    noise_sd: float = Field(0.5, ge=0.0)
    seed: Optional[int] = None


class DataSettings(_Section):
    path: Optional[str] = None
    schema_path: Optional[str] = None
    columns: Optional[List[Dict[str, str]]] = None
    synthetic: Optional[SyntheticSettings] = None

    @model_validator(mode="after")
    def _one_source(self) -> "DataSettings":
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("exactly one of data.path or data.synthetic must be given")
        if self.path is not None and self.schema_path is None and not self.columns:
            raise ValueError("data.path requires data.schema_path or inline data.columns")
        return self


class SplitSettings(_Section):
    train_frac: float = Field(TRAIN_FRAC_DEFAULT, gt=0.0, lt=1.0)
    n_candidates: int = Field(N_CANDIDATES_DEFAULT, ge=1)
    w_z: float = Field(TREATMENT_WEIGHT_DEFAULT, ge=0.0)
    moment_weighting: Literal["student", "school"] = "student"
    seed: Optional[int] = None


class EstimatorSettings(_Section):
    family: Literal["ridge", "tree", "forest", "gbm", "mlp", "tarnet", "cfr"]
    candidates: List[Dict[str, Any]] = Field(default_factory=lambda: [{}])

    @field_validator("candidates")
    @classmethod
    def _nonempty(cls, value: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
        if not value:
            raise ValueError("each estimator needs at least one candidate")
        return value


class BootstrapSettings(_Section):
    enabled: bool = True
    B: int = Field(BOOTSTRAP_B_DEFAULT, ge=1)
    level: float = Field(CONFIDENCE_LEVEL_DEFAULT, gt=0.0, lt=1.0)
    scope: Literal["train_only", "train_and_valid"] = "train_only"
    seed: Optional[int] = None


class InterpretSettings(_Section):
    enabled: bool = True
    force_family: Optional[Literal["ridge", "tree", "forest", "gbm", "mlp", "tarnet", "cfr"]] = None
    pairs: List[Tuple[str, str]] = Field(default_factory=list)
    min_schools: Optional[int] = Field(None, ge=1)
    min_students: Optional[int] = Field(None, ge=1)
    max_depth: int = Field(INTERPRET_DEPTH_DEFAULT, ge=0)
    full_tree: bool = True
    stratify: Optional[List[str]] = None
    n_bins: int = Field(STRATIFY_BINS_DEFAULT, ge=1)
    binning: Literal["quantile", "uniform"] = "quantile"
    importance: Dict[str, Any] = Field(default_factory=dict)
    grid_resolution: int = Field(PAIR_GRID_RESOLUTION, ge=2)


class DiagnosticsSettings(_Section):
    enabled: bool = True
    n_bins: int = Field(MARGINAL_BINS_DEFAULT, ge=1)
    mmd_sigma: Optional[float] = Field(None, gt=0.0)


class PipelineConfig(_Section):
    data: DataSettings
    split: SplitSettings = Field(default_factory=SplitSettings)
    estimators: List[EstimatorSettings]
    bootstrap: BootstrapSettings = Field(default_factory=BootstrapSettings)
    interpret: InterpretSettings = Field(default_factory=InterpretSettings)
    diagnostics: DiagnosticsSettings = Field(default_factory=DiagnosticsSettings)
    seed: int = 0
    threads: Optional[int] = Field(None, ge=1)
    output_dir: Optional[str] = None
    histogram_bins: int = Field(CATE_HISTOGRAM_BINS, ge=1)
    note: Optional[str] = None

    @field_validator("estimators")
    @classmethod
    def _has_estimators(cls, value: List[EstimatorSettings]) -> List[EstimatorSettings]:
        if not value:
            raise ValueError("estimator grid is empty; at least one candidate is required")
        families = [item.family for item in value]
        if len(set(families)) != len(families):
            raise ValueError(f"estimator families must be unique, got {families}")
        return value

    def stage_seed(self, stage: Optional[int]) -> int:
        return int(self.seed if stage is None else stage)


def parse_pipeline_config(payload: Dict[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(payload)
    except ValidationError as exc:
        raise ConfigError(f"invalid pipeline config: {exc}") from exc


def load_pipeline_config(path: Path | str) -> PipelineConfig:
    cfg_path = Path(path)
    try:
        payload = json.loads(cfg_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {cfg_path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {cfg_path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("config root must be a JSON object")
    config = parse_pipeline_config(payload)
    # Relative data paths resolve against the config file's directory.
    base = cfg_path.resolve().parent
    data = config.data
    updates: Dict[str, Any] = {}
    if data.path and not Path(data.path).is_absolute():
        updates["path"] = str(base / data.path)
    if data.schema_path and not Path(data.schema_path).is_absolute():
        updates["schema_path"] = str(base / data.schema_path)
    if updates:
        config = config.model_copy(update={"data": data.model_copy(update=updates)})
    return config

"""Multi-level cohort data: schema, loading, feature encoding and a synthetic generator.

Students (level 1) are nested in schools (level 2); every row carries a school id, a
binary treatment ``Z`` and a real outcome ``Y``. Covariates are declared in a
:class:`Schema` with their level (student/school) and kind (numeric/categorical).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

try:
    from ..errors import ArgumentError, DataValidationError, SchemaError
except ImportError:
    from errors import ArgumentError, DataValidationError, SchemaError

logger = logging.getLogger(__name__)

LEVELS = ("student", "school")
KINDS = ("numeric", "categorical")
ROLES = ("covariate", "treatment", "outcome", "school_id")


@dataclass(frozen=True)
class Column:
    name: str
    level: str = "student"
    kind: str = "numeric"
    role: str = "covariate"


@dataclass(frozen=True)
class Schema:
    columns: Tuple[Column, ...]

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {dupes}")
        for col in self.columns:
            if col.level not in LEVELS:
                raise SchemaError(f"column {col.name!r}: unknown level {col.level!r}")
            if col.kind not in KINDS:
                raise SchemaError(f"column {col.name!r}: unknown kind {col.kind!r}")
            if col.role not in ROLES:
                raise SchemaError(f"column {col.name!r}: unknown role {col.role!r}")
        for role in ("treatment", "outcome", "school_id"):
            count = sum(1 for c in self.columns if c.role == role)
            if count != 1:
                raise SchemaError(f"schema needs exactly one {role} column, found {count}")

    def _by_role(self, role: str) -> str:
        return next(c.name for c in self.columns if c.role == role)

    @property
    def treatment(self) -> str:
        return self._by_role("treatment")

    @property
    def outcome(self) -> str:
        return self._by_role("outcome")

    @property
    def school_id(self) -> str:
        return self._by_role("school_id")

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def covariates(self) -> Tuple[Column, ...]:
        return tuple(c for c in self.columns if c.role == "covariate")

    @property
    def covariate_names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.covariates)

    def column(self, name: str) -> Column:
        for col in self.columns:
            if col.name == name:
                return col
        raise ArgumentError(f"unknown column {name!r}")

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any] | Sequence[Mapping[str, Any]]) -> "Schema":
        items = payload.get("columns", []) if isinstance(payload, Mapping) else payload
        try:
            cols = tuple(
                Column(
                    name=str(item["name"]),
                    level=str(item.get("level", "student")),
                    kind=str(item.get("kind", "numeric")),
                    role=str(item.get("role", "covariate")),
                )
                for item in items
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema entry: {exc}") from exc
        return cls(columns=cols)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "columns": [
                {"name": c.name, "level": c.level, "kind": c.kind, "role": c.role}
                for c in self.columns
            ]
        }


def load_schema(path: Path | str) -> Schema:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise SchemaError(f"schema file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema file is not valid JSON: {exc}") from exc
    return Schema.from_dict(payload)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Immutable cohort. Arrays are read-only; derive new datasets with ``take``."""

    schema: Schema
    values: Mapping[str, np.ndarray]
    z: np.ndarray
    y: np.ndarray
    school_ids: np.ndarray
    schools: Tuple[str, ...] = field(repr=False)
    school_codes: np.ndarray = field(repr=False)

    @classmethod
    def from_columns(cls, schema: Schema, columns: Mapping[str, Sequence[Any]]) -> "Dataset":
        missing = [name for name in schema.names if name not in columns]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        m = len(columns[schema.outcome])
        if m < 1:
            raise DataValidationError("dataset has no rows")
        for name in schema.names:
            if len(columns[name]) != m:
                raise DataValidationError(f"length {len(columns[name])} != {m}", column=name)

        z = np.asarray(columns[schema.treatment], dtype=float)
        bad = np.flatnonzero(~np.isin(z, (0.0, 1.0)))
        if bad.size:
            raise DataValidationError(f"treatment must be 0 or 1, got {z[bad[0]]!r}", row=int(bad[0]) + 1, column=schema.treatment)
        y = np.asarray(columns[schema.outcome], dtype=float)
        bad = np.flatnonzero(~np.isfinite(y))
        if bad.size:
            raise DataValidationError("outcome must be finite", row=int(bad[0]) + 1, column=schema.outcome)
        sids = np.asarray([str(v) for v in columns[schema.school_id]], dtype=object)
        empty = np.flatnonzero(sids == "")
        if empty.size:
            raise DataValidationError("missing school id", row=int(empty[0]) + 1, column=schema.school_id)

        values: Dict[str, np.ndarray] = {}
        for col in schema.covariates:
            raw = columns[col.name]
            if col.kind == "numeric":
                arr = np.asarray(raw, dtype=float)
                bad = np.flatnonzero(~np.isfinite(arr))
                if bad.size:
                    raise DataValidationError("numeric covariate must be finite", row=int(bad[0]) + 1, column=col.name)
            else:
                arr = np.asarray([str(v) for v in raw], dtype=object)
            values[col.name] = arr
        return cls._build(schema, values, z.astype(np.int8), y, sids)

    @classmethod
    def _build(cls, schema: Schema, values: Dict[str, np.ndarray], z: np.ndarray, y: np.ndarray, school_ids: np.ndarray) -> "Dataset":
        schools, codes = np.unique(school_ids.astype(str), return_inverse=True)
        return cls(
            schema=schema,
            values={k: _frozen(np.array(v, copy=True)) for k, v in values.items()},
            z=_frozen(np.array(z, dtype=np.int8, copy=True)),
            y=_frozen(np.array(y, dtype=float, copy=True)),
            school_ids=_frozen(np.array(school_ids, dtype=object, copy=True)),
            schools=tuple(str(s) for s in schools),
            school_codes=_frozen(codes.astype(np.int64)),
        )

    @property
    def m(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_schools(self) -> int:
        return len(self.schools)

    @property
    def school_index(self) -> Dict[str, np.ndarray]:
        order = np.argsort(self.school_codes, kind="stable")
        bounds = np.searchsorted(self.school_codes[order], np.arange(self.n_schools + 1))
        return {sid: order[bounds[j]:bounds[j + 1]] for j, sid in enumerate(self.schools)}

    def groups(self) -> Tuple[np.ndarray, np.ndarray]:
        """Row indices of the control group G_0 and the treated group G_1."""
        return np.flatnonzero(self.z == 0), np.flatnonzero(self.z == 1)

    def covariate(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise ArgumentError(f"unknown covariate {name!r}")
        return self.values[name]

    def take(self, rows: Sequence[int] | np.ndarray, *, relabel: Optional[Sequence[str]] = None) -> "Dataset":
        idx = np.asarray(rows, dtype=np.int64)
        if idx.size == 0:
            raise ArgumentError("cannot take an empty row set")
        sids = self.school_ids[idx] if relabel is None else np.asarray(relabel, dtype=object)
        if sids.shape[0] != idx.shape[0]:
            raise ArgumentError("relabel length must match rows")
        values = {k: v[idx] for k, v in self.values.items()}
        return Dataset._build(self.schema, values, self.z[idx], self.y[idx], sids)

    def subset_schools(self, school_ids: Sequence[str]) -> "Dataset":
        wanted = set(str(s) for s in school_ids)
        mask = np.fromiter((s in wanted for s in self.school_ids), dtype=bool, count=self.m)
        return self.take(np.flatnonzero(mask))

    def to_frame(self) -> pd.DataFrame:
        data: Dict[str, Any] = {}
        for col in self.schema.columns:
            if col.role == "treatment":
                data[col.name] = self.z.astype(np.int64)
            elif col.role == "outcome":
                data[col.name] = self.y
            elif col.role == "school_id":
                data[col.name] = self.school_ids
            else:
                data[col.name] = self.values[col.name]
        return pd.DataFrame(data, columns=list(self.schema.names))


def _parse_float(raw: str, *, row: int, column: str) -> float:
    text = raw.strip()
    if not text:
        raise DataValidationError("missing value", row=row, column=column)
    try:
        return float(text)
    except ValueError:
        raise DataValidationError(f"unparseable number {raw!r}", row=row, column=column) from None


def load_csv(path: Path | str, schema: Schema) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row into a :class:`Dataset`.

    Row numbers in errors are 1-based data rows (the header is not counted).
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [name for name in schema.names if name not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: header is missing schema columns {missing}")
    extra = [name for name in frame.columns if name not in schema.names]
    if extra:
        logger.warning("Ignoring columns not in schema: %s", extra)

    columns: Dict[str, List[Any]] = {}
    for col in schema.columns:
        raw_values = frame[col.name].tolist()
        if col.role == "treatment":
            parsed: List[Any] = []
            for i, raw in enumerate(raw_values, start=1):
                value = _parse_float(raw, row=i, column=col.name)
                if value not in (0.0, 1.0):
                    raise DataValidationError(f"treatment must be 0 or 1, got {raw.strip()!r}", row=i, column=col.name)
                parsed.append(int(value))
            columns[col.name] = parsed
        elif col.role == "outcome" or (col.role == "covariate" and col.kind == "numeric"):
            parsed = [_parse_float(raw, row=i, column=col.name) for i, raw in enumerate(raw_values, start=1)]
            for i, value in enumerate(parsed, start=1):
                if not math.isfinite(value):
                    raise DataValidationError("value must be finite", row=i, column=col.name)
            columns[col.name] = parsed
        else:
            for i, raw in enumerate(raw_values, start=1):
                if col.role == "school_id" and not raw.strip():
                    raise DataValidationError("missing school id", row=i, column=col.name)
            columns[col.name] = [raw.strip() for raw in raw_values]
    dataset = Dataset.from_columns(schema, columns)
    logger.info("Loaded %s | rows=%d schools=%d", path, dataset.m, dataset.n_schools)
    return dataset


def write_csv(dataset: Dataset, path: Path | str) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataset.to_frame().to_csv(out, index=False, lineterminator="\n")
    return out


# ---------------------------------------------------------------------------
# Feature encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    feature_names: Tuple[str, ...]
    standardization: Tuple[Dict[str, Any], ...]

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    def columns_for(self, source: str) -> List[int]:
        return [j for j, spec in enumerate(self.standardization) if spec["source"] == source]

    def sources(self) -> Tuple[str, ...]:
        return tuple(spec["source"] for spec in self.standardization)


@dataclass(frozen=True)
class FeatureEncoder:
    """Per-column statistics learned on a fitting set, applied to any compatible dataset."""

    kinds: Tuple[Tuple[str, str], ...]
    specs: Tuple[Dict[str, Any], ...]

    @property
    def feature_names(self) -> Tuple[str, ...]:
        return tuple(spec["name"] for spec in self.specs)

    @property
    def width(self) -> int:
        return len(self.specs)

    def check_compatible(self, dataset: Dataset) -> None:
        have = tuple((c.name, c.kind) for c in dataset.schema.covariates)
        if have != self.kinds:
            raise ArgumentError(f"dataset covariates {have} do not match encoder {self.kinds}")

    def transform(self, dataset: Dataset) -> FeatureMatrix:
        self.check_compatible(dataset)
        out = np.empty((dataset.m, self.width), dtype=float)
        for j, spec in enumerate(self.specs):
            raw = dataset.values[spec["source"]]
            if spec["kind"] == "numeric":
                out[:, j] = (raw - spec["mean"]) / spec["std"]
            else:
                out[:, j] = (raw == spec["category"]).astype(float)
        return FeatureMatrix(values=out, feature_names=self.feature_names, standardization=self.specs)

    def to_dict(self) -> Dict[str, Any]:
        return {"kinds": [list(k) for k in self.kinds], "specs": [dict(s) for s in self.specs]}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "FeatureEncoder":
        return cls(
            kinds=tuple((str(a), str(b)) for a, b in payload["kinds"]),
            specs=tuple(dict(s) for s in payload["specs"]),
        )


def _fit_rows(dataset: Dataset, fit_on: Sequence[int] | np.ndarray | None) -> np.ndarray:
    if fit_on is None:
        return np.arange(dataset.m)
    rows = np.asarray(fit_on)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    if rows.size == 0:
        raise ArgumentError("fit_on must select at least one row")
    return rows.astype(np.int64)


def fit_encoder(dataset: Dataset, fit_on: Sequence[int] | np.ndarray | None = None) -> FeatureEncoder:
    rows = _fit_rows(dataset, fit_on)
    specs: List[Dict[str, Any]] = []
    for col in dataset.schema.covariates:
        raw = dataset.values[col.name][rows]
        if col.kind == "numeric":
            mean = float(np.mean(raw))
            std = float(np.std(raw))
            if not std >= 1e-12:
                std = 1.0
            specs.append({"name": col.name, "source": col.name, "kind": "numeric", "mean": mean, "std": std})
        else:
            for category in sorted(set(str(v) for v in raw)):
                specs.append({"name": f"{col.name}={category}", "source": col.name, "kind": "onehot", "category": category})
    kinds = tuple((c.name, c.kind) for c in dataset.schema.covariates)
    return FeatureEncoder(kinds=kinds, specs=tuple(specs))


def encode(dataset: Dataset, fit_on: Sequence[int] | np.ndarray | None) -> FeatureMatrix:
    """Standardize numerics (population stddev) and one-hot categoricals.

    Statistics come from ``fit_on`` rows only and are applied to all rows; a category
    unseen on the fitting rows encodes as all zeros.
    """
    if fit_on is not None and np.asarray(fit_on).size == 0:
        raise ArgumentError("fit_on must select at least one row")
    return fit_encoder(dataset, fit_on).transform(dataset)


def covariate_design(dataset: Dataset, names: Sequence[str]) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """Raw (unstandardized) design matrix; categoricals as 0/1 indicators ``name=level``."""
    if not names:
        raise ArgumentError("covariate subset must be nonempty")
    blocks: List[np.ndarray] = []
    labels: List[str] = []
    for name in names:
        col = dataset.schema.column(name)
        if col.role != "covariate":
            raise ArgumentError(f"{name!r} is not a covariate")
        raw = dataset.values[name]
        if col.kind == "numeric":
            blocks.append(raw.astype(float)[:, None])
            labels.append(name)
        else:
            for category in sorted(set(str(v) for v in raw)):
                blocks.append((raw == category).astype(float)[:, None])
                labels.append(f"{name}={category}")
    return np.hstack(blocks), tuple(labels)


# ---------------------------------------------------------------------------
# Synthetic NSLM-shaped generator
# ---------------------------------------------------------------------------

# Student covariates are discrete so conditional moments under confounding have closed forms.
STUDENT_SUPPORT: Dict[str, Tuple[np.ndarray, np.ndarray]] = {
    "S3": (np.arange(1.0, 8.0), np.full(7, 1.0 / 7.0)),
    "C1": (np.array([0.0, 1.0]), np.array([0.5, 0.5])),
    "C2": (np.array([1.0, 2.0, 3.0]), np.full(3, 1.0 / 3.0)),
    "C3": (np.array([0.0, 1.0]), np.array([0.7, 0.3])),
}
SCHOOL_NUMERIC = ("X1", "X2", "X3", "X4", "X5")
URBANICITY_COLUMN = "XC"
URBANICITY_LEVELS = ("A", "B", "C", "D")
PROPENSITY_BOUNDS = (0.02, 0.98)

DEFAULT_BASELINE: Dict[str, Any] = {
    "kind": "linear",
    "intercept": 0.1,
    "coefficients": {"S3": 0.08, "X1": 0.2, "X2": 0.1, "X4": -0.15},
    "category_offsets": {"D": -0.1},
}


def nslm_schema() -> Schema:
    cols: List[Column] = [
        Column("school_id", level="school", kind="categorical", role="school_id"),
        Column("Z", level="student", kind="numeric", role="treatment"),
        Column("Y", level="student", kind="numeric", role="outcome"),
    ]
    cols += [Column(name, level="student", kind="numeric") for name in STUDENT_SUPPORT]
    cols += [Column(name, level="school", kind="numeric") for name in SCHOOL_NUMERIC]
    cols.append(Column(URBANICITY_COLUMN, level="school", kind="categorical"))
    return Schema(columns=tuple(cols))


def _covariate_moments(name: str) -> Tuple[float, float]:
    if name in STUDENT_SUPPORT:
        support, probs = STUDENT_SUPPORT[name]
        mean = float(np.dot(support, probs))
        return mean, float(math.sqrt(np.dot((support - mean) ** 2, probs)))
    if name in SCHOOL_NUMERIC:
        return 0.0, 1.0
    raise ArgumentError(f"unknown numeric covariate {name!r}")


@dataclass(frozen=True)
class GroundTruth:
    tau: np.ndarray
    mu0: np.ndarray
    propensity: np.ndarray

    @property
    def mu1(self) -> np.ndarray:
        return self.mu0 + self.tau

    @property
    def ate(self) -> float:
        return float(np.mean(self.tau))

    def to_frame(self, dataset: Dataset) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "row_id": np.arange(dataset.m),
                "school_id": dataset.school_ids,
                "tau": self.tau,
                "mu0": self.mu0,
                "mu1": self.mu1,
                "propensity": self.propensity,
            }
        )


@dataclass(frozen=True)
class SyntheticConfig:
    n_schools: int = 76
    students_per_school: int = 140
    effect: Mapping[str, Any] = field(default_factory=lambda: {"kind": "constant", "value": 0.26})
    baseline: Mapping[str, Any] = field(default_factory=lambda: dict(DEFAULT_BASELINE))
    assignment: Mapping[str, Any] = field(default_factory=lambda: {"kind": "randomized", "p": 0.5})
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_schools < 2:
            raise ArgumentError("n_schools must be >= 2")
        if self.students_per_school < 1:
            raise ArgumentError("students_per_school must be >= 1")
        if not self.noise_sd >= 0:
            raise ArgumentError("noise_sd must be >= 0")


def _numeric(cols: Mapping[str, np.ndarray], name: str) -> np.ndarray:
    if name not in cols or name == URBANICITY_COLUMN:
        raise ArgumentError(f"effect/baseline references unknown numeric covariate {name!r}")
    return cols[name]


_OPS = {
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
}


def _evaluate_effect(spec: Mapping[str, Any], cols: Mapping[str, np.ndarray], m: int) -> np.ndarray:
    kind = spec.get("kind")
    if kind == "constant":
        return np.full(m, float(spec.get("value", 0.0)))
    if kind == "linear":
        tau = np.full(m, float(spec.get("intercept", 0.0)))
        for name, coef in dict(spec.get("coefficients", {})).items():
            tau = tau + float(coef) * _numeric(cols, name)
        return tau
    if kind == "threshold":
        active = np.ones(m, dtype=bool)
        for cond in spec.get("conditions", []):
            op = _OPS.get(str(cond.get("op", "<")))
            if op is None:
                raise ArgumentError(f"unknown threshold operator {cond.get('op')!r}")
            active &= op(_numeric(cols, str(cond["covariate"])), float(cond.get("value", 0.0)))
        return float(spec.get("base", 0.0)) + float(spec.get("delta", 0.0)) * active.astype(float)
    raise ArgumentError(f"unknown effect_spec kind {kind!r}")


def _evaluate_baseline(spec: Mapping[str, Any], cols: Mapping[str, np.ndarray], m: int) -> np.ndarray:
    kind = spec.get("kind", "linear")
    if kind == "constant":
        return np.full(m, float(spec.get("value", 0.0)))
    if kind != "linear":
        raise ArgumentError(f"unknown baseline kind {kind!r}")
    intercept = float(spec.get("intercept", DEFAULT_BASELINE["intercept"]))
    coefficients = spec.get("coefficients", DEFAULT_BASELINE["coefficients"])
    offsets = spec.get("category_offsets", DEFAULT_BASELINE["category_offsets"] if "coefficients" not in spec else {})
    mu0 = np.full(m, intercept)
    for name, coef in dict(coefficients).items():
        mu0 = mu0 + float(coef) * _numeric(cols, name)
    for level, offset in dict(offsets).items():
        mu0 = mu0 + float(offset) * (cols[URBANICITY_COLUMN] == level)
    return mu0


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-x))


def _propensity_at(spec: Mapping[str, Any], values: np.ndarray) -> np.ndarray:
    p = float(spec.get("p", 0.5))
    if not 0.0 < p < 1.0:
        raise ArgumentError("assignment p must lie in (0, 1)")
    kind = spec.get("kind", "randomized")
    if kind == "randomized":
        return np.full(values.shape[0], p)
    if kind == "confounded":
        mean, sd = _covariate_moments(str(spec["covariate"]))
        score = math.log(p / (1.0 - p)) + float(spec.get("strength", 1.0)) * (values - mean) / sd
        return np.clip(_sigmoid(score), *PROPENSITY_BOUNDS)
    raise ArgumentError(f"unknown assignment kind {kind!r}")


def generate_synthetic(config: SyntheticConfig) -> Tuple[Dataset, GroundTruth]:
    """Draw an NSLM-shaped cohort with known effects.

    Y = mu0(x) + Z * tau(x) + eps, eps ~ N(0, noise_sd^2), Z ~ Bernoulli(propensity(x)).
    The draw order is fixed, so a seed fully determines the output.
    """
    rng = np.random.default_rng(config.seed)
    n, k = config.n_schools, config.students_per_school
    m = n * k
    width = len(str(n))
    school_names = np.array([f"S{j + 1:0{width}d}" for j in range(n)], dtype=object)
    school_of_row = np.repeat(np.arange(n), k)

    school_numeric = rng.standard_normal((n, len(SCHOOL_NUMERIC)))
    urbanicity = rng.choice(np.array(URBANICITY_LEVELS, dtype=object), size=n)

    cols: Dict[str, np.ndarray] = {}
    for name, (support, probs) in STUDENT_SUPPORT.items():
        cols[name] = rng.choice(support, size=m, p=probs)
    for j, name in enumerate(SCHOOL_NUMERIC):
        cols[name] = school_numeric[school_of_row, j]
    cols[URBANICITY_COLUMN] = urbanicity[school_of_row]

    tau = _evaluate_effect(config.effect, cols, m)
    mu0 = _evaluate_baseline(config.baseline, cols, m)
    assignment = config.assignment
    driver = np.zeros(m)
    if assignment.get("kind", "randomized") == "confounded":
        driver = _numeric(cols, str(assignment.get("covariate", "")))
    propensity = _propensity_at(assignment, driver)
    z = (rng.random(m) < propensity).astype(np.int8)
    noise = rng.normal(0.0, config.noise_sd, size=m) if config.noise_sd > 0 else np.zeros(m)
    y = mu0 + z * tau + noise

    schema = nslm_schema()
    columns: Dict[str, Any] = {"school_id": school_names[school_of_row], "Z": z, "Y": y}
    columns.update(cols)
    dataset = Dataset.from_columns(schema, columns)
    truth = GroundTruth(tau=_frozen(tau), mu0=_frozen(mu0), propensity=_frozen(np.asarray(propensity, dtype=float)))
    return dataset, truth


def expected_tau_mean(config: SyntheticConfig) -> float:
    """Population mean of tau for constant and linear effect specs."""
    spec = config.effect
    kind = spec.get("kind")
    if kind == "constant":
        return float(spec.get("value", 0.0))
    if kind == "linear":
        total = float(spec.get("intercept", 0.0))
        for name, coef in dict(spec.get("coefficients", {})).items():
            total += float(coef) * _covariate_moments(name)[0]
        return total
    raise ArgumentError(f"no closed-form mean for effect kind {kind!r}")


def expected_naive_bias(config: SyntheticConfig) -> float:
    """Population value of naive_ate minus the true ATE.

    Closed form for linear/constant baselines and effects when assignment is randomized
    or confounded through one discrete student covariate.
    """
    assignment = config.assignment
    if assignment.get("kind", "randomized") == "randomized":
        return 0.0
    name = str(assignment.get("covariate", ""))
    if name not in STUDENT_SUPPORT:
        raise ArgumentError("closed-form bias needs a discrete student confounder (S3, C1, C2, C3)")
    support, probs = STUDENT_SUPPORT[name]
    p1 = _propensity_at(assignment, support)
    mean_treated = float(np.sum(probs * p1 * support) / np.sum(probs * p1))
    mean_control = float(np.sum(probs * (1 - p1) * support) / np.sum(probs * (1 - p1)))
    mean_all = float(np.dot(probs, support))

    baseline = config.baseline
    if baseline.get("kind", "linear") == "constant":
        beta = 0.0
    else:
        beta = float(dict(baseline.get("coefficients", DEFAULT_BASELINE["coefficients"])).get(name, 0.0))
    effect = config.effect
    if effect.get("kind") == "constant":
        gamma = 0.0
    elif effect.get("kind") == "linear":
        gamma = float(dict(effect.get("coefficients", {})).get(name, 0.0))
    else:
        raise ArgumentError(f"no closed-form bias for effect kind {effect.get('kind')!r}")
    return beta * (mean_treated - mean_control) + gamma * (mean_treated - mean_all)

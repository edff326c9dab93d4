from __future__ import annotations

from typing import Optional


class HetfxError(Exception):
    """Base class for every failure the pipeline reports to the caller."""


class SchemaError(HetfxError):
    pass


class DataValidationError(HetfxError):
    def __init__(self, message: str, *, row: Optional[int] = None, column: Optional[str] = None) -> None:
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class ArgumentError(HetfxError, ValueError):
    pass


class FitError(HetfxError):
    pass


class TrainingError(FitError):
    def __init__(self, message: str, *, epoch: int) -> None:
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class UndefinedMetricError(HetfxError):
    pass


class AggregationError(HetfxError):
    pass


class ConfigError(HetfxError):
    pass

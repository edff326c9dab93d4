from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np
from scipy import linalg

try:
    from ..errors import ArgumentError
    from .base import FittedModel, as_matrix, as_targets, register
except ImportError:
    from errors import ArgumentError
    from learners.base import FittedModel, as_matrix, as_targets, register


@register
@dataclass(frozen=True)
class RidgeModel(FittedModel):
    family = "ridge"

    coef: np.ndarray
    intercept: float
    n_features: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef + self.intercept

    def params_dict(self) -> Dict[str, Any]:
        return {"coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def from_params(cls, n_features: int, params: Dict[str, Any], meta: Dict[str, Any]) -> "RidgeModel":
        return cls(
            coef=np.asarray(params["coef"], dtype=float).reshape(n_features),
            intercept=float(params["intercept"]),
            n_features=n_features,
            meta=meta,
        )


def ridge_fit(X: Any, y: Any, lam: float = 1.0) -> RidgeModel:
    """Minimize mean((y - b - Xw)^2) + lam * ||w||^2 with b unpenalized.

    On centered data the normal equations read (Xc'Xc + m*lam*I) w = Xc'yc. At
    ``lam == 0`` the minimum-norm least-squares solution is used and a rank deficiency
    is flagged in ``meta``.
    """
    if lam < 0 or not np.isfinite(lam):
        raise ArgumentError("ridge lambda must be a finite value >= 0")
    Xm = as_matrix(X)
    target = as_targets(y, Xm.shape[0])
    m, d = Xm.shape
    x_mean = Xm.mean(axis=0)
    y_mean = float(target.mean())
    if d == 0:
        return RidgeModel(coef=np.zeros(0), intercept=y_mean, n_features=0, meta={"lambda": lam, "rank_deficient": False})

    Xc = Xm - x_mean
    yc = target - y_mean
    meta: Dict[str, Any] = {"lambda": float(lam)}
    if lam > 0:
        gram = Xc.T @ Xc + m * lam * np.eye(d)
        coef = linalg.solve(gram, Xc.T @ yc, assume_a="pos")
        meta["rank_deficient"] = False
    else:
        coef, _, rank, _ = linalg.lstsq(Xc, yc)
        meta["rank_deficient"] = bool(rank < d)
        meta["rank"] = int(rank)
    intercept = y_mean - float(x_mean @ coef)
    return RidgeModel(coef=np.asarray(coef, dtype=float), intercept=intercept, n_features=d, meta=meta)


def ridge_objective(model: RidgeModel, X: Any, y: Any, lam: float) -> float:
    Xm = as_matrix(X)
    target = as_targets(y, Xm.shape[0])
    resid = target - model.predict(Xm)
    return float(np.mean(resid ** 2) + lam * np.sum(model.coef ** 2))

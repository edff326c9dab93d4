"""T-learner: one outcome regression per treatment group, effect = f1(x) - f0(x)."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

try:
    from ..analysis.inference import CateTable
    from ..cohort.dataset import Dataset, FeatureEncoder, fit_encoder
    from ..errors import ArgumentError, FitError
    from ..learners import EstimatorConfig, FittedModel, fit_estimator, model_to_dict
    from ..tools import derive_seed, run_sync_tasks_strict
except ImportError:
    from analysis.inference import CateTable
    from cohort.dataset import Dataset, FeatureEncoder, fit_encoder
    from errors import ArgumentError, FitError
    from learners import EstimatorConfig, FittedModel, fit_estimator, model_to_dict
    from tools import derive_seed, run_sync_tasks_strict

logger = logging.getLogger(__name__)

STRATEGIES = ("t_learner", "repnet")


@dataclass(frozen=True)
class OutcomePairModel:
    """Potential-outcome predictors for both groups over one shared feature encoding.

    A ``t_learner`` pair holds two base models; a ``repnet`` pair holds one network with two heads.
    """

    encoder: FeatureEncoder
    strategy: str
    family: str
    model_id: str
    seed: int
    f0: Optional[FittedModel] = None
    f1: Optional[FittedModel] = None
    net: Any = None

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ArgumentError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "t_learner" and (self.f0 is None or self.f1 is None):
            raise ArgumentError("a t_learner pair needs both f0 and f1")
        if self.strategy == "repnet" and self.net is None:
            raise ArgumentError("a repnet pair needs a fitted network")

    def predict_outcomes(self, data: Dataset) -> Tuple[np.ndarray, np.ndarray]:
        X = self.encoder.transform(data).values
        if self.net is not None:
            return self.net.predict_pair(X)
        return self.f0.predict(X), self.f1.predict(X)

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "strategy": self.strategy,
            "family": self.family,
            "model_id": self.model_id,
            "seed": self.seed,
            "encoder": self.encoder.to_dict(),
        }
        if self.net is not None:
            payload["net"] = self.net.to_dict()
        else:
            payload["f0"] = model_to_dict(self.f0)
            payload["f1"] = model_to_dict(self.f1)
        return payload


def fit_t_learner(
    train: Dataset,
    config: EstimatorConfig,
    seed: int = 0,
    *,
    model_id: Optional[str] = None,
    encoder: Optional[FeatureEncoder] = None,
    threads: int = 1,
) -> OutcomePairModel:
    """Fit f0 on the z=0 rows and f1 on the z=1 rows of ``train``.

    Unless an ``encoder`` is passed in, it is fit on all training rows so both arms
    share one feature space. With the encoder held fixed each arm depends only on its
    own rows: dropping a treated row leaves f0 unchanged and vice versa.
    """
    g0, g1 = train.groups()
    if g0.size == 0:
        raise FitError("control group G_0 (z=0) is empty in the training data")
    if g1.size == 0:
        raise FitError("treated group G_1 (z=1) is empty in the training data")
    encoder = encoder or fit_encoder(train)
    X = encoder.transform(train).values

    def _fit_arm(rows: np.ndarray, arm: int) -> FittedModel:
        return fit_estimator(
            config,
            X[rows],
            train.y[rows],
            seed=derive_seed(seed, arm),
            groups=train.school_ids[rows],
        )

    f0, f1 = run_sync_tasks_strict(
        [lambda: _fit_arm(g0, 0), lambda: _fit_arm(g1, 1)],
        min(max(threads, 1), 2),
    )
    return OutcomePairModel(
        encoder=encoder,
        strategy="t_learner",
        family=config.family,
        model_id=model_id or config.label(),
        seed=int(seed),
        f0=f0,
        f1=f1,
    )


def impute_cate(model: OutcomePairModel, data: Dataset, *, replicate: int = 0) -> CateTable:
    """tau_hat_i = mu1_hat(x_i) - mu0_hat(x_i) for every row of ``data``."""
    mu0, mu1 = model.predict_outcomes(data)
    return CateTable(
        row_ids=np.arange(data.m),
        school_ids=np.asarray(data.school_ids),
        tau_hat=np.asarray(mu1 - mu0, dtype=float),
        model_id=model.model_id,
        seed=model.seed,
        replicate=replicate,
        strategy=model.strategy,
    )

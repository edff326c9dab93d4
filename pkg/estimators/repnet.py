"""Shared-representation outcome networks: TARNet, and CFR with an RBF-kernel MMD penalty.

A representation Phi(x) feeds two regression heads h0, h1. Each row is fit by the head of
its own treatment group; CFR adds ``alpha * MMD^2(Phi(G_0), Phi(G_1))`` per mini-batch.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.spatial.distance import cdist, pdist

try:
    from ..cohort.dataset import Dataset, FeatureEncoder, fit_encoder
    from ..errors import ArgumentError, ConfigError, FitError, TrainingError
    from ..learners.mlp import Layer, backward, flatten, forward, init_layers, l2_term, unflatten
    from ..learners.optim import make_optimizer
    from .tlearner import OutcomePairModel
except ImportError:
    from cohort.dataset import Dataset, FeatureEncoder, fit_encoder
    from errors import ArgumentError, ConfigError, FitError, TrainingError
    from learners.mlp import Layer, backward, flatten, forward, init_layers, l2_term, unflatten
    from learners.optim import make_optimizer
    from estimators.tlearner import OutcomePairModel

logger = logging.getLogger(__name__)

MMD_BLOCK = 2048
SIGMA_SAMPLE = 1000
CFR_ALPHA_DEFAULT = 1.0


class RepNetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rep_layers: List[int] = Field(default_factory=lambda: [64, 64])
    head_layers: List[int] = Field(default_factory=lambda: [32])
    activation: Literal["relu", "tanh", "sigmoid", "identity"] = "relu"
    alpha: float = Field(0.0, ge=0.0)
    mmd_sigma: Optional[float] = Field(None, gt=0.0)
    l2_penalty: float = Field(1e-4, ge=0.0)
    optimizer: Literal["sgd", "adam"] = "adam"
    step_size: float = Field(1e-3, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(256, ge=2)
    seed: Optional[int] = None

    @classmethod
    def from_candidate(cls, family: str, candidate: Dict[str, Any]) -> "RepNetConfig":
        payload = dict(candidate)
        if family == "cfr":
            payload.setdefault("alpha", CFR_ALPHA_DEFAULT)
        try:
            cfg = cls.model_validate(payload)
        except ValidationError as exc:
            raise ConfigError(f"invalid {family} candidate {candidate}: {exc}") from exc
        if family == "tarnet" and cfg.alpha != 0.0:
            raise ConfigError("tarnet candidates cannot set alpha; use the cfr family")
        if family == "cfr" and cfg.alpha <= 0.0:
            raise ConfigError("cfr candidates need alpha > 0")
        return cfg

    @property
    def family(self) -> str:
        return "cfr" if self.alpha > 0 else "tarnet"

    def label(self) -> str:
        fields = sorted(k for k in self.model_fields_set if k != "seed")
        inner = ",".join(f"{k}={getattr(self, k)}" for k in fields)
        return f"{self.family}({inner})"


# ---------------------------------------------------------------------------
# MMD with RBF kernel
# ---------------------------------------------------------------------------


def _kernel(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma ** 2))


def _kernel_mean(A: np.ndarray, B: np.ndarray, sigma: float, block: int) -> float:
    total = 0.0
    for start in range(0, A.shape[0], block):
        total += float(np.sum(_kernel(A[start:start + block], B, sigma)))
    return total / (A.shape[0] * B.shape[0])


def _check_sets(A: Any, B: Any, sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(A, dtype=float)
    b = np.asarray(B, dtype=float)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ArgumentError("MMD needs two nonempty point sets")
    if a.shape[1] != b.shape[1]:
        raise ArgumentError("point sets must share a dimension")
    if not sigma > 0:
        raise ArgumentError("sigma must be > 0")
    return a, b


def mmd2_rbf(A: Any, B: Any, sigma: float, *, block_size: int = MMD_BLOCK) -> float:
    """Biased (V-statistic) squared MMD with k(a, b) = exp(-|a - b|^2 / (2 sigma^2))."""
    a, b = _check_sets(A, B, sigma)
    value = _kernel_mean(a, a, sigma, block_size) + _kernel_mean(b, b, sigma, block_size) - 2.0 * _kernel_mean(a, b, sigma, block_size)
    return max(value, 0.0)


def mmd2_rbf_with_grad(A: np.ndarray, B: np.ndarray, sigma: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Squared MMD and its gradients with respect to every point of A and of B."""
    a, b = _check_sets(A, B, sigma)
    n0, n1 = a.shape[0], b.shape[0]
    s2 = sigma ** 2
    Kaa = _kernel(a, a, sigma)
    Kbb = _kernel(b, b, sigma)
    Kab = _kernel(a, b, sigma)
    value = Kaa.mean() + Kbb.mean() - 2.0 * Kab.mean()
    # sum_j K_ij (p_i - p_j) = p_i * rowsum_i - (K @ P)_i
    grad_a = -(2.0 / (n0 * n0 * s2)) * (a * Kaa.sum(axis=1)[:, None] - Kaa @ a)
    grad_a += (2.0 / (n0 * n1 * s2)) * (a * Kab.sum(axis=1)[:, None] - Kab @ b)
    grad_b = -(2.0 / (n1 * n1 * s2)) * (b * Kbb.sum(axis=1)[:, None] - Kbb @ b)
    grad_b += (2.0 / (n0 * n1 * s2)) * (b * Kab.sum(axis=0)[:, None] - Kab.T @ a)
    return float(value), grad_a, grad_b


def median_heuristic(points: np.ndarray) -> float:
    if points.shape[0] < 2:
        return 1.0
    median = float(np.median(pdist(points)))
    return median if median > 0 else 1.0


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RepNetModel:
    phi: Tuple[Layer, ...]
    head0: Tuple[Layer, ...]
    head1: Tuple[Layer, ...]
    activation: str
    sigma: float
    alpha: float
    n_features: int
    encoder: Optional[FeatureEncoder] = None
    trace: Dict[str, List[float]] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    family = "repnet"

    def _check(self, X: Any) -> np.ndarray:
        arr = np.asarray(getattr(X, "values", X), dtype=float)
        if arr.ndim != 2 or arr.shape[1] != self.n_features:
            raise ArgumentError(f"repnet expects {self.n_features} features, got shape {arr.shape}")
        return arr

    def represent(self, X: Any) -> np.ndarray:
        out, _ = forward(self.phi, self._check(X), self.activation, linear_output=False)
        return out

    def predict_pair(self, X: Any) -> Tuple[np.ndarray, np.ndarray]:
        rep = self.represent(X)
        mu0, _ = forward(self.head0, rep, self.activation)
        mu1, _ = forward(self.head1, rep, self.activation)
        return mu0[:, 0], mu1[:, 0]

    def flat_params(self) -> np.ndarray:
        return flatten([*self.phi, *self.head0, *self.head1])[0]

    def with_flat_params(self, vector: np.ndarray) -> "RepNetModel":
        shapes = flatten([*self.phi, *self.head0, *self.head1])[1]
        layers = unflatten(np.asarray(vector, dtype=float), shapes)
        n_phi, n_h0 = len(self.phi), len(self.head0)
        return RepNetModel(
            phi=tuple(layers[:n_phi]),
            head0=tuple(layers[n_phi:n_phi + n_h0]),
            head1=tuple(layers[n_phi + n_h0:]),
            activation=self.activation,
            sigma=self.sigma,
            alpha=self.alpha,
            n_features=self.n_features,
            encoder=self.encoder,
            trace=self.trace,
            meta=self.meta,
        )

    def to_dict(self) -> Dict[str, Any]:
        def _layers(items: Sequence[Layer]) -> List[Dict[str, Any]]:
            return [{"W": W.tolist(), "b": b.tolist()} for W, b in items]

        return {
            "format": "hetfx-model",
            "version": 1,
            "family": self.family,
            "n_features": self.n_features,
            "params": {
                "activation": self.activation,
                "sigma": self.sigma,
                "alpha": self.alpha,
                "phi": _layers(self.phi),
                "head0": _layers(self.head0),
                "head1": _layers(self.head1),
            },
            "meta": {**self.meta, "trace": self.trace},
        }


def _objective(
    phi: Sequence[Layer],
    head0: Sequence[Layer],
    head1: Sequence[Layer],
    X: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    activation: str,
    alpha: float,
    sigma: float,
    l2: float,
) -> Tuple[float, float, float, List[Layer]]:
    """Return (total, factual, mmd, grads for phi + head0 + head1)."""
    n = X.shape[0]
    idx0 = np.flatnonzero(z == 0)
    idx1 = np.flatnonzero(z == 1)
    rep, phi_cache = forward(phi, X, activation, linear_output=False)
    out0, cache0 = forward(head0, rep[idx0], activation)
    out1, cache1 = forward(head1, rep[idx1], activation)
    r0 = out0[:, 0] - y[idx0]
    r1 = out1[:, 0] - y[idx1]
    factual = float((np.sum(r0 ** 2) + np.sum(r1 ** 2)) / n)

    grads0, d_rep0 = backward(head0, cache0, (2.0 / n) * r0[:, None], activation)
    grads1, d_rep1 = backward(head1, cache1, (2.0 / n) * r1[:, None], activation)
    d_rep = np.zeros_like(rep)
    d_rep[idx0] += d_rep0
    d_rep[idx1] += d_rep1

    mmd = 0.0
    if idx0.size and idx1.size:
        if alpha > 0:
            mmd, g0, g1 = mmd2_rbf_with_grad(rep[idx0], rep[idx1], sigma)
            d_rep[idx0] += alpha * g0
            d_rep[idx1] += alpha * g1
        else:
            mmd = mmd2_rbf(rep[idx0], rep[idx1], sigma)

    grads_phi, _ = backward(phi, phi_cache, d_rep, activation, linear_output=False)
    all_layers = [*phi, *head0, *head1]
    all_grads = [*grads_phi, *grads0, *grads1]
    penalty = l2_term(all_layers)
    total = factual + alpha * mmd + l2 * penalty
    grads = [(dW + 2.0 * l2 * W, db) for (dW, db), (W, _) in zip(all_grads, all_layers)]
    return total, factual, mmd, grads


def repnet_objective(model: RepNetModel, X: Any, y: Any, z: Any, *, alpha: Optional[float] = None, l2_penalty: float = 0.0, vector: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """Full training objective (factual MSE + alpha * MMD^2 + l2) and its flat gradient."""
    net = model if vector is None else model.with_flat_params(vector)
    Xm = net._check(X)
    total, _, _, grads = _objective(
        net.phi,
        net.head0,
        net.head1,
        Xm,
        np.asarray(y, dtype=float),
        np.asarray(z).astype(int),
        net.activation,
        net.alpha if alpha is None else alpha,
        net.sigma,
        l2_penalty,
    )
    return total, flatten(grads)[0]


def stratified_batches(g0: np.ndarray, g1: np.ndarray, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffle each group and deal it into the same number of batches, so every batch holds both groups."""
    m = g0.shape[0] + g1.shape[0]
    n_batches = max(1, min(math.ceil(m / batch_size), g0.shape[0], g1.shape[0]))
    parts0 = np.array_split(rng.permutation(g0), n_batches)
    parts1 = np.array_split(rng.permutation(g1), n_batches)
    return [np.concatenate([a, b]) for a, b in zip(parts0, parts1)]


def fit_network(X: np.ndarray, y: np.ndarray, z: np.ndarray, config: RepNetConfig, seed: int, encoder: Optional[FeatureEncoder] = None) -> RepNetModel:
    g0 = np.flatnonzero(z == 0)
    g1 = np.flatnonzero(z == 1)
    if g0.size == 0 or g1.size == 0:
        raise FitError("representation network needs both treatment groups in the training data")
    d = X.shape[1]
    rng = np.random.default_rng(seed)
    phi = init_layers([d, *config.rep_layers], config.activation, "uniform", rng)
    rep_width = config.rep_layers[-1] if config.rep_layers else d
    head0 = init_layers([rep_width, *config.head_layers, 1], config.activation, "uniform", rng)
    head1 = init_layers([rep_width, *config.head_layers, 1], config.activation, "uniform", rng)

    if config.mmd_sigma is not None:
        sigma = float(config.mmd_sigma)
    else:
        # Separate stream, so the bandwidth draw leaves the training stream untouched.
        sample_rng = np.random.default_rng([seed, 1])
        rows = sample_rng.choice(X.shape[0], size=min(SIGMA_SAMPLE, X.shape[0]), replace=False)
        rep0, _ = forward(phi, X[np.sort(rows)], config.activation, linear_output=False)
        sigma = median_heuristic(rep0)

    optimizer = make_optimizer(config.optimizer, step_size=config.step_size, momentum=config.momentum, beta1=config.beta1, beta2=config.beta2)
    params = [p for layer in (*phi, *head0, *head1) for p in layer]
    trace: Dict[str, List[float]] = {"objective": [], "factual": [], "mmd": []}
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        batches = stratified_batches(g0, g1, config.batch_size, rng)
        for rows in batches:
            total, factual, mmd, grads = _objective(
                phi, head0, head1, X[rows], y[rows], z[rows], config.activation, config.alpha, sigma, config.l2_penalty
            )
            if not math.isfinite(total):
                raise TrainingError("objective is not finite", epoch=epoch)
            optimizer.step(params, [g for layer in grads for g in layer])
            sums += (total, factual, mmd)
        means = sums / len(batches)
        trace["objective"].append(float(means[0]))
        trace["factual"].append(float(means[1]))
        trace["mmd"].append(float(means[2]))
    logger.debug("Repnet fitted | alpha=%g sigma=%.4g final_factual=%.6g", config.alpha, sigma, trace["factual"][-1])
    return RepNetModel(
        phi=tuple(phi),
        head0=tuple(head0),
        head1=tuple(head1),
        activation=config.activation,
        sigma=sigma,
        alpha=float(config.alpha),
        n_features=d,
        encoder=encoder,
        trace=trace,
        meta={"seed": int(seed), "epochs": config.epochs, "batch_size": config.batch_size},
    )


def repnet_fit(train: Dataset, config: RepNetConfig, seed: Optional[int] = None, *, encoder: Optional[FeatureEncoder] = None) -> RepNetModel:
    """Train on every row of ``train``: factual loss through each row's own head, plus
    the MMD penalty between the group representations when ``alpha > 0``."""
    base_seed = int(seed if seed is not None else (config.seed or 0))
    encoder = encoder or fit_encoder(train)
    X = encoder.transform(train).values
    return fit_network(X, np.asarray(train.y, dtype=float), np.asarray(train.z).astype(int), config, base_seed, encoder)


def repnet_predict_pair(model: RepNetModel, data: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    if model.encoder is None:
        raise ArgumentError("model has no feature encoder; call predict_pair on a feature matrix")
    return model.predict_pair(model.encoder.transform(data).values)


def representation_mmd(model: RepNetModel, data: Dataset, sigma: Optional[float] = None) -> float:
    """Full-dataset MMD^2 between the group representations."""
    if model.encoder is None:
        raise ArgumentError("model has no feature encoder")
    rep = model.represent(model.encoder.transform(data).values)
    g0, g1 = data.groups()
    return mmd2_rbf(rep[g0], rep[g1], model.sigma if sigma is None else sigma)


def as_outcome_pair(model: RepNetModel, *, model_id: Optional[str] = None) -> OutcomePairModel:
    if model.encoder is None:
        raise ArgumentError("model has no feature encoder")
    family = "cfr" if model.alpha > 0 else "tarnet"
    return OutcomePairModel(
        encoder=model.encoder,
        strategy="repnet",
        family=family,
        model_id=model_id or family,
        seed=int(model.meta.get("seed", 0)),
        net=model,
    )

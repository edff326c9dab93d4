"""Feed-forward regression network trained by mini-batch gradient descent with manual backprop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from ..errors import ArgumentError, TrainingError
    from .base import EstimatorConfig, FittedModel, as_matrix, as_targets, register
    from .cart import resolve_params
    from .optim import make_optimizer
except ImportError:
    from errors import ArgumentError, TrainingError
    from learners.base import EstimatorConfig, FittedModel, as_matrix, as_targets, register
    from learners.cart import resolve_params
    from learners.optim import make_optimizer

logger = logging.getLogger(__name__)

Layer = Tuple[np.ndarray, np.ndarray]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


# name -> (f(z), f'(z))
ACTIVATIONS: Dict[str, Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]] = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(float)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "sigmoid": (_sigmoid, lambda z: _sigmoid(z) * (1.0 - _sigmoid(z))),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


def _activation(name: str) -> Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]:
    if name not in ACTIVATIONS:
        raise ArgumentError(f"unknown activation {name!r}")
    return ACTIVATIONS[name]


def init_layers(widths: Sequence[int], activation: str, init: str, rng: np.random.Generator) -> List[Layer]:
    """Uniform(-a, a) weights, zero biases.

    a = sqrt(6 / fan_in) for relu (He), sqrt(6 / (fan_in + fan_out)) otherwise (Glorot).
    """
    layers: List[Layer] = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        if init == "zeros":
            W = np.zeros((fan_in, fan_out))
        else:
            bound = math.sqrt(6.0 / fan_in) if activation == "relu" else math.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append((W, np.zeros(fan_out)))
    return layers


def forward(layers: Sequence[Layer], X: np.ndarray, activation: str, linear_output: bool = True) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]:
    f, _ = _activation(activation)
    cache: List[Tuple[np.ndarray, np.ndarray]] = []
    a = X
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        cache.append((a, z))
        a = z if (i == last and linear_output) else f(z)
    return a, cache


def backward(
    layers: Sequence[Layer],
    cache: Sequence[Tuple[np.ndarray, np.ndarray]],
    grad_out: np.ndarray,
    activation: str,
    linear_output: bool = True,
) -> Tuple[List[Layer], np.ndarray]:
    """Gradients for each (W, b) and for the network input, given dLoss/dOutput."""
    _, df = _activation(activation)
    grads: List[Layer] = [None] * len(layers)  # type: ignore[list-item]
    grad = grad_out
    last = len(layers) - 1
    for i in range(last, -1, -1):
        a_in, z = cache[i]
        if not (i == last and linear_output):
            grad = grad * df(z)
        W, _ = layers[i]
        grads[i] = (a_in.T @ grad, grad.sum(axis=0))
        grad = grad @ W.T
    return grads, grad


def flatten(layers: Sequence[Layer]) -> Tuple[np.ndarray, List[Tuple[Tuple[int, ...], Tuple[int, ...]]]]:
    shapes = [(W.shape, b.shape) for W, b in layers]
    if not layers:
        return np.zeros(0), shapes
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers]), shapes


def unflatten(vector: np.ndarray, shapes: Sequence[Tuple[Tuple[int, ...], Tuple[int, ...]]]) -> List[Layer]:
    layers: List[Layer] = []
    pos = 0
    for w_shape, b_shape in shapes:
        w_size = int(np.prod(w_shape))
        b_size = int(np.prod(b_shape))
        W = vector[pos:pos + w_size].reshape(w_shape).copy()
        pos += w_size
        b = vector[pos:pos + b_size].reshape(b_shape).copy()
        pos += b_size
        layers.append((W, b))
    if pos != vector.shape[0]:
        raise ArgumentError("parameter vector does not match layer shapes")
    return layers


def l2_term(layers: Sequence[Layer]) -> float:
    return float(sum(np.sum(W ** 2) for W, _ in layers))


def _loss_and_grads(layers: Sequence[Layer], X: np.ndarray, y: np.ndarray, activation: str, l2: float) -> Tuple[float, List[Layer]]:
    out, cache = forward(layers, X, activation)
    resid = out[:, 0] - y
    loss = float(np.mean(resid ** 2) + l2 * l2_term(layers))
    grad_out = (2.0 / X.shape[0]) * resid[:, None]
    grads, _ = backward(layers, cache, grad_out, activation)
    grads = [(dW + 2.0 * l2 * W, db) for (dW, db), (W, _) in zip(grads, layers)]
    return loss, grads


def mlp_objective(vector: np.ndarray, shapes: Sequence[Tuple[Tuple[int, ...], Tuple[int, ...]]], X: Any, y: Any, activation: str = "relu", l2_penalty: float = 0.0) -> Tuple[float, np.ndarray]:
    """Training objective and its flat gradient at the flat parameter ``vector``."""
    Xm = as_matrix(X)
    target = as_targets(y, Xm.shape[0])
    layers = unflatten(np.asarray(vector, dtype=float), shapes)
    loss, grads = _loss_and_grads(layers, Xm, target, activation, l2_penalty)
    return loss, flatten(grads)[0]


@register
@dataclass(frozen=True)
class MlpModel(FittedModel):
    family = "mlp"

    layers: Tuple[Layer, ...]
    activation: str
    n_features: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        out, _ = forward(self.layers, X, self.activation)
        return out[:, 0]

    @property
    def shapes(self) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
        return flatten(self.layers)[1]

    def params_dict(self) -> Dict[str, Any]:
        return {
            "activation": self.activation,
            "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in self.layers],
        }

    @classmethod
    def from_params(cls, n_features: int, params: Dict[str, Any], meta: Dict[str, Any]) -> "MlpModel":
        layers = tuple(
            (np.asarray(item["W"], dtype=float).reshape(-1, len(item["b"])), np.asarray(item["b"], dtype=float))
            for item in params["layers"]
        )
        return cls(layers=layers, activation=str(params["activation"]), n_features=n_features, meta=meta)


def mlp_fit(X: Any, y: Any, params: Optional[EstimatorConfig] = None, *, seed: Optional[int] = None, **overrides: Any) -> MlpModel:
    """Fit mean squared error + l2_penalty * sum ||W||^2 (biases unpenalized).

    An empty ``layer_widths`` gives a linear model. Raises ``TrainingError`` with the
    epoch number when the loss stops being finite.
    """
    cfg = resolve_params(params, "mlp", overrides)
    Xm = as_matrix(X)
    target = as_targets(y, Xm.shape[0])
    base_seed = int(seed if seed is not None else (cfg.seed or 0))
    rng = np.random.default_rng(base_seed)
    m, d = Xm.shape

    layers = init_layers([d, *cfg.layer_widths, 1], cfg.activation, cfg.init, rng)
    optimizer = make_optimizer(cfg.optimizer, step_size=cfg.step_size, momentum=cfg.momentum, beta1=cfg.beta1, beta2=cfg.beta2)
    batch = min(cfg.batch_size, m)
    trace: List[float] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(m) if cfg.shuffle else np.arange(m)
        for start in range(0, m, batch):
            rows = order[start:start + batch]
            loss, grads = _loss_and_grads(layers, Xm[rows], target[rows], cfg.activation, cfg.l2_penalty)
            if not math.isfinite(loss):
                raise TrainingError("loss is not finite", epoch=epoch)
            params_flat = [p for layer in layers for p in layer]
            grads_flat = [g for layer in grads for g in layer]
            optimizer.step(params_flat, grads_flat)
        out, _ = forward(layers, Xm, cfg.activation)
        epoch_loss = float(np.mean((out[:, 0] - target) ** 2) + cfg.l2_penalty * l2_term(layers))
        if not math.isfinite(epoch_loss):
            raise TrainingError("loss is not finite", epoch=epoch)
        trace.append(epoch_loss)
    logger.debug("MLP fitted | epochs=%d final_loss=%.6g", cfg.epochs, trace[-1])
    return MlpModel(
        layers=tuple(layers),
        activation=cfg.activation,
        n_features=d,
        meta={"seed": base_seed, "loss_trace": trace, "layer_widths": list(cfg.layer_widths), "optimizer": cfg.optimizer},
    )

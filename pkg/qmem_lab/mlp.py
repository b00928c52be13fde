"""Small fully connected networks mapping distributions to distributions.

Architecture: ``d -> 5d -> 5d -> 5d -> 5d -> d`` with SELU on the hidden
layers, softmax on the output, soft-label cross-entropy loss and Adam. Each
layer carries a freeze flag; frozen layers keep their parameters bit for bit.

Weights are stored ``(fan_in, fan_out)`` so a batch ``X`` of shape
``(rows, fan_in)`` maps to ``X @ W + b``. Everything is float64.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError
from .io_utils import read_json_content, write_json
from .rng import derive_stream

logger = logging.getLogger(__name__)

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
LOG_FLOOR = 1e-12


@dataclass
class Mlp:
    layer_dims: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    freeze: List[bool]
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2:
            raise ArgumentError("a network needs at least an input and an output layer")
        layers = len(self.layer_dims) - 1
        if len(self.weights) != layers or len(self.biases) != layers or len(self.freeze) != layers:
            raise ArgumentError("weights, biases and freeze flags must have one entry per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[l], self.layer_dims[l + 1]) or b.shape != (self.layer_dims[l + 1],):
                raise ArgumentError(f"layer {l} parameter shapes do not match layer_dims")

    @property
    def layer_count(self) -> int:
        return len(self.layer_dims) - 1

    def copy(self) -> 'Mlp':
        return Mlp(self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   list(self.freeze), dict(self.provenance))


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 300


@dataclass
class AdamState:
    config: AdamConfig
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    loss: float = 0.0

    def as_list(self) -> List[np.ndarray]:
        return [g for pair in zip(self.weights, self.biases) for g in pair]


def default_layer_dims(width: int, hidden_layers: int = 4, width_factor: int = 5) -> Tuple[int, ...]:
    """``[2**width, 5 * 2**width, ..., 2**width]`` for a ``width``-qubit distribution."""
    d = 2 ** width
    return (d,) + (width_factor * d,) * hidden_layers + (d,)


def init(layer_dims: Sequence[int], seed: int) -> Mlp:
    """LeCun-normal weights (variance ``1 / fan_in``), zero biases."""
    layer_dims = tuple(int(d) for d in layer_dims)
    if len(layer_dims) < 2:
        raise ArgumentError("a network needs at least two layers")
    rng = derive_stream(seed, 'mlp-init')
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(layer_dims, weights, biases, [False] * (len(layer_dims) - 1))


def selu(z: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def selu_grad(z: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(z, 0.0)))


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = np.exp(z - z.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def _forward_cache(net: Mlp, x: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    activations = [x]
    pre = []
    a = x
    for l in range(net.layer_count):
        z = a @ net.weights[l] + net.biases[l]
        pre.append(z)
        a = softmax(z) if l == net.layer_count - 1 else selu(z)
        activations.append(a)
    return activations, pre


def forward(net: Mlp, x) -> np.ndarray:
    """Network output for one vector or a ``(rows, d_in)`` batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != net.layer_dims[0]:
        raise ArgumentError(f"input length {batch.shape[1]} != d_in {net.layer_dims[0]}")
    out = _forward_cache(net, batch)[0][-1]
    return out[0] if single else out


def loss(predicted, target) -> float:
    """Soft-label cross-entropy; averaged over rows for batches."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ArgumentError("predicted and target shapes differ")
    per_row = -np.sum(target * np.log(np.maximum(predicted, LOG_FLOOR)), axis=-1)
    return float(np.mean(per_row))


def gradients(net: Mlp, x: np.ndarray, target: np.ndarray) -> Gradients:
    """Mean loss gradient over the batch; frozen layers report zeros.

    The returned ``loss`` is the batch loss from the same forward pass.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if x.shape[0] == 0:
        raise ArgumentError("gradients need a non-empty batch")
    activations, pre = _forward_cache(net, x)
    out = activations[-1]
    batch_loss = loss(out, target)
    live = (out > LOG_FLOOR).astype(np.float64)
    weighted = target * live
    # d/dz of -sum t*log(softmax(z)), ignoring terms pinned at the log floor
    delta = (out * weighted.sum(axis=1, keepdims=True) - weighted) / x.shape[0]
    grad_w = [np.zeros_like(w) for w in net.weights]
    grad_b = [np.zeros_like(b) for b in net.biases]
    # nothing below the lowest trainable layer needs a backward pass
    lowest = next((l for l, frozen in enumerate(net.freeze) if not frozen), net.layer_count)
    for l in reversed(range(lowest, net.layer_count)):
        if not net.freeze[l]:
            grad_w[l] = activations[l].T @ delta
            grad_b[l] = delta.sum(axis=0)
        if l > lowest:
            delta = (delta @ net.weights[l].T) * selu_grad(pre[l - 1])
    return Gradients(grad_w, grad_b, batch_loss)


def new_adam_state(net: Mlp, config: Optional[AdamConfig] = None) -> AdamState:
    params = [p for pair in zip(net.weights, net.biases) for p in pair]
    return AdamState(config or AdamConfig(), [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_update(params: List[np.ndarray], grads: List[np.ndarray], state: AdamState,
                trainable: Optional[List[bool]] = None) -> None:
    """In-place Adam step on ``params``; entries with ``trainable[k] == False`` are skipped."""
    cfg = state.config
    state.t += 1
    correction1 = 1.0 - cfg.beta1 ** state.t
    correction2 = 1.0 - cfg.beta2 ** state.t
    for k, (p, g) in enumerate(zip(params, grads)):
        if trainable is not None and not trainable[k]:
            continue
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[k] / correction1
        v_hat = state.v[k] / correction2
        p -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def adam_step(net: Mlp, state: AdamState, grads: Gradients) -> Tuple[Mlp, AdamState]:
    params = [p for pair in zip(net.weights, net.biases) for p in pair]
    trainable = [not f for f in net.freeze for _ in range(2)]
    adam_update(params, grads.as_list(), state, trainable)
    return net, state


def train(
    net: Mlp,
    x: np.ndarray,
    target: np.ndarray,
    state: Optional[AdamState] = None,
    shuffle_seed: int = 0,
) -> Tuple[Mlp, List[float]]:
    """Mini-batch Adam for ``state.config.epochs`` epochs; returns the per-epoch mean loss.

    The last incomplete batch of an epoch is used as is.
    """
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if x.shape[0] < 1:
        raise ArgumentError("training needs at least one pair")
    state = state or new_adam_state(net)
    cfg = state.config
    rows = x.shape[0]
    trace: List[float] = []
    for epoch in range(cfg.epochs):
        order = derive_stream(shuffle_seed, 'shuffle', epoch).permutation(rows)
        total = 0.0
        for start in range(0, rows, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, tb = x[idx], target[idx]
            grads = gradients(net, xb, tb)
            total += grads.loss * idx.shape[0]
            adam_step(net, state, grads)
        trace.append(total / rows)
        logger.debug("epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, trace[-1])
    return net, trace


def count_parameters(layer_dims: Sequence[int], freeze: Optional[Sequence[bool]] = None) -> int:
    total = 0
    for l, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        if freeze is None or not freeze[l]:
            total += fan_in * fan_out + fan_out
    return total


def trainable_param_count(net: Mlp) -> int:
    return count_parameters(net.layer_dims, net.freeze)


def mlp_to_dict(net: Mlp) -> Dict[str, Any]:
    return {
        'layer_dims': list(net.layer_dims),
        'freeze': list(net.freeze),
        'weights': [w.tolist() for w in net.weights],
        'biases': [b.tolist() for b in net.biases],
        'provenance': net.provenance,
    }


def mlp_from_dict(data: Dict[str, Any]) -> Mlp:
    try:
        return Mlp(
            tuple(data['layer_dims']),
            [np.asarray(w, dtype=np.float64).reshape(a, b)
             for w, a, b in zip(data['weights'], data['layer_dims'][:-1], data['layer_dims'][1:])],
            [np.asarray(b, dtype=np.float64) for b in data['biases']],
            [bool(f) for f in data['freeze']],
            dict(data.get('provenance', {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArgumentError(f"invalid model file: {exc}") from exc


def save_mlp(net: Mlp, path):
    return write_json(path, mlp_to_dict(net))


def load_mlp(ref) -> Mlp:
    return mlp_from_dict(read_json_content(ref))

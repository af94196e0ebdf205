from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, List, Sequence, Tuple, Union

import numpy as np
from commons.io import atomic_write_text
from loguru import logger

from distr.autodiff import tensor as ad
from distr.autodiff.tensor import Tensor
from distr.exceptions import NonFiniteError, ShapeError, UnsupportedPrimitiveError
from distr.serialisation import NetCheckpoint

ACTIVATIONS = ("tanh", "relu", "identity")

_NUMPY_ACTIVATIONS = {
    "tanh": np.tanh,
    "relu": lambda z: np.maximum(z, 0.0),
    "identity": lambda z: z,
}

_TENSOR_ACTIVATIONS = {
    "tanh": ad.tanh,
    "relu": ad.relu,
    "identity": lambda z: z,
}


@dataclass(frozen=True)
class NetParams:
    """Parameters of a multilayer perceptron.

    `weights[l]` has shape (layer_sizes[l], layer_sizes[l + 1]); hidden layer l
    uses `activations[l]`, the output layer is linear.
    """
    layer_sizes: Tuple[int, ...]
    activations: Tuple[str, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        sizes = self.layer_sizes
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise ShapeError(f"layer_sizes needs at least two positive entries, got {list(sizes)}")
        n_layers = len(sizes) - 1
        if len(self.activations) != n_layers - 1:
            raise ShapeError(f"expected {n_layers - 1} hidden activations, got {len(self.activations)}")
        unknown = [a for a in self.activations if a not in ACTIVATIONS]
        if unknown:
            raise ShapeError(f"unknown activation(s) {unknown}; allowed: {ACTIVATIONS}")
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("one weight matrix and one bias vector per layer")
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[layer], sizes[layer + 1]) or b.shape != (sizes[layer + 1],):
                raise ShapeError(
                    f"layer {layer}: weight {w.shape} / bias {b.shape} do not chain with sizes {list(sizes)}"
                )

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> List[np.ndarray]:
        """Parameters interleaved as [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "NetParams":
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.weights):
            raise ShapeError(f"expected {2 * len(self.weights)} arrays, got {len(arrays)}")
        return NetParams(
            layer_sizes=self.layer_sizes,
            activations=self.activations,
            weights=tuple(np.asarray(a, dtype=np.float64) for a in arrays[0::2]),
            biases=tuple(np.asarray(a, dtype=np.float64) for a in arrays[1::2]),
        )

    def zeros_like(self) -> "NetParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def copy(self) -> "NetParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def max_abs_diff(self, other: "NetParams") -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.arrays(), other.arrays()))


def net_init(layer_sizes: Sequence[int], activation: Union[str, Sequence[str]], seed: int) -> NetParams:
    """Scaled-uniform weights U(-s, s) with s = sqrt(1 / fan_in), zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ShapeError(f"layer_sizes needs at least two positive entries, got {list(layer_sizes)}")
    n_hidden = len(sizes) - 2
    activations = (activation,) * n_hidden if isinstance(activation, str) else tuple(activation)

    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return NetParams(sizes, activations, tuple(weights), tuple(biases))


def _check_batch(params: NetParams, batch: np.ndarray) -> None:
    if batch.ndim != 2 or batch.shape[1] != params.in_dim:
        raise ShapeError(f"input batch must have shape (B, {params.in_dim}), got {batch.shape}")


def forward(params: NetParams, input_batch: np.ndarray) -> np.ndarray:
    """Pure numpy evaluation, no graph recorded."""
    h = np.asarray(input_batch, dtype=np.float64)
    _check_batch(params, h)
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if layer < last:
            h = _NUMPY_ACTIVATIONS[params.activations[layer]](h)
    return h


class TensorNet:
    """Graph-recording view of a NetParams; leaves are exposed for gradient collection."""

    def __init__(self, params: NetParams, requires_grad: bool = True) -> None:
        self.params = params
        self.leaves = [Tensor(a, requires_grad=requires_grad) for a in params.arrays()]

    def __call__(self, x) -> Tensor:
        h = ad.lift(x)
        if h.ndim != 2 or h.shape[1] != self.params.in_dim:
            raise ShapeError(f"input batch must have shape (B, {self.params.in_dim}), got {h.shape}")
        last = len(self.params.weights) - 1
        for layer in range(last + 1):
            h = ad.affine(h, self.leaves[2 * layer], self.leaves[2 * layer + 1])
            if layer < last:
                h = _TENSOR_ACTIVATIONS[self.params.activations[layer]](h)
        return h

    def grads(self) -> NetParams:
        return self.params.with_arrays(
            [np.zeros_like(leaf.value) if leaf.grad is None else leaf.grad for leaf in self.leaves]
        )


def value_and_grad_arrays(loss_fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> Tuple[float, List[np.ndarray]]:
    """Evaluate `loss_fn(*leaves)` and return its value with d(loss)/d(array) per array."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    loss = loss_fn(*leaves)
    _check_loss(loss)
    if loss.requires_grad:
        loss.backward()
    grads = [np.zeros_like(leaf.value) if leaf.grad is None else leaf.grad for leaf in leaves]
    return loss.item(), grads


def value_and_gradients(params: NetParams, loss_fn: Callable[[TensorNet, Any], Tensor], batch: Any) -> Tuple[float, NetParams]:
    net = TensorNet(params)
    loss = loss_fn(net, batch)
    _check_loss(loss)
    if loss.requires_grad:
        loss.backward()
    return loss.item(), net.grads()


def gradients(params: NetParams, loss_fn: Callable[[TensorNet, Any], Tensor], batch: Any) -> NetParams:
    """Exact reverse-mode gradients of a scalar loss with respect to every parameter."""
    return value_and_gradients(params, loss_fn, batch)[1]


def _check_loss(loss: Any) -> None:
    if not isinstance(loss, Tensor):
        raise UnsupportedPrimitiveError(
            f"loss_fn must build its result from Tensor primitives, got {type(loss).__name__}"
        )
    if loss.shape != ():
        raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
    if not np.isfinite(loss.value):
        raise NonFiniteError(f"non-finite loss value {float(loss.value)}")


def numerical_gradients(params: NetParams, loss_fn: Callable[[TensorNet, Any], Tensor], batch: Any, h: float = 1e-5) -> NetParams:
    """Central finite differences, one parameter at a time."""
    arrays = [a.copy() for a in params.arrays()]

    def loss_at(values) -> float:
        return loss_fn(TensorNet(params.with_arrays(values), requires_grad=False), batch).item()

    numeric = []
    for array in arrays:
        grad = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            plus = loss_at(arrays)
            array[index] = original - h
            minus = loss_at(arrays)
            array[index] = original
            grad[index] = (plus - minus) / (2.0 * h)
        numeric.append(grad)
    return params.with_arrays(numeric)


def gradient_check(
    params: NetParams,
    loss_fn: Callable[[TensorNet, Any], Tensor],
    batch: Any,
    h: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Max relative error |analytic - numeric| / max(|analytic|, |numeric|, floor)."""
    analytic = gradients(params, loss_fn, batch).arrays()
    numeric = numerical_gradients(params, loss_fn, batch, h).arrays()
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    logger.debug(f"Gradient check max relative error: {worst:.3e}")
    return worst


# ============ Checkpoints ============

def to_checkpoint(params: NetParams) -> NetCheckpoint:
    return NetCheckpoint(
        layer_sizes=list(params.layer_sizes),
        activation=list(params.activations),
        weights=[w.tolist() for w in params.weights],
        biases=[b.tolist() for b in params.biases],
    )


def from_checkpoint(checkpoint: NetCheckpoint) -> NetParams:
    return NetParams(
        layer_sizes=tuple(checkpoint.layer_sizes),
        activations=tuple(checkpoint.activation),
        weights=tuple(np.asarray(w, dtype=np.float64).reshape(i, o) for w, i, o in
                      zip(checkpoint.weights, checkpoint.layer_sizes[:-1], checkpoint.layer_sizes[1:])),
        biases=tuple(np.asarray(b, dtype=np.float64) for b in checkpoint.biases),
    )


def save_checkpoint(params: NetParams, path: Path) -> Path:
    if not params.is_finite():
        raise NonFiniteError(f"refusing to checkpoint non-finite parameters to {path}")
    return atomic_write_text(Path(path), to_checkpoint(params).model_dump_json())


def load_checkpoint(path: Path) -> NetParams:
    return from_checkpoint(NetCheckpoint.model_validate_json(Path(path).read_text(encoding="utf-8")))

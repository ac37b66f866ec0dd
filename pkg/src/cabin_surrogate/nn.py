"""Dense tanh network, affine baseline, MSE loss and Adam, with hand-written gradients.

Weights are stored ``(out, in)`` so a layer computes ``x @ W.T + b`` on a
row-major batch. Every hidden layer applies tanh; the last layer is affine.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ConfigurationError, ContractError, DataError, NumericError, ShapeError


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class MlpModel:
    layers: list[DenseLayer]

    def __post_init__(self):
        if len(self.layers) < 2:
            raise ConfigurationError("an MLP needs at least 2 layers")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer {i} outputs {a.out_dim} but layer {i + 1} takes {b.in_dim}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def width(self) -> int:
        return self.layers[0].out_dim

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dtype(self) -> np.dtype:
        return self.layers[0].weights.dtype

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def copy(self) -> "MlpModel":
        return MlpModel([DenseLayer(l.weights.copy(), l.bias.copy()) for l in self.layers])


@dataclass
class LinearModel:
    """Single affine map from the normalized inputs to the targets."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.weights.dtype

    def parameters(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def copy(self) -> "LinearModel":
        return LinearModel(self.weights.copy(), self.bias.copy())


Model = Union[MlpModel, LinearModel]


@dataclass
class Activations:
    """Everything the backward pass needs from one forward call."""

    model: Model
    inputs: np.ndarray
    # post-activation output of every layer; the last entry is the prediction
    outputs: list[np.ndarray]

    @property
    def prediction(self) -> np.ndarray:
        return self.outputs[-1]


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
            **kw,
        )


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_model(depth: int, width: int, input_dim: int, output_dim: int, seed: int,
               dtype=np.float64) -> MlpModel:
    """Glorot-uniform weights, zero biases; ``depth`` counts dense layers."""
    if depth < 2 or width < 1 or input_dim < 1 or output_dim < 1:
        raise ConfigurationError(
            f"invalid architecture depth={depth} width={width} dims={input_dim}->{output_dim}"
        )
    rng = np.random.default_rng(seed)
    sizes = [input_dim] + [width] * (depth - 1) + [output_dim]
    layers = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = glorot_bound(fan_in, fan_out)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        layers.append(DenseLayer(w, np.zeros(fan_out, dtype=dtype)))
    return MlpModel(layers)


def init_linear(input_dim: int, output_dim: int, seed: int, dtype=np.float64) -> LinearModel:
    if input_dim < 1 or output_dim < 1:
        raise ConfigurationError(f"invalid linear dims {input_dim}->{output_dim}")
    rng = np.random.default_rng(seed)
    bound = glorot_bound(input_dim, output_dim)
    w = rng.uniform(-bound, bound, size=(output_dim, input_dim)).astype(dtype)
    return LinearModel(w, np.zeros(output_dim, dtype=dtype))


def _check_batch(batch: np.ndarray, input_dim: int) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != input_dim:
        raise ShapeError(f"expected a (B, {input_dim}) batch, got {batch.shape}")
    return batch


def forward(model: MlpModel, batch: np.ndarray) -> Activations:
    batch = _check_batch(batch, model.input_dim)
    outputs = []
    h = batch
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        z = h @ layer.weights.T
        z += layer.bias
        h = z if i == last else np.tanh(z, out=z)
        outputs.append(h)
    return Activations(model, batch, outputs)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def _mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    return (pred - target) * (2.0 / pred.size)


def _check_acts(model: Model, acts: Activations, batch: np.ndarray | None, n_outputs: int):
    if acts.model is not model or len(acts.outputs) != n_outputs:
        raise ContractError("activations were not produced by this model")
    if batch is not None and (
        batch is not acts.inputs
        and (batch.shape != acts.inputs.shape or not np.array_equal(batch, acts.inputs))
    ):
        raise ContractError("activations were produced from a different batch")


def backward(model: MlpModel, acts: Activations, batch: np.ndarray | None,
             target: np.ndarray) -> list[np.ndarray]:
    """Gradients of ``mse_loss(forward(model, batch), target)``, ordered like ``parameters()``."""
    _check_acts(model, acts, batch, len(model.layers))
    delta = _mse_grad(acts.prediction, target)
    grads: list[np.ndarray] = [None] * (2 * len(model.layers))  # type: ignore[list-item]
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        h_in = acts.inputs if i == 0 else acts.outputs[i - 1]
        grads[2 * i] = delta.T @ h_in
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ layer.weights
            delta *= 1.0 - h_in * h_in
    return grads


def linear_forward(model: LinearModel, batch: np.ndarray) -> Activations:
    batch = _check_batch(batch, model.input_dim)
    out = batch @ model.weights.T
    out += model.bias
    return Activations(model, batch, [out])


def linear_backward(model: LinearModel, acts: Activations, batch: np.ndarray | None,
                    target: np.ndarray) -> list[np.ndarray]:
    _check_acts(model, acts, batch, 1)
    delta = _mse_grad(acts.prediction, target)
    return [delta.T @ acts.inputs, delta.sum(axis=0)]


def model_forward(model: Model, batch: np.ndarray) -> Activations:
    if isinstance(model, LinearModel):
        return linear_forward(model, batch)
    return forward(model, batch)


def model_backward(model: Model, acts: Activations, target: np.ndarray) -> list[np.ndarray]:
    if isinstance(model, LinearModel):
        return linear_backward(model, acts, None, target)
    return backward(model, acts, None, target)


def predict(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=model.dtype)
    if x.shape != (model.input_dim,):
        raise ShapeError(f"expected an input vector of length {model.input_dim}, got {x.shape}")
    return model_forward(model, x[None, :]).prediction[0]


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> tuple[Sequence[np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"tensor {i}: parameter {p.shape} vs gradient {g.shape}")
        # a sum is non-finite whenever any entry is; overflow only gives a false alarm
        if not np.isfinite(g.sum()) and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter tensor {i} (shape {g.shape})")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step = state.learning_rate * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    eps_hat = state.epsilon * np.sqrt(1.0 - b2 ** t)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp += eps_hat
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p -= tmp
    return params, state


def parameter_count(model: Model) -> int:
    return sum(p.size for p in model.parameters())


# Checkpoint container
#
#   line 1   b"CABINSURR-CKPT 1\n"
#   line 2   one JSON object (sorted keys, no spaces) terminated by b"\n":
#            kind ("mlp" | "linear"), depth, width, input_dim, output_dim,
#            dtype (numpy str, e.g. "<f8"), config_hash, shapes (list per tensor)
#   body     tensors in parameters() order, each row-major little-endian,
#            concatenated with no padding
CHECKPOINT_MAGIC = b"CABINSURR-CKPT 1\n"


def checkpoint_bytes(model: Model, config_hash: str = "") -> bytes:
    params = model.parameters()
    dtype = np.dtype(model.dtype).newbyteorder("<")
    if isinstance(model, LinearModel):
        kind, depth, width = "linear", 1, 0
    else:
        kind, depth, width = "mlp", model.depth, model.width
    header = {
        "kind": kind,
        "depth": depth,
        "width": width,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "dtype": dtype.str,
        "config_hash": config_hash,
        "shapes": [list(p.shape) for p in params],
    }
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
    for p in params:
        buf.write(np.ascontiguousarray(p, dtype=dtype).tobytes())
    return buf.getvalue()


def save_checkpoint(path: str | Path, model: Model, config_hash: str = "") -> None:
    Path(path).write_bytes(checkpoint_bytes(model, config_hash))


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path}: not a checkpoint file")
    rest = data[len(CHECKPOINT_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: truncated header")
    header = json.loads(rest[:nl])
    body = rest[nl + 1:]
    dtype = np.dtype(header["dtype"])
    tensors, offset = [], 0
    for shape in header["shapes"]:
        n = int(np.prod(shape)) * dtype.itemsize
        if offset + n > len(body):
            raise DataError(f"{path}: truncated tensor data")
        arr = np.frombuffer(body, dtype=dtype, count=int(np.prod(shape)), offset=offset)
        tensors.append(arr.reshape(shape).astype(dtype.newbyteorder("="), copy=True))
        offset += n
    if offset != len(body):
        raise DataError(f"{path}: {len(body) - offset} trailing bytes")
    if header["kind"] == "linear":
        model: Model = LinearModel(tensors[0], tensors[1])
    else:
        model = MlpModel([DenseLayer(w, b) for w, b in zip(tensors[::2], tensors[1::2])])
    return model, header


def config_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]

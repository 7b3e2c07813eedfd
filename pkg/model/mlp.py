import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from numeric.core import FLOAT, ParameterVector, RngStream, STREAM_INIT
from numeric.errors import ConfigError, DomainError, LayoutError, NumericError, ShapeError

log = logging.getLogger(__name__)

MAX_LAYERS = 4


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


def layout_id_for(layer_sizes, activation):
    return "mlp:" + "-".join(str(int(s)) for s in layer_sizes) + ":" + Activation(activation).value


def param_count(layer_sizes):
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass(frozen=True)
class Model:
    """Fully-connected classifier; hidden layers use `activation`, the last is linear.

    Flat parameter layout, layer by layer: W (fan_in x fan_out, row-major) then b.
    """

    layer_sizes: tuple
    activation: Activation
    params: ParameterVector

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigError(f"layer sizes must be >= 2 positive widths, got {sizes}")
        if len(sizes) - 1 > MAX_LAYERS:
            raise ConfigError(f"at most {MAX_LAYERS} layers supported, got {len(sizes) - 1}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activation", Activation(self.activation))
        if len(self.params) != param_count(sizes):
            raise LayoutError(f"{len(self.params)} parameters for sizes {sizes}, expected {param_count(sizes)}")
        if self.params.layout_id != self.layout_id:
            raise LayoutError(f"parameter layout {self.params.layout_id} does not fit {self.layout_id}")

    @property
    def layout_id(self):
        return layout_id_for(self.layer_sizes, self.activation)

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def n_classes(self):
        return self.layer_sizes[-1]

    def with_params(self, params):
        return Model(self.layer_sizes, self.activation, params)

    def layers(self):
        """(W, b) views into the flat parameter vector, one pair per layer."""
        out = []
        offset = 0
        flat = self.params.values
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = flat[offset:offset + fan_out]
            offset += fan_out
            out.append((w, b))
        return out


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=FLOAT)
        y = np.asarray(self.labels)
        if x.ndim != 2:
            raise ShapeError(f"inputs must be n x d, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ShapeError(f"{y.shape} labels for {x.shape[0]} inputs")
        if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0):
            raise DomainError("labels must be nonnegative class indices")
        if x.size and (not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0):
            raise DomainError("batch inputs must lie in [0, 1]")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self):
        return self.inputs.shape[0]

    def with_inputs(self, inputs):
        return Batch(inputs, self.labels)


def init_model(layer_sizes, activation=Activation.RELU, rng=None, seed=0):
    """
    Initialize an MLP with weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].

    Args:
        layer_sizes (list[int]): input dim, hidden widths, class count
        activation (Activation): hidden nonlinearity
        rng (RngStream): stream to draw from; a fresh init stream for `seed` if None
        seed (int): used only when rng is None

    Returns:
        Model: freshly initialized model
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if rng is None:
        rng = RngStream(seed, STREAM_INIT)
    chunks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, fan_in * fan_out))
        chunks.append(rng.uniform(-bound, bound, fan_out))
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    return Model(sizes, activation, ParameterVector(flat, layout_id_for(sizes, activation)))


def model_from_layers(layers, activation=Activation.RELU):
    """Build a Model from explicit [(W, b), ...] with W shaped (fan_in, fan_out)."""
    sizes = [np.asarray(layers[0][0]).shape[0]]
    chunks = []
    for w, b in layers:
        w = np.asarray(w, dtype=FLOAT)
        b = np.asarray(b, dtype=FLOAT).reshape(-1)
        if w.shape[0] != sizes[-1] or b.shape[0] != w.shape[1]:
            raise ShapeError(f"layer shapes {w.shape} / {b.shape} do not chain from width {sizes[-1]}")
        sizes.append(w.shape[1])
        chunks.extend([w.reshape(-1), b])
    return Model(tuple(sizes), activation, ParameterVector(np.concatenate(chunks), layout_id_for(sizes, activation)))


def _activate(z, activation):
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z, a, activation):
    if activation is Activation.RELU:
        return (z > 0.0).astype(FLOAT)
    return 1.0 - a * a


def _check_inputs(model, inputs):
    x = np.asarray(inputs, dtype=FLOAT)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"inputs of shape {x.shape} for a model with input width {model.input_dim}")
    return x


def _forward_trace(model, x):
    # Keeps pre- and post-activations for backprop.
    layers = model.layers()
    pre, post = [], [x]
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        if not np.all(np.isfinite(z)):
            raise NumericError("non-finite pre-activation", layer=i)
        h = z if i == last else _activate(z, model.activation)
        pre.append(z)
        post.append(h)
    return pre, post


def forward(model, inputs):
    """Logits (n x K) for inputs (n x d)."""
    x = _check_inputs(model, inputs)
    _, post = _forward_trace(model, x)
    return post[-1]


def softmax(logits):
    z = np.asarray(logits, dtype=FLOAT)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=FLOAT)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_labels(logits, labels):
    z = np.asarray(logits, dtype=FLOAT)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or y.ndim != 1 or z.shape[0] != y.shape[0]:
        raise ShapeError(f"logits {z.shape} vs labels {y.shape}")
    if z.shape[0] == 0:
        raise DomainError("cross-entropy of an empty batch")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise DomainError(f"labels outside [0, {z.shape[1]})")
    return z, y


def per_example_ce(logits, labels):
    z, y = _check_labels(logits, labels)
    return -log_softmax(z)[np.arange(y.shape[0]), y]


def loss_ce(logits, labels):
    """Mean softmax cross-entropy; empty batches raise DomainError."""
    return float(np.mean(per_example_ce(logits, labels)))


def _backprop(model, inputs, labels, want_params=True):
    x = _check_inputs(model, inputs)
    pre, post = _forward_trace(model, x)
    z, y = _check_labels(post[-1], labels)
    n = y.shape[0]
    probs = softmax(z)
    per_example = -log_softmax(z)[np.arange(n), y]
    scale = np.full(n, 1.0 / n)
    loss = float(np.sum(per_example * scale))

    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta *= scale[:, None]

    layers = model.layers()
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        if want_params:
            grads[i] = (post[i].T @ delta, delta.sum(axis=0))
        upstream = delta @ w.T
        if not np.all(np.isfinite(upstream)):
            raise NumericError("non-finite gradient", layer=i)
        if i > 0:
            delta = upstream * _activate_grad(pre[i - 1], post[i], model.activation)
        else:
            grad_inputs = upstream

    grad_params = None
    if want_params:
        flat = np.concatenate([part.reshape(-1) for pair in grads for part in pair])
        grad_params = ParameterVector(flat, model.layout_id)
    return loss, grad_params, grad_inputs


def backward(model, batch):
    """
    Exact gradients of the mean cross-entropy on a batch.

    Args:
        model (Model): classifier
        batch (Batch): nonempty batch

    Returns:
        tuple: (loss, grad_params as ParameterVector, grad_inputs n x d)
    """
    return _backprop(model, batch.inputs, batch.labels, want_params=True)


def input_gradient(model, inputs, labels):
    """Loss and gradient of the mean cross-entropy with respect to the inputs only."""
    loss, _, grad_inputs = _backprop(model, inputs, labels, want_params=False)
    return loss, grad_inputs


def predict(model, inputs):
    return np.argmax(forward(model, inputs), axis=1)

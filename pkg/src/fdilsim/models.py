"""Small predictors over flat parameter vectors.

Two model kinds are supported, both classifying into a fixed label space:

* ``logreg`` -- multinomial logistic regression.  Parameters are a single
  weight matrix of shape ``(input_dim + 1, num_classes)`` (bias folded in via
  an augmented input column), flattened in C order.
* ``mlp1`` -- one hidden layer with tanh or relu activation.  Parameters are
  ``W1`` of shape ``(input_dim + 1, hidden_dim)`` followed by ``W2`` of shape
  ``(hidden_dim + 1, num_classes)``, each flattened in C order and
  concatenated.

The loss is the mean softmax cross-entropy over the minibatch, computed with
max-subtraction / log-sum-exp for numerical stability, and the gradient is
written out exactly (no autodiff).  All functions are pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VALID_KINDS = ("logreg", "mlp1")
VALID_ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; parameter count is a function of the fields."""

    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int | None = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.kind == "mlp1":
            if self.hidden_dim is None or self.hidden_dim < 1:
                raise ValueError("mlp1 requires hidden_dim >= 1")
            if self.activation not in VALID_ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")
        elif self.hidden_dim is not None:
            raise ValueError("hidden_dim is only valid for mlp1")


@dataclass
class Minibatch:
    """A batch of inputs and integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-D (batch x input_dim) array")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.inputs.shape[0]:
            raise ValueError("labels must be 1-D and match the batch size")
        if self.inputs.shape[0] < 1:
            raise ValueError("batch must contain at least one sample")
        if self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, indices: np.ndarray) -> "Minibatch":
        return Minibatch(self.inputs[indices], self.labels[indices])


def param_count(spec: ModelSpec) -> int:
    """Length d of the flat parameter vector for ``spec``."""
    if spec.kind == "logreg":
        return (spec.input_dim + 1) * spec.num_classes
    return (spec.input_dim + 1) * spec.hidden_dim + (spec.hidden_dim + 1) * spec.num_classes


def init_params(spec: ModelSpec, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
    """Small deterministic initialization drawn from ``rng``."""
    return scale * rng.standard_normal(param_count(spec))


def _check_inputs(spec: ModelSpec, params: np.ndarray, batch: Minibatch) -> None:
    if params.shape != (param_count(spec),):
        raise ValueError(
            f"params length {params.shape} does not match model size {param_count(spec)}"
        )
    if batch.inputs.shape[1] != spec.input_dim:
        raise ValueError("batch input dimension does not match the model")
    if batch.labels.max() >= spec.num_classes:
        raise ValueError("label out of range for num_classes")
    if not np.isfinite(params).all():
        raise ValueError("non-finite parameter values")
    if not np.isfinite(batch.inputs).all():
        raise ValueError("non-finite batch inputs")


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _unpack(spec: ModelSpec, params: np.ndarray):
    if spec.kind == "logreg":
        return (params.reshape(spec.input_dim + 1, spec.num_classes),)
    n1 = (spec.input_dim + 1) * spec.hidden_dim
    w1 = params[:n1].reshape(spec.input_dim + 1, spec.hidden_dim)
    w2 = params[n1:].reshape(spec.hidden_dim + 1, spec.num_classes)
    return w1, w2


def logits(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Raw class scores for each row of ``inputs``."""
    xa = _augment(inputs)
    if spec.kind == "logreg":
        (w,) = _unpack(spec, params)
        return xa @ w
    w1, w2 = _unpack(spec, params)
    z1 = xa @ w1
    h = np.tanh(z1) if spec.activation == "tanh" else np.maximum(z1, 0.0)
    return _augment(h) @ w2


def loss_and_grad(
    spec: ModelSpec, params: np.ndarray, batch: Minibatch
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient.

    Rows are accumulated in the order they appear in the batch; callers that
    need order-independence must present samples in a canonical order.
    """
    _check_inputs(spec, params, batch)
    xa = _augment(batch.inputs)
    n = xa.shape[0]
    rows = np.arange(n)

    if spec.kind == "logreg":
        (w,) = _unpack(spec, params)
        z = xa @ w
        zs = z - z.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(zs).sum(axis=1))
        loss = float(np.mean(log_norm - zs[rows, batch.labels]))
        p = np.exp(zs)
        p /= p.sum(axis=1, keepdims=True)
        p[rows, batch.labels] -= 1.0
        grad = (xa.T @ p) / n
        return loss, grad.ravel()

    w1, w2 = _unpack(spec, params)
    z1 = xa @ w1
    h = np.tanh(z1) if spec.activation == "tanh" else np.maximum(z1, 0.0)
    ha = _augment(h)
    z = ha @ w2
    zs = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(zs).sum(axis=1))
    loss = float(np.mean(log_norm - zs[rows, batch.labels]))
    p = np.exp(zs)
    p /= p.sum(axis=1, keepdims=True)
    p[rows, batch.labels] -= 1.0
    p /= n
    grad_w2 = ha.T @ p
    dh = p @ w2[:-1].T
    dz1 = dh * (1.0 - h * h) if spec.activation == "tanh" else dh * (z1 > 0.0)
    grad_w1 = xa.T @ dz1
    return loss, np.concatenate([grad_w1.ravel(), grad_w2.ravel()])


def accuracy(spec: ModelSpec, params: np.ndarray, dataset: Minibatch) -> float:
    """Fraction of samples whose argmax logit matches the label.

    Argmax ties break toward the lowest class index.
    """
    _check_inputs(spec, params, dataset)
    predictions = np.argmax(logits(spec, params, dataset.inputs), axis=1)
    return float(np.mean(predictions == dataset.labels))

"""Small classifiers with exact per-sample losses and gradients.

Two architectures share one flat parameter vector layout:

* ``Logistic``: ``W (K x D)``, ``b (K)``.
* ``Mlp``: ``W1 (H x D)``, ``b1 (H)``, ``W2 (K x H)``, ``b2 (K)`` with ReLU
  hidden units and inverted dropout on the hidden layer.

A dropout seed selects one hidden-unit mask that is shared by every sample
of the batch, so losses, per-sample gradients and weighted gradients all refer
to the same realized network. ``seed=None`` means evaluation mode.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from hvlearn.data import Batch
from hvlearn.errors import ShapeError


class ModelKind(enum.Enum):
    LOGISTIC = "logistic"
    MLP = "mlp"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    dropout_prob: float = 0.0

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 1:
            raise ShapeError("input_dim and num_classes must be >= 1")
        if self.kind is ModelKind.MLP and self.hidden_dim < 1:
            raise ShapeError("an MLP needs hidden_dim >= 1")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")

    @property
    def num_params(self) -> int:
        d, k, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.kind is ModelKind.LOGISTIC:
            return k * d + k
        return h * d + h + k * h + k


def _unpack(spec: ModelSpec, params: np.ndarray):
    p = np.asarray(params, dtype=np.float64)
    if p.shape != (spec.num_params,):
        raise ShapeError(f"expected {spec.num_params} parameters, got shape {p.shape}")
    d, k, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    if spec.kind is ModelKind.LOGISTIC:
        return p[: k * d].reshape(k, d), p[k * d :]
    o = 0
    w1 = p[o : o + h * d].reshape(h, d)
    o += h * d
    b1 = p[o : o + h]
    o += h
    w2 = p[o : o + k * h].reshape(k, h)
    o += k * h
    return w1, b1, w2, p[o:]


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""

    def glorot(fan_out, fan_in):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_out, fan_in)).ravel()

    d, k, h = spec.input_dim, spec.num_classes, spec.hidden_dim
    if spec.kind is ModelKind.LOGISTIC:
        return np.concatenate([glorot(k, d), np.zeros(k)])
    return np.concatenate([glorot(h, d), np.zeros(h), glorot(k, h), np.zeros(k)])


def dropout_scale(spec: ModelSpec, seed: int | None) -> np.ndarray | None:
    """Shared hidden-unit scale vector (0 or 1/(1-p)), or None when inactive."""
    if spec.kind is not ModelKind.MLP or seed is None or spec.dropout_prob == 0.0:
        return None
    keep = np.random.default_rng(seed).random(spec.hidden_dim) >= spec.dropout_prob
    return keep / (1.0 - spec.dropout_prob)


def _check_batch(spec: ModelSpec, batch: Batch) -> None:
    if batch.inputs.ndim != 2 or batch.inputs.shape[1] != spec.input_dim:
        raise ShapeError(
            f"inputs of shape {batch.inputs.shape} do not match input_dim={spec.input_dim}"
        )
    if batch.targets.size and (batch.targets.min() < 0 or batch.targets.max() >= spec.num_classes):
        raise ShapeError("target labels out of range for num_classes")


def _forward(spec, params, batch, seed):
    _check_batch(spec, batch)
    parts = _unpack(spec, params)
    x = batch.inputs
    if spec.kind is ModelKind.LOGISTIC:
        w, b = parts
        return x @ w.T + b, (x,)
    w1, b1, w2, b2 = parts
    pre = x @ w1.T + b1
    scale = dropout_scale(spec, seed)
    hid = np.maximum(pre, 0.0)
    if scale is not None:
        hid = hid * scale
    return hid @ w2.T + b2, (x, pre, hid, scale)


def logits(spec: ModelSpec, params, batch: Batch, seed: int | None = None) -> np.ndarray:
    return _forward(spec, params, batch, seed)[0]


def _softmax_xent(z: np.ndarray, y: np.ndarray):
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(z.shape[0])
    # both terms are >= 0, so the sum is exactly nonnegative
    loss = (zmax[:, 0] - z[rows, y]) + np.log(s[:, 0])
    return loss, e / s


def per_sample_losses(spec: ModelSpec, params, batch: Batch, seed: int | None = None) -> np.ndarray:
    """Softmax cross-entropy of every sample."""
    z, _ = _forward(spec, params, batch, seed)
    return _softmax_xent(z, batch.targets)[0]


def _output_delta(z, y, weights=None):
    loss, prob = _softmax_xent(z, y)
    dz = prob
    dz[np.arange(z.shape[0]), y] -= 1.0
    if weights is not None:
        dz = dz * weights[:, None]
    return loss, dz


def per_sample_gradients(spec: ModelSpec, params, batch: Batch, seed: int | None = None) -> np.ndarray:
    """Gradient matrix with row ``i`` equal to the gradient of sample ``i``'s loss.

    Memory is ``N x num_params``; use :func:`weighted_gradient` in training loops.
    """
    z, cache = _forward(spec, params, batch, seed)
    _, dz = _output_delta(z, batch.targets)
    n = z.shape[0]
    if spec.kind is ModelKind.LOGISTIC:
        (x,) = cache
        return np.concatenate([np.einsum("nk,nd->nkd", dz, x).reshape(n, -1), dz], axis=1)
    x, pre, hid, scale = cache
    _, _, w2, _ = _unpack(spec, params)
    dhid = dz @ w2
    if scale is not None:
        dhid = dhid * scale
    dpre = dhid * (pre > 0)
    return np.concatenate(
        [
            np.einsum("nh,nd->nhd", dpre, x).reshape(n, -1),
            dpre,
            np.einsum("nk,nh->nkh", dz, hid).reshape(n, -1),
            dz,
        ],
        axis=1,
    )


def weighted_gradient(
    spec: ModelSpec, params, batch: Batch, weights, seed: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(losses, sum_i w_i grad l_i)`` in a single backward pass.

    ``weights`` are treated as constants; this equals
    ``aggregate_gradient(per_sample_gradients(...), weights)`` without building
    the per-sample matrix.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != batch.inputs.shape[0]:
        raise ShapeError(f"{w.size} weights for a batch of {batch.inputs.shape[0]}")
    z, cache = _forward(spec, params, batch, seed)
    loss, dz = _output_delta(z, batch.targets, w)
    if spec.kind is ModelKind.LOGISTIC:
        (x,) = cache
        return loss, np.concatenate([(dz.T @ x).ravel(), dz.sum(axis=0)])
    x, pre, hid, scale = cache
    _, _, w2, _ = _unpack(spec, params)
    dhid = dz @ w2
    if scale is not None:
        dhid = dhid * scale
    dpre = dhid * (pre > 0)
    grad = np.concatenate([(dpre.T @ x).ravel(), dpre.sum(axis=0), (dz.T @ hid).ravel(), dz.sum(axis=0)])
    return loss, grad


def predict(spec: ModelSpec, params, batch: Batch) -> np.ndarray:
    return np.argmax(logits(spec, params, batch), axis=1)


def classification_error(spec: ModelSpec, params, batch: Batch) -> float:
    """Fraction of misclassified samples (evaluation mode)."""
    if batch.size == 0:
        return 0.0
    return float(np.mean(predict(spec, params, batch) != batch.targets))


def finite_diff_gradient(loss_fn: Callable[[np.ndarray], float], params, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    theta = np.array(params, dtype=np.float64)
    grad = np.empty_like(theta)
    for k in range(theta.size):
        orig = theta[k]
        theta[k] = orig + h
        up = loss_fn(theta.copy())
        theta[k] = orig - h
        down = loss_fn(theta.copy())
        theta[k] = orig
        grad[k] = (up - down) / (2.0 * h)
    return grad

"""Dense-network numerics for the autoencoders.

Everything here is double precision and batch size one. Forward passes are
pure; gradients are computed by hand with the chain rule and checked against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import DomainError, ShapeError, TrainingError

ACTIVATIONS = ("sigmoid", "identity")

# Below this reconstruction error the RMSE gradient is defined as zero.
RMSE_GRAD_FLOOR = 1e-12


def sigmoid(a: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(a, dtype=float)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _as_vector(x, name="input") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be a vector, got shape {v.shape}")
    return v


@dataclass
class DenseLayer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float, ndmin=2)
        self.biases = np.array(self.biases, dtype=float, ndmin=1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and biases {self.biases.shape} disagree"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise DomainError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def random(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
               activation: str = "sigmoid") -> "DenseLayer":
        """Uniform init in [-1/sqrt(in_dim), 1/sqrt(in_dim)], zero biases."""
        bound = 1.0 / np.sqrt(in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        return cls(w, np.zeros(out_dim), activation)


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    x = _as_vector(x)
    if x.shape[0] != layer.in_dim:
        raise ShapeError(f"layer expects {layer.in_dim} inputs, got {x.shape[0]}")
    a = layer.weights @ x + layer.biases
    if layer.activation == "sigmoid":
        return sigmoid(a)
    return a


def _activation_derivative(layer: DenseLayer, out: np.ndarray) -> np.ndarray:
    if layer.activation == "sigmoid":
        return out * (1.0 - out)
    return np.ones_like(out)


@dataclass
class Autoencoder:
    encoder: DenseLayer
    decoder: DenseLayer

    def __post_init__(self):
        d = self.encoder.in_dim
        if self.decoder.out_dim != d or self.decoder.in_dim != self.encoder.out_dim:
            raise ShapeError(
                f"decoder {self.decoder.weights.shape} does not invert encoder "
                f"{self.encoder.weights.shape}"
            )
        if d > 1 and self.encoder.out_dim >= d:
            raise ShapeError(f"hidden size {self.encoder.out_dim} must be below input size {d}")

    @property
    def input_dim(self) -> int:
        return self.encoder.in_dim

    @property
    def hidden_dim(self) -> int:
        return self.encoder.out_dim

    @classmethod
    def random(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "Autoencoder":
        return cls(DenseLayer.random(input_dim, hidden_dim, rng),
                   DenseLayer.random(hidden_dim, input_dim, rng))

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (views, not copies)."""
        return [self.encoder.weights, self.encoder.biases,
                self.decoder.weights, self.decoder.biases]

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        for dst, src in zip(self.params(), params):
            if dst.shape != np.shape(src):
                raise ShapeError(f"parameter shape {np.shape(src)} != {dst.shape}")
            dst[...] = src


def autoencoder_forward(ae: Autoencoder, x) -> np.ndarray:
    return dense_forward(ae.decoder, dense_forward(ae.encoder, x))


def reconstruction_rmse(x, x_hat) -> float:
    x = _as_vector(x)
    x_hat = _as_vector(x_hat, "reconstruction")
    if x.shape != x_hat.shape:
        raise ShapeError(f"length mismatch: {x.shape[0]} vs {x_hat.shape[0]}")
    if x.size == 0:
        raise DomainError("RMSE of empty vectors is undefined")
    return float(np.sqrt(np.mean((x - x_hat) ** 2)))


def rmse_gradient(x, x_hat) -> np.ndarray:
    """d RMSE / d x; the gradient w.r.t. x_hat is its negation."""
    x = _as_vector(x)
    x_hat = _as_vector(x_hat, "reconstruction")
    e = reconstruction_rmse(x, x_hat)
    if e <= RMSE_GRAD_FLOOR:
        return np.zeros_like(x)
    return (x - x_hat) / (x.size * e)


@dataclass
class GradientBundle:
    """Gradients of one autoencoder's RMSE, ordered like ``Autoencoder.params``."""

    param_grads: list[np.ndarray]
    input_grad: np.ndarray
    value: float = 0.0

    def scaled(self, factor: float) -> "GradientBundle":
        return GradientBundle([g * factor for g in self.param_grads],
                              self.input_grad * factor, self.value)


def backprop_params(ae: Autoencoder, x) -> GradientBundle:
    """Gradients of RMSE(x, ae(x)) w.r.t. every weight, bias and the input."""
    x = _as_vector(x)
    if x.shape[0] != ae.input_dim:
        raise ShapeError(f"autoencoder expects {ae.input_dim} inputs, got {x.shape[0]}")
    h = dense_forward(ae.encoder, x)
    y = dense_forward(ae.decoder, h)
    err = reconstruction_rmse(x, y)
    g_x_direct = rmse_gradient(x, y)

    d_a2 = -g_x_direct * _activation_derivative(ae.decoder, y)
    d_h = ae.decoder.weights.T @ d_a2
    d_a1 = d_h * _activation_derivative(ae.encoder, h)
    grads = [np.outer(d_a1, x), d_a1, np.outer(d_a2, h), d_a2]
    input_grad = g_x_direct + ae.encoder.weights.T @ d_a1
    return GradientBundle(grads, input_grad, err)


class DifferentiableScalar(Protocol):
    def __call__(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...


def input_gradient(f: DifferentiableScalar, x) -> np.ndarray:
    x = _as_vector(x)
    g = np.asarray(f.gradient(x), dtype=float)
    if g.shape != x.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match input {x.shape}")
    return g


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             learning_rate: float) -> list[np.ndarray]:
    if learning_rate < 0:
        raise TrainingError(f"learning rate must be non-negative, got {learning_rate}")
    if len(params) != len(grads):
        raise ShapeError("parameter and gradient lists differ in length")
    out = []
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=float)
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient")
        out.append(np.asarray(p, dtype=float) - learning_rate * g)
    return out


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=float, ndmin=1)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@dataclass
class RmseAgainst:
    """RMSE to a fixed reference vector, as a differentiable scalar."""

    reference: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __call__(self, x) -> float:
        return reconstruction_rmse(x, self.reference)

    def gradient(self, x) -> np.ndarray:
        return rmse_gradient(x, self.reference)

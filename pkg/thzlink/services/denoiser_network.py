from typing import List, Optional, Tuple

import numpy as np

from thzlink.schemas.enums import Activation
from thzlink.schemas.surrogate import ModelSpec


def time_embedding(t, size: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps t, shape (n, size)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    half = size // 2
    frequencies = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    angles = t[:, None] * frequencies[None, :]
    embedding = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if embedding.shape[1] < size:
        embedding = np.pad(embedding, ((0, 0), (0, size - embedding.shape[1])))
    return embedding


def _activate(z: np.ndarray, kind: Activation) -> np.ndarray:
    if kind == Activation.TANH:
        return np.tanh(z)
    return z / (1.0 + np.exp(-z))


def _activate_grad(z: np.ndarray, kind: Activation) -> np.ndarray:
    if kind == Activation.TANH:
        return 1.0 - np.tanh(z) ** 2
    sig = 1.0 / (1.0 + np.exp(-z))
    return sig * (1.0 + z * (1.0 - sig))


class DenoiserNetwork:
    """Fully connected noise regressor ẑ(x_t, c, t) with hand-written backpropagation"""

    def __init__(self, spec: ModelSpec, weights: List[np.ndarray], biases: List[np.ndarray]):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]

    @classmethod
    def initialize(cls, spec: ModelSpec, rng: np.random.Generator) -> "DenoiserNetwork":
        widths = [spec.input_size] + list(spec.hidden_widths) + [spec.x_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths, widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases)

    @property
    def parameters(self) -> List[np.ndarray]:
        return self.weights + self.biases

    def inputs(self, x_t: np.ndarray, c: np.ndarray, t) -> np.ndarray:
        x_t = np.atleast_2d(x_t)
        c = np.atleast_2d(c)
        t = np.broadcast_to(np.atleast_1d(t), (x_t.shape[0],))
        return np.hstack([x_t, c, time_embedding(t, self.spec.time_embedding_size)])

    def forward(self, x_t: np.ndarray, c: np.ndarray, t) -> Tuple[np.ndarray, list]:
        """Predicted noise and the activations needed by backward()."""
        a = self.inputs(x_t, c, t)
        cache = [(a, None)]
        last = len(self.weights) - 1
        for layer, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W.T + b
            if layer < last:
                a = _activate(z, self.spec.activation)
                cache.append((a, z))
            else:
                a = z
        return a, cache

    def predict(self, x_t: np.ndarray, c: np.ndarray, t) -> np.ndarray:
        return self.forward(x_t, c, t)[0]

    def backward(self, cache: list, d_out: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        grad_w: List[Optional[np.ndarray]] = [None] * len(self.weights)
        grad_b: List[Optional[np.ndarray]] = [None] * len(self.biases)
        delta = d_out
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in, _ = cache[layer]
            grad_w[layer] = delta.T @ a_in
            grad_b[layer] = delta.sum(axis=0)
            if layer > 0:
                _, z_in = cache[layer]
                delta = (delta @ self.weights[layer]) * _activate_grad(z_in, self.spec.activation)
        return grad_w, grad_b

    def loss_and_gradients(self, x_t: np.ndarray, c: np.ndarray, t, z: np.ndarray):
        """Mean squared noise-prediction error and its parameter gradients."""
        prediction, cache = self.forward(x_t, c, t)
        residual = prediction - z
        loss = float(np.mean(residual ** 2))
        grad_w, grad_b = self.backward(cache, 2.0 * residual / residual.size)
        return loss, grad_w, grad_b

    def loss(self, x_t: np.ndarray, c: np.ndarray, t, z: np.ndarray) -> float:
        return float(np.mean((self.predict(x_t, c, t) - z) ** 2))

    def gradient_check(
        self, x_t: np.ndarray, c: np.ndarray, t, z: np.ndarray, step: float = 1e-5, floor: float = 1e-3
    ) -> float:
        """Max error between backprop gradients and central differences, relative to max(|g|, floor)."""
        _, grad_w, grad_b = self.loss_and_gradients(x_t, c, t, z)
        worst = 0.0
        for params, grads in ((self.weights, grad_w), (self.biases, grad_b)):
            for P, G in zip(params, grads):
                for index in np.ndindex(P.shape):
                    saved = P[index]
                    P[index] = saved + step
                    upper = self.loss(x_t, c, t, z)
                    P[index] = saved - step
                    lower = self.loss(x_t, c, t, z)
                    P[index] = saved
                    numeric = (upper - lower) / (2.0 * step)
                    scale = max(abs(numeric), abs(G[index]), floor)
                    worst = max(worst, abs(numeric - G[index]) / scale)
        return worst

"""Trainable building blocks: linear layers and small MLPs."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, matmul, add, relu


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear:
    """Affine map x @ W + b with Glorot-uniform initialization."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 zero_init: bool = False, name: str = "linear"):
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            w = glorot_uniform(rng, n_in, n_out, (n_in, n_out))
        self.weight = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(n_out), requires_grad=True, name=f"{name}.bias")
        self.n_in = n_in
        self.n_out = n_out

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.data + self.bias.data

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    """ReLU MLP; the output layer can be zero-initialized (identity start)."""

    def __init__(self, n_in: int, hidden: list[int], n_out: int,
                 rng: np.random.Generator, zero_init_output: bool = False,
                 name: str = "mlp"):
        sizes = [n_in] + list(hidden)
        self.hidden_layers = [
            Linear(sizes[i], sizes[i + 1], rng, name=f"{name}.hidden{i}")
            for i in range(len(hidden))
        ]
        self.out_layer = Linear(sizes[-1], n_out, rng, zero_init=zero_init_output,
                                name=f"{name}.out")

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.hidden_layers:
            x = relu(layer(x))
        return self.out_layer(x)

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        for layer in self.hidden_layers:
            x = np.maximum(layer.forward_np(x), 0.0)
        return self.out_layer.forward_np(x)

    def parameters(self) -> list[Tensor]:
        params = []
        for layer in self.hidden_layers:
            params.extend(layer.parameters())
        params.extend(self.out_layer.parameters())
        return params

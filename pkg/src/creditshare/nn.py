"""Small neural-net building blocks on top of the autodiff tensors."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def xavier_uniform(n_in, n_out, rng):
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out))


class Linear:
    def __init__(self, n_in, n_out, rng):
        self.W = Tensor(xavier_uniform(n_in, n_out, rng), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x):
        return x @ self.W + self.b

    def forward_np(self, x):
        return x @ self.W.data + self.b.data

    def params(self):
        return [self.W, self.b]


class MLP:
    """Fully connected net with a fixed activation on hidden layers."""

    def __init__(self, n_in, hidden, n_out, rng, activation="tanh"):
        sizes = [n_in, *hidden, n_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.activation = activation
        self._act = ad.tanh if activation == "tanh" else ad.relu
        self._act_np = np.tanh if activation == "tanh" else lambda x: np.maximum(x, 0.0)

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = self._act(layer(x))
        return self.layers[-1](x)

    def forward_np(self, x):
        for layer in self.layers[:-1]:
            x = self._act_np(layer.forward_np(x))
        return self.layers[-1].forward_np(x)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


class LayerNorm:
    def __init__(self, dim, eps=1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / ad.sqrt(var + self.eps) * self.gain + self.bias

    def params(self):
        return [self.gain, self.bias]


def params_to_vector(params):
    return np.concatenate([p.data.ravel() for p in params])


def vector_to_params(vec, params):
    offset = 0
    for p in params:
        n = p.data.size
        p.data = vec[offset:offset + n].reshape(p.shape).copy()
        offset += n
    if offset != vec.size:
        raise ValueError("parameter vector size mismatch")

"""Sequential network container with seeded initialization."""

from __future__ import annotations

import numpy as np

from .layers import Dropout, Layer, Parameter, ShapeError


class NumericsError(RuntimeError):
    """Non-finite loss or gradient encountered during training."""


class Network:
    """An ordered stack of layers over a fixed input shape (sans batch).

    Weight initialization and dropout masks all come from one generator
    seeded at construction, so two networks built with the same seed are
    byte-identical and train identically on identical data.
    """

    def __init__(self, layers: list[Layer], input_shape: tuple, seed: int = 0, dtype=np.float32):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        shape = self.input_shape
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = self.rng
            shape = layer.build(shape, self.rng, self.dtype)
        self.output_shape = shape

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        x = np.asarray(x)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"network input: expected [N, {', '.join(map(str, self.input_shape))}], got {x.shape}"
            )
        x = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad, dtype=self.dtype)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0

    def reseed(self, seed: int) -> None:
        """Re-seed the runtime generator (dropout masks) without touching weights."""
        self.rng = np.random.default_rng(seed)
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = self.rng

    def layer_specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

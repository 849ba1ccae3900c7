"""Adam optimizer and the single training step."""

from __future__ import annotations

import math

import numpy as np

from .losses import ctc_loss_with_grad, sparse_ce_with_grad
from .network import Network, NumericsError


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.value -= (self.lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)


def train_step(net: Network, batch: np.ndarray, targets, adam: Adam, loss_kind: str = "ce") -> float:
    """One forward/backward pass plus an Adam update; returns the pre-update loss.

    ``targets`` is an int array of class indices for ``loss_kind="ce"`` or a
    sequence of per-sample symbol index sequences for ``loss_kind="ctc"``.
    """
    logits = net.forward(batch, training=True)
    if loss_kind == "ce":
        loss, grad = sparse_ce_with_grad(logits, targets)
    elif loss_kind == "ctc":
        n = logits.shape[0]
        grad = np.zeros_like(logits)
        total = 0.0
        for i in range(n):
            li, gi = ctc_loss_with_grad(logits[i], targets[i])
            total += li
            grad[i] = gi
        loss = total / n
        grad /= n
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if not math.isfinite(loss):
        raise NumericsError(f"non-finite loss: {loss}")
    net.zero_grad()
    net.backward(grad)
    adam.step()
    return loss

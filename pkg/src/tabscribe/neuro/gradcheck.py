"""Finite-difference validation of analytic gradients."""

from __future__ import annotations

import numpy as np

from .network import Network


def grad_check(net: Network, loss_with_grad, x: np.ndarray, h: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_with_grad(logits) -> (loss, dloss/dlogits)``. The network should be
    built in float64; every parameter element of (a downsized) ``net`` is
    perturbed, so keep instances small.
    """
    if net.dtype != np.float64:
        raise ValueError("grad_check requires a float64 network")

    logits = net.forward(x, training=True)
    _, dlogits = loss_with_grad(logits)
    net.zero_grad()
    net.backward(dlogits)
    analytic = [p.grad.copy() for p in net.parameters()]

    def loss_at() -> float:
        return loss_with_grad(net.forward(x, training=True))[0]

    max_rel = 0.0
    for p, a in zip(net.parameters(), analytic):
        flat = p.value.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_at()
            flat[i] = orig - h
            lm = loss_at()
            flat[i] = orig
            numeric = (lp - lm) / (2 * h)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            max_rel = max(max_rel, abs(aflat[i] - numeric) / denom)
    return max_rel

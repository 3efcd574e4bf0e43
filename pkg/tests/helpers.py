"""Shared test oracles, independent of the implementation paths they check."""

from __future__ import annotations

import numpy as np

from fdilsim import Minibatch, ModelSpec, loss_and_grad


def central_difference_grad(
    spec: ModelSpec, params: np.ndarray, batch: Minibatch, step: float = 1e-5
) -> np.ndarray:
    """Finite-difference gradient oracle, one coordinate at a time."""
    grad = np.empty_like(params)
    for i in range(params.size):
        hi = params.copy()
        lo = params.copy()
        hi[i] += step
        lo[i] -= step
        loss_hi, _ = loss_and_grad(spec, hi, batch)
        loss_lo, _ = loss_and_grad(spec, lo, batch)
        grad[i] = (loss_hi - loss_lo) / (2.0 * step)
    return grad


def gradient_descent_minimize(grad_fn, x0: np.ndarray, step: float, iters: int = 300) -> np.ndarray:
    """Plain gradient descent; converges to float precision on smooth quadratics."""
    x = x0.astype(float).copy()
    for _ in range(iters):
        x = x - step * grad_fn(x)
    return x

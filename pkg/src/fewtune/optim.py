"""Bias-corrected Adam over named parameter arrays. No weight decay."""

from __future__ import annotations

import numpy as np

from .errors import NumericError, UsageError


class AdamState:
    """First/second moment accumulators plus the step counter.

    One state instance owns the moments for a fixed set of named parameters;
    ``t`` increments by exactly one per step and the second moments stay
    non-negative by construction.
    """

    def __init__(self, shapes: dict[str, tuple[int, ...]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise UsageError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(shape) for k, shape in shapes.items()}
        self.v = {k: np.zeros(shape) for k, shape in shapes.items()}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """One update; returns new parameter arrays and advances the state."""
    if set(params) != set(state.m) or set(grads) != set(state.m):
        raise UsageError(
            f"parameter names {sorted(params)} / gradient names {sorted(grads)} "
            f"do not match optimizer state {sorted(state.m)}"
        )
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    out = {}
    for key in params:
        g = grads[key]
        if params[key].shape != g.shape:
            raise UsageError(f"gradient for {key!r} has shape {g.shape}, parameter is {params[key].shape}")
        state.m[key] = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[key] / bias1
        v_hat = state.v[key] / bias2
        out[key] = params[key] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


def check_finite_params(params: dict[str, np.ndarray], step: int) -> None:
    """Abort with the offending step index if an update produced NaN/Inf."""
    for key, value in params.items():
        if not np.all(np.isfinite(value)):
            raise NumericError(f"parameter {key!r} became non-finite after step {step}")

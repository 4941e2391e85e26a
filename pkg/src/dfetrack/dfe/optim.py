"""Adamax: adaptive moments with an infinity-norm second accumulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError


@dataclass
class AdamaxState:
    """Per-parameter first moment and infinity-norm accumulators."""

    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    u: list[np.ndarray] = field(default_factory=list)

    @staticmethod
    def for_params(params: list[np.ndarray], lr: float = 0.002, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamaxState":
        return AdamaxState(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
            m=[np.zeros_like(p) for p in params],
            u=[np.zeros_like(p) for p in params],
        )


def adamax_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamaxState) -> AdamaxState:
    """One in-place update.

    m <- beta1*m + (1-beta1)*g;  u <- max(beta2*u, |g|);
    p <- p - lr/(1 - beta1^t) * m / (u + eps).
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise NumericError(
            f"optimizer state holds {len(state.m)} tensors, got "
            f"{len(params)} params / {len(grads)} grads"
        )
    state.step += 1
    correction = 1.0 - state.beta1**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {i}; training aborted")
        m = state.m[i]
        u = state.u[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        np.maximum(state.beta2 * u, np.abs(g), out=u)
        p -= (state.lr / correction) * m / (u + state.eps)
    return state

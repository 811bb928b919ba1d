"""Gradient-descent update rules: plain SGD and adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvariantViolation


def _check(params: np.ndarray, grad: np.ndarray) -> None:
    if params.shape != grad.shape:
        raise InvariantViolation(f"gradient shape {grad.shape} != parameter shape {params.shape}")


def sgd_step(params, grad, lr: float) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    _check(params, grad)
    return params - lr * grad


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.lr}")


def adam_step(state: OptimizerState, params, grad) -> np.ndarray:
    """One adam update. Mutates ``state`` (moments and step count)."""
    if state.kind != "adam":
        raise ConfigurationError(f"adam_step on a {state.kind!r} state")
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    _check(params, grad)
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    elif state.m.shape != params.shape:
        raise InvariantViolation(f"moment shape {state.m.shape} != parameter shape {params.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1**state.t)
    v_hat = state.v / (1 - state.beta2**state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class Optimizer:
    """Holds one :class:`OptimizerState` per named parameter array."""

    kind: str = "adam"
    lr: float = 0.01
    states: dict[str, OptimizerState] = field(default_factory=dict)

    def __post_init__(self) -> None:
        OptimizerState(self.kind, self.lr)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        new = {}
        for name, value in params.items():
            g = grads[name]
            if self.kind == "sgd":
                new[name] = sgd_step(value, g, self.lr)
            else:
                state = self.states.setdefault(name, OptimizerState("adam", self.lr))
                new[name] = adam_step(state, value, g)
        return new

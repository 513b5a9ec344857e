#!/usr/bin/env python3

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from src.autograd.tensor_core import Tensor
from src.errors import NumericError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter path"""
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, applied in place to the parameter tensors"""
    for name, tensor in params.items():
        if name not in grads:
            raise ShapeError(f"No gradient for parameter '{name}'")
        g = grads[name]
        if g.shape != tensor.shape:
            raise ShapeError(f"Gradient for '{name}' has shape {g.shape}, parameter {tensor.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"Non-finite gradient for parameter '{name}'")

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step

    for name, tensor in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        tensor.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


class AdamOptimizer:
    """Holds the parameter set, learning rate and moment state across steps"""

    def __init__(self, params: Mapping[str, Tensor], learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.state = AdamState(beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self, grads: Mapping[str, np.ndarray]):
        adam_step(self.params, grads, self.state, self.learning_rate)

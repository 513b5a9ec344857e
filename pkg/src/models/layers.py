#!/usr/bin/env python3

import logging
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.autograd.tensor_core import Tensor, as_tensor, dropout, parameter
from src.errors import ShapeError
from src.processors.series_ops import series_decomp

logger = logging.getLogger(__name__)


class Module:
    """Parameter container; parameters are discovered from attributes in definition order"""

    def named_parameters(self, prefix: str = '') -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.grad_tracked:
                params[path] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(f"{path}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{path}.{i}."))
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())


class Linear(Module):
    """y = x W + b with W of shape (in, out); uniform(+-1/sqrt(fan_in)) initialisation"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 zero_init: bool = False):
        self.in_features = in_features
        self.out_features = out_features
        if zero_init:
            weight = np.zeros((in_features, out_features))
            bias = np.zeros(out_features)
        else:
            bound = 1.0 / np.sqrt(in_features)
            weight = rng.uniform(-bound, bound, size=(in_features, out_features))
            bias = rng.uniform(-bound, bound, size=out_features)
        self.weight = parameter(weight)
        self.bias = parameter(bias)

    def __call__(self, x: Any) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects {self.in_features} input features, got {x.shape[-1]}")
        return x @ self.weight + self.bias


class FeedForward(Module):
    """Two linear maps with ReLU in between"""

    def __init__(self, d_model: int, d_ff: int, rate: float, rng: np.random.Generator):
        self.linear1 = Linear(d_model, d_ff, rng)
        self.linear2 = Linear(d_ff, d_model, rng)
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        hidden = dropout(self.linear1(x).relu(), self.rate, self.rng, training)
        return dropout(self.linear2(hidden), self.rate, self.rng, training)


class SeriesDecompBlock(Module):
    """In-network series decomposition; optionally reports each split to a trace list"""

    def __init__(self, window: int, stage: str):
        self.window = window
        self.stage = stage

    def __call__(self, x: Tensor, trace: Optional[List[Dict[str, Any]]] = None) -> Tuple[Tensor, Tensor]:
        pair = series_decomp(x, self.window, axis=1)
        if trace is not None:
            trace.append({
                'stage': self.stage,
                'input': x.data,
                'seasonal': pair.seasonal.data,
                'trend': pair.trend.data,
            })
        return pair.seasonal, pair.trend


class DataEmbedding(Module):
    """Value embedding plus time-stamp embedding; no positional term"""

    def __init__(self, n_channels: int, n_time_features: int, d_model: int, rate: float,
                 rng: np.random.Generator):
        self.value_embedding = Linear(n_channels, d_model, rng)
        self.time_embedding = Linear(n_time_features, d_model, rng)
        self.rate = rate
        self.rng = rng

    def __call__(self, values: Any, marks: Any, training: bool = False) -> Tensor:
        values, marks = as_tensor(values), as_tensor(marks)
        if values.shape[:-1] != marks.shape[:-1]:
            raise ShapeError(f"Values {values.shape} and time marks {marks.shape} differ in length")
        embedded = self.value_embedding(values) + self.time_embedding(marks)
        return dropout(embedded, self.rate, self.rng, training)

#!/usr/bin/env python3

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterator, List, Optional

import numpy as np

from src.autograd import tensor_core as tc
from src.autograd.tensor_core import Tensor, as_tensor, softmax
from src.errors import ConfigError, ShapeError
from src.models.layers import Linear, Module
from src.processors.series_ops import CorrelationProfile, cross_correlation, roll, time_axis

logger = logging.getLogger(__name__)

# Profile values equal to this relative precision count as ties (smaller lag wins).
TIE_PRECISION = 1e-9


class MechanismKind(str, Enum):
    AUTOCORR_STANDARD = 'autocorr_standard'
    AUTOCORR_SPEEDUP = 'autocorr_speedup'
    FULL_ATTENTION = 'full_attention'

    @classmethod
    def parse(cls, value: Any) -> 'MechanismKind':
        try:
            return cls(value)
        except ValueError:
            choices = ', '.join(kind.value for kind in cls)
            raise ConfigError(f"Unknown mechanism {value!r}; expected one of: {choices}")


@dataclass
class DelaySelection:
    delays: List[int]
    weights: np.ndarray
    k: int = field(init=False)

    def __post_init__(self):
        self.delays = [int(d) for d in self.delays]
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.k = len(self.delays)
        if self.k < 1 or self.weights.shape != (self.k,):
            raise ShapeError(f"Selection needs k >= 1 delays with one weight each, got "
                             f"{self.k} delays and weights of shape {self.weights.shape}")
        if len(set(self.delays)) != self.k:
            raise ShapeError(f"Delays must be distinct, got {self.delays}")
        if min(self.delays) < 0:
            raise ShapeError(f"Delays must be non-negative, got {self.delays}")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ShapeError(f"Weights must be non-negative and sum to 1, got {self.weights.tolist()}")


def topk_count(factor: float, length: int, clamp: bool = False) -> int:
    """k = floor(c * ln L), natural logarithm.

    With clamp, k is forced into [1, L] so degenerate lengths (L = 1) still
    aggregate lag 0; without it k < 1 is an error.
    """
    if factor <= 0:
        raise ConfigError(f"Autocorrelation factor c must be positive, got {factor}")
    if length < 1:
        raise ShapeError(f"Series length must be >= 1, got {length}")
    k = int(math.floor(factor * math.log(length)))
    if clamp:
        return max(1, min(k, length))
    if k < 1:
        raise ConfigError(f"floor(c * ln L) = {k} with c={factor}, L={length}; "
                          f"use a larger factor c or a longer series")
    return min(k, length)


def rank_lags(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Lags ordered by decreasing correlation, ties broken by smaller lag"""
    scale = np.max(np.abs(values), axis=axis, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    keys = np.round(values / scale / TIE_PRECISION)
    return np.argsort(-keys, axis=axis, kind='stable')


def select_topk_delays(profile: CorrelationProfile, factor: float,
                       length: Optional[int] = None) -> DelaySelection:
    length = profile.series_length if length is None else length
    if length != profile.series_length:
        raise ShapeError(f"Profile length {profile.series_length} differs from L={length}")
    k = topk_count(factor, length)
    delays = rank_lags(profile.values)[:k]
    weights = softmax(profile.values[delays]).data
    return DelaySelection(delays=delays.tolist(), weights=weights)


def time_delay_aggregate(values: Any, selection: DelaySelection, axis: Optional[int] = None) -> Tensor:
    """Sum of weight_i * Roll(V, delay_i)"""
    values = as_tensor(values)
    axis = time_axis(values, axis)
    length = values.shape[axis]
    if any(d >= length for d in selection.delays):
        raise ShapeError(f"Delays {selection.delays} invalid for series length {length}")
    out = None
    for delay, weight in zip(selection.delays, selection.weights):
        term = roll(values, delay, axis=axis) * float(weight)
        out = term if out is None else out + term
    return out


def resize_kv(x: Any, target_length: int, axis: Optional[int] = None) -> Tensor:
    """Truncate to the first L rows or zero-fill up to L rows"""
    x = as_tensor(x)
    axis = time_axis(x, axis)
    source_length = x.shape[axis]
    if source_length < 1 or target_length < 1:
        raise ShapeError(f"Cannot resize length {source_length} to {target_length}")
    if source_length == target_length:
        return x
    if source_length > target_length:
        index = [slice(None)] * x.ndim
        index[axis] = slice(0, target_length)
        return x[tuple(index)]
    fill_shape = list(x.shape)
    fill_shape[axis] = target_length - source_length
    return tc.concat([x, Tensor(np.zeros(fill_shape))], axis=axis)


# --- delay freezing for gradient probes ----------------------------------

class DelayFreezer:
    """Records every top-k index choice, then replays them in call order"""

    def __init__(self):
        self.records: List[np.ndarray] = []
        self.replaying = False
        self.cursor = 0

    def resolve(self, choose: Callable[[], np.ndarray]) -> np.ndarray:
        if not self.replaying:
            chosen = choose()
            self.records.append(chosen.copy())
            return chosen
        if self.cursor >= len(self.records):
            raise ShapeError("Replay requested more delay selections than were recorded")
        chosen = self.records[self.cursor]
        self.cursor += 1
        return chosen

    def replay(self):
        self.replaying = True
        self.cursor = 0


_active_freezer: Optional[DelayFreezer] = None


@contextmanager
def frozen_delays(freezer: DelayFreezer) -> Iterator[DelayFreezer]:
    global _active_freezer
    previous = _active_freezer
    _active_freezer = freezer
    try:
        yield freezer
    finally:
        _active_freezer = previous


def _choose(choose: Callable[[], np.ndarray]) -> np.ndarray:
    if _active_freezer is None:
        return choose()
    return _active_freezer.resolve(choose)


# --- mechanisms: inputs are (B, L, h, d_model / h) ---------------------

def _batched(*tensors: Any):
    tensors = [as_tensor(t) for t in tensors]
    squeeze = tensors[0].ndim == 3
    if squeeze:
        tensors = [t.reshape((1,) + t.shape) for t in tensors]
    for t in tensors:
        if t.ndim != 4:
            raise ShapeError(f"Mechanisms expect (B, L, h, d_head) tensors, got {t.shape}")
    return tensors, squeeze


def _unbatched(out: Tensor, squeeze: bool) -> Tensor:
    return out.reshape(out.shape[1:]) if squeeze else out


def _check_qkv(queries: Tensor, keys: Tensor, values: Tensor):
    if keys.shape != queries.shape or values.shape != queries.shape:
        raise ShapeError(f"Q {queries.shape}, K {keys.shape}, V {values.shape} must share a shape; "
                         f"resize K and V to the query length first")


def autocorrelation_standard(queries: Any, keys: Any, values: Any, factor: float) -> Tensor:
    """Per (batch, head, channel) delay selection with gather aggregation"""
    (queries, keys, values), squeeze = _batched(queries, keys, values)
    _check_qkv(queries, keys, values)
    length = queries.shape[1]
    k = topk_count(factor, length, clamp=True)

    corr = cross_correlation(queries, keys, axis=1)
    index = _choose(lambda: rank_lags(corr.data, axis=1)[:, :k])
    weights = softmax(tc.take_along_axis(corr, index, axis=1), axis=1)

    doubled = tc.concat([values, values], axis=1)
    base = np.arange(length).reshape(1, length, 1, 1)
    out = None
    for i in range(k):
        pattern = tc.take_along_axis(doubled, base + index[:, i:i + 1], axis=1)
        term = pattern * weights[:, i:i + 1]
        out = term if out is None else out + term
    return _unbatched(out, squeeze)


def autocorrelation_speedup(queries: Any, keys: Any, values: Any, factor: float,
                            phase: str = 'train') -> Tensor:
    """One global delay set from the profile averaged over batch, heads and channels"""
    if phase not in ('train', 'infer'):
        raise ConfigError(f"phase must be 'train' or 'infer', got {phase!r}")
    (queries, keys, values), squeeze = _batched(queries, keys, values)
    _check_qkv(queries, keys, values)
    length = queries.shape[1]
    k = topk_count(factor, length, clamp=True)

    corr = cross_correlation(queries, keys, axis=1).mean(axis=(0, 2, 3))
    delays = _choose(lambda: rank_lags(corr.data)[:k])
    weights = softmax(tc.take(corr, delays, axis=0))

    if phase == 'infer':
        doubled = tc.concat([values, values], axis=1)
        positions = np.arange(length)
    out = None
    for i, delay in enumerate(int(d) for d in delays):
        if phase == 'train':
            pattern = tc.roll(values, -delay, axis=1)
        else:
            pattern = tc.take(doubled, positions + delay, axis=1)
        term = pattern * weights[i]
        out = term if out is None else out + term
    return _unbatched(out, squeeze)


def full_attention(queries: Any, keys: Any, values: Any) -> Tensor:
    """softmax(Q K^T / sqrt(d_head)) V per head, unmasked"""
    (queries, keys, values), squeeze = _batched(queries, keys, values)
    if keys.shape != values.shape or keys.shape[2:] != queries.shape[2:]:
        raise ShapeError(f"Incompatible Q {queries.shape}, K {keys.shape}, V {values.shape}")
    d_head = queries.shape[-1]
    q = queries.transpose(0, 2, 1, 3)
    k = keys.transpose(0, 2, 3, 1)
    v = values.transpose(0, 2, 1, 3)
    scores = (q @ k) * (1.0 / math.sqrt(d_head))
    out = softmax(scores, axis=-1) @ v
    return _unbatched(out.transpose(0, 2, 1, 3), squeeze)


class AutoCorrelationLayer(Module):
    """Multi-head wrapper: Q/K/V projections, the configured mechanism, output projection"""

    def __init__(self, d_model: int, n_heads: int, factor: float, mechanism: MechanismKind,
                 rng: np.random.Generator):
        if n_heads < 1 or d_model % n_heads != 0:
            raise ConfigError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.factor = factor
        self.mechanism = MechanismKind.parse(mechanism)
        self.query_projection = Linear(d_model, d_model, rng)
        self.key_projection = Linear(d_model, d_model, rng)
        self.value_projection = Linear(d_model, d_model, rng)
        self.out_projection = Linear(d_model, d_model, rng)

    def __call__(self, x: Any, cross: Any = None, training: bool = False) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[-1] != self.d_model:
            raise ShapeError(f"Expected (B, L, {self.d_model}) input, got {x.shape}")
        batch, length, _ = x.shape
        source = x if cross is None else resize_kv(cross, length, axis=1)
        heads = (batch, length, self.n_heads, self.d_model // self.n_heads)

        queries = self.query_projection(x).reshape(heads)
        keys = self.key_projection(source).reshape(heads)
        values = self.value_projection(source).reshape(heads)

        if self.mechanism is MechanismKind.AUTOCORR_STANDARD:
            out = autocorrelation_standard(queries, keys, values, self.factor)
        elif self.mechanism is MechanismKind.AUTOCORR_SPEEDUP:
            out = autocorrelation_speedup(queries, keys, values, self.factor,
                                          phase='train' if training else 'infer')
        else:
            out = full_attention(queries, keys, values)
        return self.out_projection(out.reshape(batch, length, self.d_model))

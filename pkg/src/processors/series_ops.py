#!/usr/bin/env python3

import logging
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from scipy.ndimage import uniform_filter1d

from src.autograd import tensor_core as tc
from src.autograd.tensor_core import Tensor, as_tensor
from src.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)


def time_axis(x: Any, axis: Optional[int] = None) -> int:
    """Time runs along axis 0 of vectors and L x d matrices, axis 1 of batched tensors"""
    ndim = np.ndim(x.data if isinstance(x, Tensor) else x)
    if axis is not None:
        return axis % ndim
    return 0 if ndim <= 2 else 1


@dataclass
class DecompPair:
    """Seasonal part and moving-average trend; seasonal is defined as input - trend"""
    seasonal: Tensor
    trend: Tensor


@dataclass
class CorrelationProfile:
    """R(tau) for tau in 0..L-1 of a (cross-)correlated pair of series"""
    values: np.ndarray
    series_length: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.series_length,):
            raise ShapeError(f"Profile holds {self.values.shape} values for series length {self.series_length}")


def validate_window(w: int):
    if not isinstance(w, (int, np.integer)) or isinstance(w, bool):
        raise ConfigError(f"moving_avg_window must be an integer, got {w!r}")
    if w < 1:
        raise ConfigError(f"moving_avg_window must be >= 1, got {w}")
    if w % 2 == 0:
        raise ConfigError(f"moving_avg_window must be odd, got {w}")


def moving_average(x: Any, w: int, axis: Optional[int] = None) -> Tensor:
    """Edge-replicated moving average that keeps the series length unchanged"""
    validate_window(w)
    x = as_tensor(x)
    axis = time_axis(x, axis)
    length = x.shape[axis]
    if length < 1:
        raise ShapeError("moving_average needs a series of length >= 1")
    pad = (w - 1) // 2
    trend = uniform_filter1d(x.data, size=w, axis=axis, mode='nearest')

    def backward(g):
        # adjoint of "replicate edges, then average each length-w window"
        widths = [(0, 0)] * g.ndim
        widths[axis] = (pad, pad)
        spread = uniform_filter1d(np.pad(g, widths), size=w, axis=axis, mode='constant', cval=0.0)
        grad = np.take(spread, np.arange(pad, pad + length), axis=axis)
        front = np.take(spread, np.arange(0, pad), axis=axis).sum(axis=axis)
        back = np.take(spread, np.arange(pad + length, length + 2 * pad), axis=axis).sum(axis=axis)
        first = [slice(None)] * g.ndim
        last = [slice(None)] * g.ndim
        first[axis], last[axis] = 0, length - 1
        grad[tuple(first)] += front
        grad[tuple(last)] += back
        return (grad,)

    return Tensor._from_op(trend, (x,), backward, 'moving_average')


def series_decomp(x: Any, w: int, axis: Optional[int] = None) -> DecompPair:
    x = as_tensor(x)
    trend = moving_average(x, w, axis=axis)
    return DecompPair(seasonal=x - trend, trend=trend)


def roll(x: Any, tau: int, axis: Optional[int] = None) -> Tensor:
    """Left shift by tau with wrap-around: output[t] = x[(t + tau) mod L]"""
    x = as_tensor(x)
    axis = time_axis(x, axis)
    length = x.shape[axis]
    if not 0 <= tau < length:
        raise ShapeError(f"Delay {tau} outside [0, {length - 1}]")
    return tc.roll(x, -int(tau), axis=axis)


def _as_series(q: Any, k: Any):
    q = np.asarray(q.data if isinstance(q, Tensor) else q, dtype=np.float64)
    k = np.asarray(k.data if isinstance(k, Tensor) else k, dtype=np.float64)
    if q.ndim != 1 or k.ndim != 1:
        raise ShapeError(f"Correlation expects vectors, got {q.shape} and {k.shape}")
    if q.shape != k.shape:
        raise ShapeError(f"Correlation length mismatch: {q.shape[0]} vs {k.shape[0]}")
    if q.shape[0] == 0:
        raise ShapeError("Correlation needs series of length >= 1")
    return q, k


def autocorr_bruteforce(q: Any, k: Any) -> CorrelationProfile:
    """Direct O(L^2) circular estimator, the reference for the transform path"""
    q, k = _as_series(q, k)
    length = q.shape[0]
    values = np.empty(length)
    for tau in range(length):
        # np.roll(k, tau)[t] == k[(t - tau) mod L]
        values[tau] = np.dot(q, np.roll(k, tau)) / length
    return CorrelationProfile(values=values, series_length=length)


def cross_correlation(q: Any, k: Any, axis: Optional[int] = None) -> Tensor:
    """(1/L) * IFFT(FFT(q) * conj(FFT(k))) along the time axis, differentiable"""
    q, k = as_tensor(q), as_tensor(k)
    if q.shape != k.shape:
        raise ShapeError(f"Correlation shape mismatch: {q.shape} vs {k.shape}")
    axis = time_axis(q, axis)
    length = q.shape[axis]
    spectrum = tc.fft_real(q, axis=axis) * tc.conj(tc.fft_real(k, axis=axis))
    return tc.ifft(spectrum, axis=axis).real * (1.0 / length)


def autocorr_fft(q: Any, k: Any) -> CorrelationProfile:
    q, k = _as_series(q, k)
    values = cross_correlation(q, k, axis=0).data
    return CorrelationProfile(values=values, series_length=q.shape[0])

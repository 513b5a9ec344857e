#!/usr/bin/env python3

import logging
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.autograd.tensor_core import Tensor
from src.errors import ConfigError, NumericError

logger = logging.getLogger(__name__)


def _evaluate(f: Callable[[], float]) -> float:
    value = float(f())
    if not np.isfinite(value):
        raise NumericError("Finite-difference probe produced a non-finite value")
    return value


def numeric_partial(f: Callable[[], float], tensor: Tensor, flat_index: int, eps: float = 1e-4) -> float:
    """Central difference of f along one coordinate of `tensor` (restored afterwards)"""
    if eps <= 0:
        raise ConfigError(f"Finite-difference step must be positive, got {eps}")
    position = np.unravel_index(flat_index, tensor.shape)
    original = tensor.data[position]
    try:
        tensor.data[position] = original + eps
        upper = _evaluate(f)
        tensor.data[position] = original - eps
        lower = _evaluate(f)
    finally:
        tensor.data[position] = original
    return (upper - lower) / (2.0 * eps)


def finite_difference_gradient(f: Callable[[], float], params: Mapping[str, Tensor],
                               eps: float = 1e-4,
                               coordinates: Optional[Sequence[Tuple[str, int]]] = None) -> Dict[str, np.ndarray]:
    """Numeric gradient of a scalar closure over the given parameter tensors.

    f must be deterministic given the parameter values; callers freeze any
    index-selecting state before probing. With `coordinates`, only those
    (name, flat index) pairs are probed and the rest are left as NaN.
    """
    if coordinates is None:
        coordinates = [(name, i) for name, tensor in params.items() for i in range(tensor.size)]
        grads = {name: np.zeros(tensor.shape) for name, tensor in params.items()}
    else:
        grads = {name: np.full(tensor.shape, np.nan) for name, tensor in params.items()}

    for name, index in coordinates:
        grads[name].reshape(-1)[index] = numeric_partial(f, params[name], index, eps)

    logger.debug(f"Probed {len(coordinates)} coordinates with eps={eps}")
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero partials from dominating"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale

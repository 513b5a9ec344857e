#!/usr/bin/env python3

import logging
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.fft as sp_fft

from src.errors import NumericError, ShapeError

logger = logging.getLogger(__name__)

Axis = Optional[Union[int, Tuple[int, ...]]]

# Innermost active tape is the one that records.
_TAPE_STACK: List['GradientTape'] = []


def _check_finite(data: np.ndarray, op: str):
    if not np.all(np.isfinite(data)):
        raise NumericError(f"Non-finite values produced by '{op}'")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


class Tensor:
    """Float64 array with reverse-mode derivative bookkeeping"""

    # numpy scalars on the left defer to Tensor operators
    __array_priority__ = 100
    __array_ufunc__ = None

    def __init__(self, data: Any, grad_tracked: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data)
        if np.iscomplexobj(array):
            array = array.astype(np.complex128, copy=False)
        else:
            array = array.astype(np.float64, copy=False)
        _check_finite(array, 'tensor')
        self.data = array
        self.grad_tracked = grad_tracked
        self.name = name
        self._needs_grad = grad_tracked

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence['Tensor'],
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
                 op: str) -> 'Tensor':
        _check_finite(data, op)
        out_cls = ComplexTensor if np.iscomplexobj(data) else Tensor
        out = out_cls.__new__(out_cls)
        out.data = data
        out.grad_tracked = False
        out.name = None
        tape = _TAPE_STACK[-1] if _TAPE_STACK else None
        out._needs_grad = tape is not None and any(p._needs_grad for p in parents)
        if out._needs_grad:
            tape.record(out, parents, backward, op)
        return out

    # --- introspection -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0].real)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        tag = ', grad_tracked=True' if self.grad_tracked else ''
        return f"{type(self).__name__}(shape={self.shape}{tag})"

    # --- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

        return Tensor._from_op(self.data + other.data, (self, other), backward, 'add')

    def __radd__(self, other):
        return as_tensor(other) + self

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,), 'neg')

    def __sub__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape

        def backward(g):
            return _unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)

        return Tensor._from_op(self.data - other.data, (self, other), backward, 'sub')

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g * np.conj(b), a.shape), _unbroadcast(g * np.conj(a), b.shape)

        return Tensor._from_op(a * b, (self, other), backward, 'mul')

    def __rmul__(self, other):
        return as_tensor(other) * self

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        out = a / b

        def backward(g):
            return (_unbroadcast(g / np.conj(b), a.shape),
                    _unbroadcast(-g * np.conj(out / b), b.shape))

        return Tensor._from_op(out, (self, other), backward, 'div')

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("Only scalar exponents are supported")
        a = self.data

        def backward(g):
            return (g * exponent * a ** (exponent - 1),)

        return Tensor._from_op(a ** exponent, (self,), backward, 'pow')

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

        def backward(g):
            ga = g @ np.conj(np.swapaxes(b, -1, -2))
            gb = np.conj(np.swapaxes(a, -1, -2)) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._from_op(a @ b, (self, other), backward, 'matmul')

    # --- structure -------------------------------------------------------

    def __getitem__(self, index):
        shape = self.shape

        def backward(g):
            grad = np.zeros(shape, dtype=g.dtype)
            np.add.at(grad, index, g)
            return (grad,)

        return Tensor._from_op(np.array(self.data[index]), (self,), backward, 'getitem')

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor._from_op(self.data.reshape(shape), (self,),
                               lambda g: (g.reshape(original),), 'reshape')

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(self.data.transpose(axes), (self,),
                               lambda g: (g.transpose(inverse),), 'transpose')

    # --- reductions ------------------------------------------------------

    def sum(self, axis: Axis = None, keepdims: bool = False):
        shape = self.shape
        axes = _normalize_axes(axis, self.ndim)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._from_op(np.asarray(self.data.sum(axis=axes, keepdims=keepdims)),
                               (self,), backward, 'sum')

    def mean(self, axis: Axis = None, keepdims: bool = False):
        axes = _normalize_axes(axis, self.ndim)
        count = int(np.prod([self.shape[a] for a in axes])) if axes else 1
        return self.sum(axis=axes, keepdims=keepdims) / float(count)

    # --- elementwise -----------------------------------------------------

    def relu(self):
        mask = self.data > 0
        return Tensor._from_op(np.where(mask, self.data, 0.0), (self,),
                               lambda g: (g * mask,), 'relu')

    def exp(self):
        out = np.exp(self.data)
        return Tensor._from_op(out, (self,), lambda g: (g * np.conj(out),), 'exp')

    def softmax(self, axis: int = -1):
        return softmax(self, axis=axis)

    @property
    def real(self):
        return real(self)

    def conj(self):
        return conj(self)


class ComplexTensor(Tensor):
    """Complex128 tensor; produced by the forward and inverse transforms"""

    @property
    def real_part(self) -> np.ndarray:
        return self.data.real.copy()

    @property
    def imag_part(self) -> np.ndarray:
        return self.data.imag.copy()


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: Any, name: Optional[str] = None) -> Tensor:
    """Leaf tensor whose gradient is collected by the tape"""
    return Tensor(np.array(data, dtype=np.float64), grad_tracked=True, name=name)


# --- free functions ------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    extents = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(extents)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis),
                           tuple(tensors), backward, 'concat')


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather positions `indices` along one axis (indices are constants)"""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    shape = x.shape

    def backward(g):
        grad = np.zeros(shape, dtype=g.dtype)
        np.add.at(grad, (slice(None),) * axis + (indices,), g)
        return (grad,)

    return Tensor._from_op(np.take(x.data, indices, axis=axis), (x,), backward, 'take')


def take_along_axis(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Per-position gather, same contract as numpy.take_along_axis"""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    shape = x.shape

    def backward(g):
        grid = list(np.indices(indices.shape, sparse=True))
        grid[axis] = indices
        grad = np.zeros(shape, dtype=g.dtype)
        np.add.at(grad, tuple(grid), g)
        return (grad,)

    return Tensor._from_op(np.take_along_axis(x.data, indices, axis=axis), (x,),
                           backward, 'take_along_axis')


def roll(x: Tensor, shift: int, axis: int) -> Tensor:
    """numpy.roll semantics: positive shift moves values toward higher indices"""
    x = as_tensor(x)
    return Tensor._from_op(np.roll(x.data, shift, axis=axis), (x,),
                           lambda g: (np.roll(g, -shift, axis=axis),), 'roll')


def softmax(x: Any, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.size == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward, 'softmax')


def real(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._from_op(np.ascontiguousarray(x.data.real), (x,),
                           lambda g: (g.astype(np.complex128),), 'real')


def conj(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._from_op(np.conj(x.data), (x,), lambda g: (np.conj(g),), 'conj')


def _transform_length(x: Tensor, length: Optional[int], axis: int) -> int:
    if x.ndim == 0:
        raise ShapeError("transform needs at least one axis")
    n = x.shape[axis]
    if n == 0:
        raise ShapeError("transform length must be at least 1")
    if length is not None and length != n:
        raise ShapeError(f"transform length {length} does not match axis extent {n}")
    return n


def fft(x: Any, length: Optional[int] = None, axis: int = -1) -> 'ComplexTensor':
    """Unnormalized forward transform: F[f] = sum_t x_t exp(-2 pi i t f / L)"""
    x = as_tensor(x)
    n = _transform_length(x, length, axis)

    def backward(g):
        # adjoint of the unnormalized DFT is L times the inverse transform
        return (sp_fft.ifft(g, axis=axis) * n,)

    return Tensor._from_op(sp_fft.fft(x.data, axis=axis), (x,), backward, 'fft')


def fft_real(x: Any, length: Optional[int] = None, axis: int = -1) -> 'ComplexTensor':
    x = as_tensor(x)
    if x.is_complex:
        raise ShapeError("fft_real expects a real-valued input")
    return fft(x, length=length, axis=axis)


def ifft(x: Any, length: Optional[int] = None, axis: int = -1) -> 'ComplexTensor':
    """Inverse transform with the 1/L factor: x_t = (1/L) sum_f X_f exp(+2 pi i t f / L)"""
    x = as_tensor(x)
    n = _transform_length(x, length, axis)

    def backward(g):
        return (sp_fft.fft(g, axis=axis) / n,)

    return Tensor._from_op(sp_fft.ifft(x.data, axis=axis), (x,), backward, 'ifft')


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


# --- tape ----------------------------------------------------------------

class GradientTape:
    """Ordered record of executed operations; replayed in reverse to get adjoints"""

    def __init__(self):
        self._records: List[Tuple[Tensor, Tuple[Tensor, ...], Callable, str]] = []

    def __enter__(self) -> 'GradientTape':
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.remove(self)
        return False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward: Callable, op: str):
        self._records.append((out, tuple(parents), backward, op))

    @property
    def operations(self) -> List[str]:
        return [op for _, _, _, op in self._records]

    def clear(self):
        self._records = []

    def gradient(self, output: Tensor, params=None):
        return reverse_mode_gradient(output, self, params)


def reverse_mode_gradient(output: Tensor, tape: GradientTape, params=None):
    """Gradients of a scalar output with respect to grad-tracked leaves.

    `params` may be a mapping name -> Tensor (result keyed by name), a sequence
    of tensors (result keyed by tensor), or None (every tracked leaf reached).
    Unreached parameters receive zero gradients.
    """
    if output.size != 1:
        raise ShapeError(f"reverse_mode_gradient needs a scalar output, got shape {output.shape}")

    grads: Dict[int, np.ndarray] = {id(output): np.ones(output.shape, dtype=output.data.dtype)}
    leaves: Dict[int, Tensor] = {}
    if output.grad_tracked:
        leaves[id(output)] = output

    for out, parents, backward, op in reversed(tape._records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        contributions = backward(g)
        for parent, contribution in zip(parents, contributions):
            if contribution is None or not parent._needs_grad:
                continue
            if not parent.is_complex:
                contribution = np.real(contribution)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = contribution
            if parent.grad_tracked:
                leaves[key] = parent

    def leaf_grad(tensor: Tensor) -> np.ndarray:
        g = grads.get(id(tensor))
        if g is None:
            return np.zeros(tensor.shape, dtype=tensor.data.dtype)
        return np.asarray(g).reshape(tensor.shape)

    if params is None:
        return {tensor: leaf_grad(tensor) for tensor in leaves.values()}
    if isinstance(params, Mapping):
        return {name: leaf_grad(tensor) for name, tensor in params.items()}
    return {tensor: leaf_grad(tensor) for tensor in params}

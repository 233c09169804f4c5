"""Minimal reverse-mode tensor engine.

A Tensor wraps a contiguous numpy array. Operators build new Tensors that keep
references to their inputs and a backward closure mapping the upstream gradient
to one gradient per input. Parameters are named leaves whose `grad` buffers
accumulate across backward calls until `zero_grad`.

Only the operator set the network needs is provided: 3x3 same-size convolution,
ReLU, bilinear upsampling, elementwise add/mul/scale, subband stacking and the
mean Huber loss. The Haar transforms live in `ddsr.wavelet` and use the same
`make_result` hook.
"""

from __future__ import annotations

import functools
import math
from collections.abc import Callable, Iterable, Iterator, Sequence
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, override

import numpy as np
import numpy.typing as npt
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field

from .constants import DEFAULT_LEARNING_RATE, GRAD_CHECK_SAMPLES, GRAD_CHECK_STEP
from .errors import DivergenceError, ShapeError

type Array = npt.NDArray[Any]
type BackwardFn = Callable[[Array], Sequence[Array | None]]

_RELU_MASKS: ContextVar[list[Array] | None] = ContextVar("ddsr_relu_masks", default=None)


class Tensor:
    __slots__ = ("data", "parents", "backward_fn", "requires_grad")

    def __init__(
        self,
        data: npt.ArrayLike,
        *,
        parents: Sequence[Tensor] = (),
        backward_fn: BackwardFn | None = None,
        dtype: npt.DTypeLike | None = None,
    ) -> None:
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        # 0-d arrays are already contiguous; ascontiguousarray would promote them to 1-d
        self.data: Array = array if array.flags.c_contiguous else np.ascontiguousarray(array)
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = backward_fn is not None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(extent) for extent in self.data.shape)

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        return self.data

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    @override
    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    __slots__ = ("name", "grad")

    def __init__(self, name: str, value: npt.ArrayLike, *, dtype: npt.DTypeLike | None = None):
        super().__init__(np.array(value, dtype=dtype), dtype=dtype)
        self.name = name
        self.grad: Array = np.zeros_like(self.data)
        self.requires_grad = True

    def zero_grad(self) -> None:
        self.grad.fill(0)

    def astype(self, dtype: npt.DTypeLike) -> Parameter:
        return Parameter(self.name, self.data.astype(dtype, copy=True))

    def clone(self) -> Parameter:
        return Parameter(self.name, self.data.copy())

    @override
    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(value: Tensor | npt.ArrayLike, dtype: npt.DTypeLike | None = None) -> Tensor:
    if isinstance(value, Tensor):
        if dtype is None or value.dtype == np.dtype(dtype):
            return value
        return Tensor(value.data, dtype=dtype)
    return Tensor(value, dtype=dtype)


def make_result(data: Array, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an operator output, recording the graph edge only when a parent needs it."""
    if any(parent.requires_grad for parent in parents):
        return Tensor(data, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(value) into the grad of every Parameter reachable from loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("backward() called on a tensor with no recorded forward pass")
    if not math.isfinite(loss.item()):
        raise DivergenceError(f"backward() on non-finite loss {loss.item()}")

    pending: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        upstream = pending.pop(id(node), None)
        if upstream is None:
            continue
        if isinstance(node, Parameter):
            node.grad += upstream.reshape(node.grad.shape)
            continue
        if node.backward_fn is None:
            continue
        parent_grads = node.backward_fn(upstream)
        for parent, grad in zip(node.parents, parent_grads, strict=True):
            if grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + grad
            else:
                pending[key] = grad


def unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as error:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from error

    def backward_fn(grad: Array) -> tuple[Array, Array]:
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)

    return make_result(data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError as error:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from error

    def backward_fn(grad: Array) -> tuple[Array | None, Array | None]:
        grad_a = unbroadcast(grad * b.data, a.shape) if a.requires_grad else None
        grad_b = unbroadcast(grad * a.data, b.shape) if b.requires_grad else None
        return grad_a, grad_b

    return make_result(data, (a, b), backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    data = a.data * a.data.dtype.type(factor)

    def backward_fn(grad: Array) -> tuple[Array]:
        return (grad * grad.dtype.type(factor),)

    return make_result(data, (a,), backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    masks = _RELU_MASKS.get()
    if masks is not None:
        masks.append(mask)
    data = np.where(mask, x.data, x.data.dtype.type(0))

    def backward_fn(grad: Array) -> tuple[Array]:
        return (np.where(mask, grad, grad.dtype.type(0)),)

    return make_result(data, (x,), backward_fn)


@contextmanager
def record_relu_masks() -> Iterator[list[Array]]:
    """Collect the activation mask of every relu evaluated inside the block."""
    masks: list[Array] = []
    token = _RELU_MASKS.set(masks)
    try:
        yield masks
    finally:
        _RELU_MASKS.reset(token)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution (cross-correlation), stride 1, zero padding 1."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a (B, C, H, W) input, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d expects a (Cout, Cin, 3, 3) kernel, got shape {weight.shape}")
    out_channels, in_channels = weight.shape[:2]
    if x.shape[1] != in_channels:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, "
            f"kernel expects {in_channels}"
        )
    if bias.shape != (out_channels,):
        raise ShapeError(f"conv2d bias must have shape ({out_channels},), got {bias.shape}")

    padded = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3]))
    out = out.transpose(0, 3, 1, 2) + bias.data[None, :, None, None]
    data = np.ascontiguousarray(out, dtype=np.result_type(x.data, weight.data))

    def backward_fn(grad: Array) -> tuple[Array | None, Array | None, Array | None]:
        grad_x = grad_w = grad_b = None
        if x.requires_grad:
            grad_padded = np.pad(grad, ((0, 0), (0, 0), (1, 1), (1, 1)))
            grad_windows = sliding_window_view(grad_padded, (3, 3), axis=(2, 3))
            flipped = weight.data[:, :, ::-1, ::-1]
            grad_x = np.tensordot(grad_windows, flipped, axes=([1, 4, 5], [0, 2, 3]))
            grad_x = np.ascontiguousarray(grad_x.transpose(0, 3, 1, 2))
        if weight.requires_grad:
            grad_w = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        if bias.requires_grad:
            grad_b = grad.sum(axis=(0, 2, 3))
        return grad_x, grad_w, grad_b

    return make_result(data, (x, weight, bias), backward_fn)


@functools.lru_cache(maxsize=64)
def bilinear_matrix(size: int, factor: int) -> Array:
    """(size*factor, size) interpolation matrix, half-pixel centres, clamped edges."""
    target = np.arange(size * factor, dtype=np.float64)
    source = np.clip((target + 0.5) / factor - 0.5, 0.0, size - 1)
    lower = np.floor(source).astype(np.int64)
    upper = np.minimum(lower + 1, size - 1)
    frac = source - lower
    matrix = np.zeros((size * factor, size), dtype=np.float64)
    rows = np.arange(size * factor)
    np.add.at(matrix, (rows, lower), 1.0 - frac)
    np.add.at(matrix, (rows, upper), frac)
    matrix.setflags(write=False)
    return matrix


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"bilinear_upsample factor must be >= 1, got {factor}")
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample expects a (B, C, H, W) input, got shape {x.shape}")
    if factor == 1:
        return make_result(x.data.copy(), (x,), lambda grad: (grad,))

    rows = bilinear_matrix(x.shape[2], factor).astype(x.dtype)
    cols = bilinear_matrix(x.shape[3], factor).astype(x.dtype)
    data = np.matmul(np.matmul(rows, x.data), cols.T)

    def backward_fn(grad: Array) -> tuple[Array]:
        return (np.matmul(rows.T, np.matmul(grad, cols)),)

    return make_result(np.ascontiguousarray(data), (x,), backward_fn)


def subband(high: Tensor, index: int) -> Tensor:
    """Select one (B, C, H, W) detail band from a (B, C, 3, H, W) stack."""
    if high.ndim != 5:
        raise ShapeError(f"subband expects a (B, C, 3, H, W) stack, got shape {high.shape}")
    data = np.ascontiguousarray(high.data[:, :, index])

    def backward_fn(grad: Array) -> tuple[Array]:
        full = np.zeros_like(high.data)
        full[:, :, index] = grad
        return (full,)

    return make_result(data, (high,), backward_fn)


def stack_subbands(parts: Sequence[Tensor]) -> Tensor:
    shapes = {part.shape for part in parts}
    if len(shapes) != 1:
        raise ShapeError(f"stack_subbands needs equal shapes, got {sorted(shapes)}")
    data = np.stack([part.data for part in parts], axis=2)

    def backward_fn(grad: Array) -> list[Array]:
        return [np.ascontiguousarray(grad[:, :, index]) for index in range(len(parts))]

    return make_result(data, tuple(parts), backward_fn)


def mean(x: Tensor) -> Tensor:
    count = max(1, x.data.size)
    data = np.asarray(x.data.mean(), dtype=x.dtype)

    def backward_fn(grad: Array) -> tuple[Array]:
        return (np.full(x.shape, grad.reshape(()) / count, dtype=x.dtype),)

    return make_result(data, (x,), backward_fn)


def huber(pred: Tensor, target: Tensor, delta: float = 1.0) -> Tensor:
    """Mean Huber loss; quadratic within delta, linear beyond."""
    if pred.shape != target.shape:
        raise ShapeError(f"huber: prediction {pred.shape} and target {target.shape} differ")
    if delta <= 0:
        raise ValueError(f"huber delta must be positive, got {delta}")
    error = pred.data - target.data.astype(pred.dtype, copy=False)
    magnitude = np.abs(error)
    quadratic = magnitude <= delta
    per_element = np.where(
        quadratic,
        0.5 * error * error,
        delta * (magnitude - 0.5 * delta),
    )
    count = max(1, error.size)
    data = np.asarray(per_element.mean(), dtype=pred.dtype)

    def backward_fn(grad: Array) -> tuple[Array | None, Array | None]:
        local = np.where(quadratic, error, delta * np.sign(error)) / count
        upstream = local * grad.reshape(())
        grad_pred = upstream.astype(pred.dtype, copy=False) if pred.requires_grad else None
        grad_target = -upstream.astype(target.dtype, copy=False) if target.requires_grad else None
        return grad_pred, grad_target

    return make_result(data, (pred, target), backward_fn)


def zero_grad(params: Iterable[Parameter]) -> None:
    for param in params:
        param.zero_grad()


class AdamState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    lr: float = DEFAULT_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = Field(default_factory=dict)
    v: dict[str, np.ndarray] = Field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState) -> AdamState:
    """Bias-corrected Adam update applied in place; returns the same state object."""
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for param in params:
        first = state.m.get(param.name)
        if first is None:
            first = np.zeros_like(param.data)
            state.m[param.name] = first
            state.v[param.name] = np.zeros_like(param.data)
        second = state.v[param.name]
        grad = param.grad
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * (grad * grad)
        update = (first / correction1) / (np.sqrt(second / correction2) + state.eps)
        param.data -= (state.lr * update).astype(param.dtype, copy=False)
    return state


class GradCheckResult(BaseModel):
    max_relative_error: float
    passed: bool
    checked: int
    skipped_kinks: int
    worst_parameter: str | None = None
    worst_index: int | None = None


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def evaluate_loss(model_fn: Callable[[], Tensor]) -> tuple[float, list[Array]]:
    with record_relu_masks() as masks:
        value = model_fn().item()
    if not math.isfinite(value):
        raise DivergenceError(f"grad_check: loss is not finite ({value})")
    return value, masks


def same_activation_pattern(left: list[Array], right: list[Array]) -> bool:
    if len(left) != len(right):
        return False
    return all(np.array_equal(a, b) for a, b in zip(left, right, strict=True))


def grad_check(
    model_fn: Callable[[], Tensor],
    params: Iterable[Parameter],
    tolerance: float = 1e-4,
    *,
    samples: int = GRAD_CHECK_SAMPLES,
    step: float = GRAD_CHECK_STEP,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backward() against central differences on random coordinates.

    Parameters must be float64. A coordinate whose +h and -h evaluations
    change any ReLU activation pattern straddles a kink and is replaced by
    another draw.
    """
    param_list = list(params)
    for param in param_list:
        if param.dtype != np.float64:
            raise ValueError(f"grad_check needs float64 parameters, {param.name} is {param.dtype}")

    zero_grad(param_list)
    loss = model_fn()
    if not math.isfinite(loss.item()):
        raise DivergenceError(f"grad_check: loss is not finite ({loss.item()})")
    backward(loss)
    analytic = [param.grad.copy() for param in param_list]

    sizes = np.array([param.data.size for param in param_list], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    candidates = rng.permutation(int(offsets[-1]))

    worst = 0.0
    worst_parameter: str | None = None
    worst_index: int | None = None
    checked = 0
    skipped = 0
    for flat_index in candidates:
        if checked >= samples:
            break
        slot = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        param = param_list[slot]
        local = int(flat_index - offsets[slot])
        flat = param.data.reshape(-1)
        original = float(flat[local])

        flat[local] = original + step
        plus, plus_masks = evaluate_loss(model_fn)
        flat[local] = original - step
        minus, minus_masks = evaluate_loss(model_fn)
        flat[local] = original

        if not same_activation_pattern(plus_masks, minus_masks):
            skipped += 1
            continue
        numeric = (plus - minus) / (2.0 * step)
        error = relative_error(float(analytic[slot].reshape(-1)[local]), numeric)
        checked += 1
        if error > worst:
            worst = error
            worst_parameter = param.name
            worst_index = local

    return GradCheckResult(
        max_relative_error=worst,
        passed=worst < tolerance,
        checked=checked,
        skipped_kinks=skipped,
        worst_parameter=worst_parameter,
        worst_index=worst_index,
    )

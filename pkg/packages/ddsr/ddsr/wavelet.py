"""Single-level orthonormal 2-D Haar transform.

Each non-overlapping 2x2 block [[a, b], [c, d]] maps to

    LL = (a + b + c + d) / 2
    LH = (a + b - c - d) / 2
    HL = (a - b + c - d) / 2
    HH = (a - b - c + d) / 2

The map is orthonormal, so synthesis is its transpose: the gradient of the
analysis is the synthesis of the upstream gradient and vice versa. Detail
bands are stacked on axis 2 in (LH, HL, HH) order.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import ShapeError
from .tensor import Array, Tensor, make_result

SUBBAND_NAMES = ("lh", "hl", "hh")


class WaveletPyramid(NamedTuple):
    ll: Tensor
    high: Tensor


def haar_analysis(x: Array) -> Array:
    """(B, C, H, W) -> (B, C, 4, H/2, W/2) with bands ordered LL, LH, HL, HH."""
    if x.ndim != 4:
        raise ShapeError(f"Haar analysis expects a (B, C, H, W) array, got shape {x.shape}")
    height, width = x.shape[2], x.shape[3]
    if height % 2 or width % 2:
        raise ShapeError(f"Haar analysis needs even spatial dimensions, got {height}x{width}")
    a = x[:, :, 0::2, 0::2]
    b = x[:, :, 0::2, 1::2]
    c = x[:, :, 1::2, 0::2]
    d = x[:, :, 1::2, 1::2]
    half = x.dtype.type(0.5)
    return np.stack(
        [
            (a + b + c + d) * half,
            (a + b - c - d) * half,
            (a - b + c - d) * half,
            (a - b - c + d) * half,
        ],
        axis=2,
    )


def haar_synthesis(bands: Array) -> Array:
    """Exact inverse of haar_analysis."""
    if bands.ndim != 5 or bands.shape[2] != 4:
        raise ShapeError(f"Haar synthesis expects a (B, C, 4, h, w) array, got shape {bands.shape}")
    ll, lh, hl, hh = (bands[:, :, index] for index in range(4))
    batch, channels, height, width = ll.shape
    half = bands.dtype.type(0.5)
    out = np.empty((batch, channels, height * 2, width * 2), dtype=bands.dtype)
    out[:, :, 0::2, 0::2] = (ll + lh + hl + hh) * half
    out[:, :, 0::2, 1::2] = (ll + lh - hl - hh) * half
    out[:, :, 1::2, 0::2] = (ll - lh + hl - hh) * half
    out[:, :, 1::2, 1::2] = (ll - lh - hl + hh) * half
    return out


def dwt2_haar(x: Tensor) -> WaveletPyramid:
    bands = haar_analysis(x.data)

    def ll_backward(grad: Array) -> tuple[Array]:
        full = np.zeros_like(bands)
        full[:, :, 0] = grad
        return (haar_synthesis(full),)

    def high_backward(grad: Array) -> tuple[Array]:
        full = np.zeros_like(bands)
        full[:, :, 1:] = grad
        return (haar_synthesis(full),)

    ll = make_result(np.ascontiguousarray(bands[:, :, 0]), (x,), ll_backward)
    high = make_result(np.ascontiguousarray(bands[:, :, 1:]), (x,), high_backward)
    return WaveletPyramid(ll=ll, high=high)


def check_pyramid(ll: Tensor, high: Tensor) -> None:
    if ll.ndim != 4 or high.ndim != 5 or high.shape[2] != 3:
        raise ShapeError(
            f"expected LL (B, C, h, w) and detail (B, C, 3, h, w), got {ll.shape} and {high.shape}"
        )
    expected = (ll.shape[0], ll.shape[1], 3, ll.shape[2], ll.shape[3])
    if high.shape != expected:
        raise ShapeError(f"detail subbands {high.shape} do not match LL {ll.shape}")


def idwt2_haar(pyramid: WaveletPyramid) -> Tensor:
    ll, high = pyramid
    check_pyramid(ll, high)
    dtype = np.result_type(ll.data, high.data)
    bands = np.concatenate(
        [ll.data[:, :, None].astype(dtype, copy=False), high.data.astype(dtype, copy=False)],
        axis=2,
    )

    def backward_fn(grad: Array) -> tuple[Array, Array]:
        analysed = haar_analysis(grad)
        return (
            np.ascontiguousarray(analysed[:, :, 0]),
            np.ascontiguousarray(analysed[:, :, 1:]),
        )

    return make_result(haar_synthesis(bands), (ll, high), backward_fn)

"""Reference integer kernels for every layer kind in the segmentation network.

Activations are int8 QTensors laid out (height, width, channels). Products
``(x - zp_x) * (w - zp_w)`` accumulate in 32 bits (checked, never wrapped) and
are rescaled with an integer multiplier/shift.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fixedpoint import (QTensor, QuantParams, Requantizer, dequantize_tensor,
                         divide_round_half_even, int_range, quantize_tensor, requantize, to_f32)
from .graph import Conv2D

ACC_MIN, ACC_MAX = int_range(32)

# [0, 1] mapped onto the full int8 grid
UNIT_PARAMS = QuantParams(to_f32(1.0 / 255.0), -128, 8)


class AccumulatorOverflowError(ArithmeticError):
    pass


class KernelShapeError(ValueError):
    pass


def _centered(t: QTensor) -> np.ndarray:
    return t.data.astype(np.int64) - t.params.zero_point


def _bias_values(bias, n: int) -> np.ndarray:
    if bias is None:
        return np.zeros(n, dtype=np.int64)
    b = bias.data if isinstance(bias, QTensor) else np.asarray(bias)
    if b.shape != (n,):
        raise KernelShapeError(f"bias length {b.shape} != {n}")
    lo, hi = int_range(16)
    if b.min() < lo or b.max() > hi:
        raise ValueError("bias outside the 16-bit range")
    return b.astype(np.int64)


def _check_acc(acc: np.ndarray) -> None:
    if acc.size and (acc.max() > ACC_MAX or acc.min() < ACC_MIN):
        raise AccumulatorOverflowError("partial sum exceeds the 32-bit accumulator range")


def same_padding(size: int, stride: int, extent: int) -> tuple[int, int, int]:
    """(out, pad_before, pad_after) for 'same' zero padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + extent - size, 0)
    return out, total // 2, total - total // 2


def conv2d_q(x: QTensor, w: QTensor, bias, kind: Conv2D, out_params: QuantParams) -> QTensor:
    H, W, C = x.shape
    G = kind.groups
    if C % G:
        raise KernelShapeError(f"groups {G} do not divide {C} channels")
    cg, og = C // G, kind.out_channels // G
    expect = (kind.kernel_h, kind.kernel_w, cg, kind.out_channels)
    if w.shape != expect:
        raise KernelShapeError(f"weight shape {w.shape} != {expect}")
    d, s = kind.dilation, kind.stride
    Ho, pt, pb = same_padding(H, s, kind.extent_h)
    Wo, pl, pr = same_padding(W, s, kind.extent_w)

    xc = np.pad(_centered(x), ((pt, pb), (pl, pr), (0, 0)))
    wc = _centered(w).reshape(kind.kernel_h, kind.kernel_w, cg, G, og)
    b = _bias_values(bias, kind.out_channels)
    acc = np.broadcast_to(b.reshape(G, og), (Ho, Wo, G, og)).copy()

    def patch(i, j):
        return xc[i * d: i * d + (Ho - 1) * s + 1: s,
                  j * d: j * d + (Wo - 1) * s + 1: s].reshape(Ho, Wo, G, cg)

    # every partial sum is bounded by |bias| + sum|x||w|; exact checking only when that bound is unsafe
    bound = np.abs(b).max(initial=0) + np.abs(xc).max(initial=0) * np.abs(wc).sum(axis=(0, 1, 2)).max(initial=0)
    taps = [(i, j) for i in range(kind.kernel_h) for j in range(kind.kernel_w)]
    if bound <= ACC_MAX:
        for i, j in taps:
            acc += np.einsum("hwgc,cgo->hwgo", patch(i, j), wc[i, j])
    else:
        _check_acc(acc)
        for i, j in taps:
            p = patch(i, j)
            for c in range(cg):
                acc += p[..., c, None] * wc[i, j, c]
                _check_acc(acc)

    r = Requantizer.for_scales(x.params.scale, w.params.scale, out_params.scale)
    out = requantize(acc.reshape(Ho, Wo, kind.out_channels), r, out_params.zero_point)
    return QTensor(out, out_params)


def pool_q(x: QTensor, mode: str, window: int, stride: int) -> QTensor:
    H, W, C = x.shape
    if window > min(H, W):
        raise KernelShapeError(f"window {window} exceeds spatial dims {H}x{W}")
    win = sliding_window_view(x.data, (window, window), axis=(0, 1))[::stride, ::stride]
    if mode == "max":
        return QTensor(win.max(axis=(-2, -1)), x.params)
    if mode != "avg":
        raise ValueError(f"pool mode must be max|avg, got {mode!r}")
    total = (win.astype(np.int64) - x.params.zero_point).sum(axis=(-2, -1))
    _check_acc(total)
    q = divide_round_half_even(total, window * window) + x.params.zero_point
    return QTensor(q, x.params)


def global_pool_q(x: QTensor, mode: str) -> QTensor:
    H, W, C = x.shape
    if mode == "max":
        return QTensor(x.data.max(axis=(0, 1)).reshape(1, 1, C), x.params)
    if mode != "avg":
        raise ValueError(f"global pool mode must be max|avg, got {mode!r}")
    total = _centered(x).sum(axis=(0, 1))
    _check_acc(total)
    q = divide_round_half_even(total, H * W) + x.params.zero_point
    return QTensor(q.reshape(1, 1, C), x.params)


def upsample_nearest_q(x: QTensor, factor: int) -> QTensor:
    if factor < 2:
        raise ValueError("upsample factor must be >= 2")
    return QTensor(x.data.repeat(factor, axis=0).repeat(factor, axis=1), x.params)


def _broadcast_ok(a: QTensor, b: QTensor, kind: str) -> None:
    if a.shape == b.shape:
        return
    if kind == "multiply" and b.shape == (1, 1, a.shape[2]):
        return
    raise KernelShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def elementwise_q(a: QTensor, b: QTensor, kind: str, out_params: QuantParams) -> QTensor:
    if kind not in ("add", "multiply"):
        raise ValueError(f"elementwise kind must be add|multiply, got {kind!r}")
    _broadcast_ok(a, b, kind)
    ra, rb = dequantize_tensor(a), dequantize_tensor(b)
    return quantize_tensor(ra + rb if kind == "add" else ra * rb, out_params)


def add_n_q(inputs: Sequence[QTensor], out_params: QuantParams) -> QTensor:
    for t in inputs[1:]:
        _broadcast_ok(inputs[0], t, "add")
    return quantize_tensor(sum(dequantize_tensor(t) for t in inputs), out_params)


def concat_q(inputs: Sequence[QTensor], out_params: QuantParams) -> QTensor:
    if not inputs:
        raise ValueError("concat needs at least one input")
    hw = inputs[0].shape[:2]
    if any(t.shape[:2] != hw for t in inputs):
        raise KernelShapeError(f"concat spatial mismatch {[t.shape for t in inputs]}")
    parts = [t.data if t.params == out_params else quantize_tensor(dequantize_tensor(t), out_params).data
             for t in inputs]
    return QTensor(np.concatenate(parts, axis=-1), out_params)


def slice_q(x: QTensor, start: int, stop: int) -> QTensor:
    if not 0 <= start < stop <= x.shape[-1]:
        raise KernelShapeError(f"slice [{start}, {stop}) outside {x.shape[-1]} channels")
    return QTensor(x.data[..., start:stop].copy(), x.params)


def dense_q(x: QTensor, w: QTensor, bias, out_params: QuantParams) -> QTensor:
    if x.data.ndim == 3 and x.shape[:2] != (1, 1):
        raise KernelShapeError(f"dense expects a 1x1xC input, got {x.shape}")
    xv = _centered(x).reshape(-1)
    if w.data.ndim != 2 or w.shape[0] != xv.size:
        raise KernelShapeError(f"weight shape {w.shape} incompatible with {xv.size} inputs")
    wc = _centered(w)
    b = _bias_values(bias, w.shape[1])
    bound = np.abs(b).max(initial=0) + np.abs(xv).max(initial=0) * np.abs(wc).sum(axis=0).max(initial=0)
    if bound <= ACC_MAX:
        acc = b + xv @ wc
    else:
        acc = b.copy()
        _check_acc(acc)
        for c in range(xv.size):
            acc += xv[c] * wc[c]
            _check_acc(acc)
    r = Requantizer.for_scales(x.params.scale, w.params.scale, out_params.scale)
    return QTensor(requantize(acc, r, out_params.zero_point).reshape(1, 1, -1), out_params)


@lru_cache(maxsize=256)
def sigmoid_lut(in_params: QuantParams, out_params: QuantParams) -> np.ndarray:
    """256-entry table: index ``q + 128`` gives the quantized sigmoid of code ``q``."""
    codes = np.arange(-128, 128)
    real = (codes - in_params.zero_point) * in_params.scale
    lut = quantize_tensor(1.0 / (1.0 + np.exp(-real)), out_params).data
    lut.flags.writeable = False
    return lut


def softmax_real(x: QTensor) -> np.ndarray:
    """Per-pixel channel distribution computed on dequantized logits."""
    r = dequantize_tensor(x)
    e = np.exp(r - r.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def activation_q(x: QTensor, fn: str, out_params: QuantParams | None = None) -> QTensor:
    if fn == "relu":
        y = QTensor(np.maximum(x.data, np.int8(x.params.zero_point)), x.params)
        if out_params is None or out_params == x.params:
            return y
        return quantize_tensor(dequantize_tensor(y), out_params)
    if fn == "sigmoid":
        if x.params.bits != 8:
            raise ValueError("sigmoid LUT needs 8-bit input")
        out_params = out_params or UNIT_PARAMS
        lut = sigmoid_lut(x.params, out_params)
        return QTensor(lut[x.data.astype(np.int64) + 128], out_params)
    if fn == "softmax":
        return quantize_tensor(softmax_real(x), out_params or UNIT_PARAMS)
    raise ValueError(f"unsupported activation {fn!r}")

"""Affine integer quantization, fixed-point requantization and the LMQW weight file."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

_DTYPES = {8: np.int8, 16: np.int16, 32: np.int32}


def int_range(bits: int) -> tuple[int, int]:
    return -(1 << (bits - 1)), (1 << (bits - 1)) - 1


def round_half_even(x):
    """Round real values to the nearest integer, ties to even."""
    return np.rint(x)


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0
    bits: int = 8

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if self.bits not in _DTYPES:
            raise ValueError(f"bits must be 8, 16 or 32, got {self.bits}")
        if not -128 <= self.zero_point <= 127:
            raise ValueError(f"zero_point {self.zero_point} outside [-128, 127]")
        object.__setattr__(self, "zero_point", int(self.zero_point))

    @property
    def qmin(self) -> int:
        return int_range(self.bits)[0]

    @property
    def qmax(self) -> int:
        return int_range(self.bits)[1]

    @property
    def dtype(self):
        return _DTYPES[self.bits]


@dataclass(frozen=True, eq=False)
class QTensor:
    """Integer tensor plus its affine parameters.

    Activations are (height, width, channels); conv weights are
    (kh, kw, c_in/groups, c_out); dense weights are (in_units, out_units).
    """

    data: np.ndarray
    params: QuantParams

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != self.params.dtype:
            lo, hi = self.params.qmin, self.params.qmax
            if data.size and (data.min() < lo or data.max() > hi):
                raise ValueError(f"values outside the {self.params.bits}-bit range")
            data = data.astype(self.params.dtype)
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, QTensor):
            return NotImplemented
        return self.params == other.params and self.data.shape == other.data.shape \
            and np.array_equal(self.data, other.data)


# ---------------------------------------------------------------------------

def calibrate_affine(lo: float, hi: float, bits: int = 8) -> QuantParams:
    """Affine parameters covering [lo, hi]; the range is widened to include 0."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("calibration range must be finite")
    if lo > hi:
        raise ValueError(f"min {lo} > max {hi}")
    if hi == lo:
        return QuantParams(1.0, 0, bits)
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    qmin, qmax = int_range(bits)
    scale = (hi - lo) / ((1 << bits) - 1)
    zp = int(round_half_even(qmin - lo / scale))
    zp = max(-128, min(127, zp))
    return QuantParams(scale, zp, bits)


def quantize_tensor(values, params: QuantParams) -> QTensor:
    v = np.asarray(values, dtype=np.float64)
    q = round_half_even(v / params.scale) + params.zero_point
    q = np.clip(q, params.qmin, params.qmax)
    return QTensor(q.astype(params.dtype), params)


def dequantize_tensor(q: QTensor) -> np.ndarray:
    return (q.data.astype(np.float64) - q.params.zero_point) * q.params.scale


def fake_quant(values, params: QuantParams) -> np.ndarray:
    return dequantize_tensor(quantize_tensor(values, params))


# ---------------------------------------------------------------------------
# fixed-point rescale

@dataclass(frozen=True)
class Requantizer:
    multiplier: int
    right_shift: int

    def __post_init__(self):
        if self.right_shift < 0 or self.right_shift > 62:
            raise ValueError("right_shift must be in [0, 62]")
        if not 0 <= self.multiplier < (1 << 31):
            raise ValueError("multiplier must fit in 31 bits")

    @property
    def ratio(self) -> float:
        return self.multiplier / (1 << self.right_shift)

    @classmethod
    def from_ratio(cls, ratio: float) -> "Requantizer":
        """Multiplier normalised into [2^30, 2^31) so the relative error is <= 2^-31."""
        if not (ratio > 0 and math.isfinite(ratio)):
            raise ValueError(f"ratio must be positive, got {ratio}")
        mant, exp = math.frexp(ratio)  # ratio = mant * 2**exp, mant in [0.5, 1)
        shift = 31 - exp
        if shift > 62:
            mult = int(round(ratio * (1 << 62)))
            if mult < (1 << 15):
                raise ValueError(f"ratio {ratio} too small to represent to 2^-15")
            return cls(mult, 62)
        if shift < 0:
            raise ValueError(f"ratio {ratio} too large for a non-negative shift")
        mult = int(round(mant * (1 << 31)))
        if mult == 1 << 31:
            mult >>= 1
            shift -= 1
        return cls(mult, shift)

    @classmethod
    def for_scales(cls, scale_in: float, scale_w: float, scale_out: float) -> "Requantizer":
        return cls.from_ratio(scale_in * scale_w / scale_out)


def _shift_round_half_even(num: np.ndarray, shift: int) -> np.ndarray:
    if shift == 0:
        return num
    floor = num >> shift
    rem = num - (floor << shift)
    half = np.int64(1) << (shift - 1)
    up = (rem > half) | ((rem == half) & ((floor & 1) == 1))
    return floor + up


def requantize(acc, r: Requantizer, out_zp: int = 0, bits: int = 8) -> np.ndarray:
    """Rescale 32-bit accumulators to ``bits`` with round-half-even and saturation."""
    a = np.asarray(acc, dtype=np.int64)
    num = a * np.int64(r.multiplier)
    q = _shift_round_half_even(num, r.right_shift) + out_zp
    lo, hi = int_range(bits)
    return np.clip(q, lo, hi).astype(_DTYPES[bits])


def divide_round_half_even(num: np.ndarray, den: int) -> np.ndarray:
    """Exact integer num/den with ties to even (den > 0)."""
    num = np.asarray(num, dtype=np.int64)
    floor = num // den
    rem2 = 2 * (num - floor * den)
    up = (rem2 > den) | ((rem2 == den) & ((floor & 1) == 1))
    return floor + up


# ---------------------------------------------------------------------------
# LMQW weight container

MAGIC = b"LMQW"
VERSION = 1


def to_f32(x: float) -> float:
    return float(np.float32(x))


def save_lmqw(tensors: Mapping[str, QTensor], path: str | Path | None = None) -> bytes:
    """Serialise named tensors; insertion order is preserved. Scales are stored as float32."""
    out = bytearray(MAGIC)
    out += struct.pack("<HI", VERSION, len(tensors))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", t.data.ndim)
        out += struct.pack(f"<{t.data.ndim}I", *t.data.shape)
        out += struct.pack("<fiB", t.params.scale, t.params.zero_point, t.params.bits)
        out += t.data.astype(t.data.dtype.newbyteorder("<"), copy=False).tobytes()
    blob = bytes(out)
    if path is not None:
        Path(path).write_bytes(blob)
    return blob


def load_lmqw(src: str | Path | bytes) -> dict[str, QTensor]:
    blob = src if isinstance(src, (bytes, bytearray)) else Path(src).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError("not an LMQW file")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported LMQW version {version}")
    pos = 10
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        scale, zp, bits = struct.unpack_from("<fiB", blob, pos)
        pos += 9
        dtype = np.dtype(_DTYPES[bits]).newbyteorder("<")
        count_el = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(blob, dtype=dtype, count=count_el, offset=pos).reshape(dims)
        pos += count_el * dtype.itemsize
        tensors[name] = QTensor(data.astype(_DTYPES[bits]), QuantParams(float(scale), zp, bits))
    if pos != len(blob):
        raise ValueError("trailing bytes in LMQW file")
    return tensors

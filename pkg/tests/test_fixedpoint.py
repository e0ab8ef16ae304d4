import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgraseg.fixedpoint import (QTensor, QuantParams, Requantizer, calibrate_affine,
                                dequantize_tensor, fake_quant, load_lmqw, quantize_tensor,
                                requantize, save_lmqw, to_f32)

finite = st.floats(-1e4, 1e4, allow_nan=False)


def test_calibrate_examples():
    p = calibrate_affine(-1.0, 1.0, 8)
    assert p.scale == pytest.approx(2 / 255) and p.zero_point == 0
    assert calibrate_affine(0.0, 0.0, 8) == QuantParams(1.0, 0, 8)
    p = calibrate_affine(0.0, 25.5, 8)
    assert p.scale == pytest.approx(0.1) and p.zero_point == -128
    with pytest.raises(ValueError):
        calibrate_affine(float("nan"), 1.0)
    with pytest.raises(ValueError):
        calibrate_affine(2.0, 1.0)


@given(lo=finite, hi=finite)
def test_calibrated_zero_is_exact(lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    p = calibrate_affine(lo, hi)
    assert -128 <= p.zero_point <= 127
    assert dequantize_tensor(quantize_tensor(0.0, p)) == 0.0


def test_quantize_examples():
    p1 = QuantParams(1.0, 0)
    assert quantize_tensor(0.0, p1).data == 0
    assert quantize_tensor(1.25, QuantParams(0.5, 0)).data == 2
    assert quantize_tensor(1e6, p1).data == 127
    assert quantize_tensor(-1e6, p1).data == -128


def test_dequantize_examples():
    p = QuantParams(0.5, 0)
    assert dequantize_tensor(QTensor(np.int8(0), p)) == 0.0
    assert dequantize_tensor(QTensor(np.int8(2), p)) == 1.0


def test_roundtrip_within_half_scale():
    rng = np.random.default_rng(0)
    p = QuantParams(0.037, -11)
    lo, hi = (p.qmin - p.zero_point) * p.scale, (p.qmax - p.zero_point) * p.scale
    v = rng.uniform(lo, hi, 1000)
    assert np.all(np.abs(v - dequantize_tensor(quantize_tensor(v, p))) <= p.scale / 2 + 1e-12)


@settings(max_examples=200)
@given(a=finite, b=finite, scale=st.floats(1e-3, 10), zp=st.integers(-128, 127))
def test_quantize_monotone(a, b, scale, zp):
    p = QuantParams(scale, zp)
    lo, hi = sorted((a, b))
    assert quantize_tensor(lo, p).data <= quantize_tensor(hi, p).data


def test_saturation_bounds():
    v = np.linspace(-1e9, 1e9, 101)
    assert quantize_tensor(v, QuantParams(1.0, 0, 8)).data.min() == -128
    b = quantize_tensor(v, QuantParams(1.0, 0, 16)).data
    assert b.min() == -32768 and b.max() == 32767 and b.dtype == np.int16


def test_fake_quant():
    p = QuantParams(0.5, 0)
    assert fake_quant(0.5, p) == 0.5
    assert fake_quant(0.26, p) == 0.5
    x = np.random.default_rng(1).normal(0, 5, 1000)
    once = fake_quant(x, QuantParams(0.07, 3))
    assert np.array_equal(fake_quant(once, QuantParams(0.07, 3)), once)


@settings(max_examples=100)
@given(xs=st.lists(finite, min_size=1, max_size=20), scale=st.floats(1e-3, 5), zp=st.integers(-128, 127))
def test_fake_quant_idempotent(xs, scale, zp):
    p = QuantParams(scale, zp)
    once = fake_quant(xs, p)
    assert np.array_equal(fake_quant(once, p), once)


def test_requantize_examples():
    assert requantize(0, Requantizer(12345, 7), 0) == 0
    assert requantize(512, Requantizer(1, 8), 0) == 2
    assert requantize(2**31 - 1, Requantizer(1, 0), 0) == 127
    assert requantize(-(2**31), Requantizer(1, 0), 0) == -128
    # half-even ties: 384/256 = 1.5 -> 2, 640/256 = 2.5 -> 2, -384/256 -> -2
    assert list(requantize([384, 640, -384, -640], Requantizer(1, 8))) == [2, 2, -2, -2]


@settings(max_examples=300)
@given(ratio=st.floats(1e-9, 1e3))
def test_requantizer_approximation(ratio):
    r = Requantizer.from_ratio(ratio)
    assert r.right_shift >= 0
    assert abs(r.ratio - ratio) / ratio <= 2.0 ** -15


@settings(max_examples=300)
@given(acc=st.integers(-(2**31), 2**31 - 1), mult=st.integers(0, 2**31 - 1), shift=st.integers(0, 62),
       zp=st.integers(-128, 127))
def test_requantize_matches_exact_rational(acc, mult, shift, zp):
    from fractions import Fraction
    exact = Fraction(acc * mult, 2**shift)
    expect = round(exact) + zp  # Python rounds Fractions half to even
    expect = max(-128, min(127, expect))
    assert int(requantize(acc, Requantizer(mult, shift), zp)) == expect


def test_lmqw_bit_exact_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    tensors = {
        "conv.weight": QTensor(rng.integers(-128, 128, (3, 3, 2, 4)), QuantParams(to_f32(0.0123), -7, 8)),
        "conv.bias": QTensor(rng.integers(-32768, 32768, (4,)), QuantParams(to_f32(1e-4), 0, 16)),
        "acc": QTensor(rng.integers(-2**31, 2**31, (2, 5)), QuantParams(to_f32(3.5), 1, 32)),
        "ünï.act": QTensor(np.zeros((0,), np.int8), QuantParams(to_f32(1 / 255), -128, 8)),
    }
    path = tmp_path / "w.lmqw"
    blob = save_lmqw(tensors, path)
    assert blob[:4] == b"LMQW" and path.read_bytes() == blob
    back = load_lmqw(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k] == tensors[k]
    assert save_lmqw(back) == blob
    with pytest.raises(ValueError):
        load_lmqw(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        load_lmqw(blob + b"\0")


def test_qtensor_range_checked():
    with pytest.raises(ValueError):
        QTensor(np.array([200]), QuantParams(1.0, 0, 8))
    with pytest.raises(ValueError):
        QuantParams(0.0)
    with pytest.raises(ValueError):
        QuantParams(1.0, 0, 12)

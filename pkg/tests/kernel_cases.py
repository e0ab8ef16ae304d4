"""Randomised kernel-vs-oracle trials. Each ``trial_*`` draws one small instance
and returns the largest output difference in LSBs."""

import numpy as np

from cgraseg import kernels as K
from cgraseg.fixedpoint import QTensor, QuantParams
from cgraseg.graph import Conv2D

from oracles import conv_direct, deq, pool_direct, quant, range_params


def rand_params(rng, bits=8):
    return QuantParams(float(rng.uniform(0.005, 0.1)), int(rng.integers(-30, 31)), bits)


def rand_q(rng, shape, params=None):
    p = params or rand_params(rng)
    return QTensor(rng.integers(-128, 128, size=shape), p)


def _diff(got: QTensor, expect_q) -> int:
    return int(np.abs(got.data.astype(np.int64) - expect_q).max(initial=0))


def _out_params(real):
    s, zp = range_params(real)
    return QuantParams(s, zp)


def trial_conv(rng, variant=None):
    variant = variant or rng.choice(["standard", "depthwise", "pointwise", "asym31", "asym13", "dilated"])
    H, W = rng.integers(3, 8, size=2)
    C = int(rng.integers(1, 5))
    if variant == "depthwise":
        kind = Conv2D(3, 3, C, groups=C, stride=int(rng.integers(1, 3)))
    elif variant == "pointwise":
        kind = Conv2D(1, 1, int(rng.integers(1, 6)))
    elif variant == "asym31":
        kind = Conv2D(3, 1, int(rng.integers(1, 5)))
    elif variant == "asym13":
        kind = Conv2D(1, 3, int(rng.integers(1, 5)))
    elif variant == "dilated":
        kind = Conv2D(3, 3, C, groups=C, dilation=2)
    else:
        kind = Conv2D(3, 3, int(rng.integers(1, 5)), stride=int(rng.integers(1, 3)))
    x = rand_q(rng, (H, W, C))
    cg = C // kind.groups
    w = rand_q(rng, (kind.kernel_h, kind.kernel_w, cg, kind.out_channels))
    b = rng.integers(-2000, 2000, size=kind.out_channels)
    bias_real = b * x.params.scale * w.params.scale
    real = conv_direct(deq(x.data, x.params.scale, x.params.zero_point),
                       deq(w.data, w.params.scale, w.params.zero_point), bias_real,
                       kind.stride, kind.dilation, kind.groups)
    op = _out_params(real)
    got = K.conv2d_q(x, w, b, kind, op)
    return _diff(got, quant(real, op.scale, op.zero_point))


def trial_pool(rng):
    mode = rng.choice(["max", "avg"])
    window = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    x = rand_q(rng, (int(rng.integers(window, 9)), int(rng.integers(window, 9)), int(rng.integers(1, 4))))
    real = pool_direct(deq(x.data, x.params.scale, x.params.zero_point), mode, window, stride)
    got = K.pool_q(x, mode, window, stride)
    return _diff(got, quant(real, x.params.scale, x.params.zero_point))


def trial_global_pool(rng):
    mode = rng.choice(["max", "avg"])
    x = rand_q(rng, (int(rng.integers(1, 17)), int(rng.integers(1, 17)), int(rng.integers(1, 9))))
    r = deq(x.data, x.params.scale, x.params.zero_point)
    real = r.max(axis=(0, 1)) if mode == "max" else r.mean(axis=(0, 1))
    got = K.global_pool_q(x, mode)
    return _diff(got, quant(real.reshape(1, 1, -1), x.params.scale, x.params.zero_point))


def trial_upsample(rng):
    f = int(rng.integers(2, 5))
    x = rand_q(rng, (int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 4))))
    got = K.upsample_nearest_q(x, f)
    H, W, C = got.shape
    expect = np.empty((H, W, C), dtype=np.int64)
    for y in range(H):
        for xx in range(W):
            expect[y, xx] = x.data[y // f, xx // f]
    return _diff(got, expect)


def trial_elementwise(rng):
    kind = rng.choice(["add", "multiply"])
    shape = (int(rng.integers(1, 7)), int(rng.integers(1, 7)), int(rng.integers(1, 5)))
    a = rand_q(rng, shape)
    bshape = (1, 1, shape[2]) if kind == "multiply" and rng.random() < 0.5 else shape
    b = rand_q(rng, bshape)
    ra, rb = deq(a.data, a.params.scale, a.params.zero_point), deq(b.data, b.params.scale, b.params.zero_point)
    real = ra + rb if kind == "add" else ra * rb
    op = _out_params(real)
    return _diff(K.elementwise_q(a, b, kind, op), quant(real, op.scale, op.zero_point))


def trial_concat(rng):
    hw = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
    parts = [rand_q(rng, (*hw, int(rng.integers(1, 4)))) for _ in range(int(rng.integers(1, 4)))]
    reals = [deq(t.data, t.params.scale, t.params.zero_point) for t in parts]
    real = np.concatenate(reals, axis=-1)
    op = _out_params(real)
    return _diff(K.concat_q(parts, op), quant(real, op.scale, op.zero_point))


def trial_dense(rng):
    n_in, n_out = int(rng.integers(1, 17)), int(rng.integers(1, 9))
    x = rand_q(rng, (1, 1, n_in))
    w = rand_q(rng, (n_in, n_out))
    b = rng.integers(-2000, 2000, size=n_out)
    real = (deq(x.data, x.params.scale, x.params.zero_point).reshape(-1)
            @ deq(w.data, w.params.scale, w.params.zero_point)) + b * x.params.scale * w.params.scale
    op = _out_params(real)
    return _diff(K.dense_q(x, w, b, op), quant(real.reshape(1, 1, -1), op.scale, op.zero_point))


def trial_activation(rng):
    fn = rng.choice(["relu", "sigmoid", "softmax"])
    x = rand_q(rng, (int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 6))))
    r = deq(x.data, x.params.scale, x.params.zero_point)
    if fn == "relu":
        return _diff(K.activation_q(x, "relu"), quant(np.maximum(r, 0), x.params.scale, x.params.zero_point))
    op = QuantParams(1 / 255, -128)
    if fn == "sigmoid":
        real = 1 / (1 + np.exp(-r))
    else:
        e = np.exp(r - r.max(axis=-1, keepdims=True))
        real = e / e.sum(axis=-1, keepdims=True)
    return _diff(K.activation_q(x, fn, op), quant(real, op.scale, op.zero_point))


TRIALS = {
    "conv2d_q": trial_conv,
    "pool_q": trial_pool,
    "global_pool_q": trial_global_pool,
    "upsample_nearest_q": trial_upsample,
    "elementwise_q": trial_elementwise,
    "concat_q": trial_concat,
    "dense_q": trial_dense,
    "activation_q": trial_activation,
}


def worst_case(name, n, seed=0):
    rng = np.random.default_rng(seed)
    return max(TRIALS[name](rng) for _ in range(n))

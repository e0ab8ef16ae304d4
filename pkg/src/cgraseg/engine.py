"""Quantized graph execution plus synthetic-weight generation with range calibration.

Tensor store naming (also the LMQW file layout):

    "<node>.weight"  int8 kernel, conv (kh, kw, c_in/groups, c_out) or dense (in, out)
    "<node>.bias"    int16, scale = input scale * weight scale, zero point 0
    "<node>.act"     empty int8 tensor carrying the node's output QuantParams
    "input.act"      input quantization
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import kernels as K
from .fixedpoint import (QTensor, QuantParams, calibrate_affine, dequantize_tensor,
                         quantize_tensor, to_f32)
from .graph import (INPUT_ID, Activation, Add, ChannelSlice, Concat, Conv2D, Dense, GlobalPool,
                    LayerGraph, Multiply, Pool, UpsampleNearest, topological_order)

# bytes 0..255 -> real [0, 1], code = byte - 128
INPUT_PARAMS = QuantParams(to_f32(1.0 / 255.0), -128, 8)


def params_tensor(p: QuantParams) -> QTensor:
    return QTensor(np.zeros((0,), dtype=p.dtype), p)


def quantize_image(img: np.ndarray, params: QuantParams = INPUT_PARAMS) -> QTensor:
    """uint8 (h, w, c) image onto the input grid; exact for the default params."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError("image must be uint8")
    if params == INPUT_PARAMS:
        return QTensor((img.astype(np.int16) - 128).astype(np.int8), params)
    return quantize_tensor(img / 255.0, params)


def _keeps_params(kind) -> bool:
    return isinstance(kind, (Pool, GlobalPool, UpsampleNearest, ChannelSlice)) or \
        (isinstance(kind, Activation) and kind.fn == "relu")


def execute_node(node, ins: list[QTensor], tensors: Mapping[str, QTensor]) -> QTensor:
    k = node.kind
    x = ins[0]
    out_p = tensors[f"{node.id}.act"].params if f"{node.id}.act" in tensors else None
    if isinstance(k, Conv2D):
        return K.conv2d_q(x, tensors[f"{node.id}.weight"], tensors[f"{node.id}.bias"], k, out_p)
    if isinstance(k, Dense):
        return K.dense_q(x, tensors[f"{node.id}.weight"], tensors[f"{node.id}.bias"], out_p)
    if isinstance(k, Pool):
        return K.pool_q(x, k.mode, k.window, k.stride)
    if isinstance(k, GlobalPool):
        return K.global_pool_q(x, k.mode)
    if isinstance(k, UpsampleNearest):
        return K.upsample_nearest_q(x, k.factor)
    if isinstance(k, ChannelSlice):
        return K.slice_q(x, k.start, k.stop)
    if isinstance(k, Concat):
        return K.concat_q(ins, out_p)
    if isinstance(k, Add):
        return K.add_n_q(ins, out_p)
    if isinstance(k, Multiply):
        y = ins[0]
        for other in ins[1:]:
            y = K.elementwise_q(y, other, "multiply", out_p)
        return y
    if isinstance(k, Activation):
        return K.activation_q(x, k.fn, out_p)
    raise ValueError(f"no kernel for {k!r}")


def run_graph(graph: LayerGraph, tensors: Mapping[str, QTensor], x: QTensor,
              keep: bool = True) -> dict[str, QTensor]:
    """Execute every node; returns all activations (``keep``) or only the outputs."""
    if x.shape != tuple(graph.input_shape.as_list()):
        raise ValueError(f"input {x.shape} does not match graph input {graph.input_shape}")
    vals = {INPUT_ID: x}
    consumers = graph.consumers()
    remaining = {nid: len(c) for nid, c in consumers.items()}
    outputs = set(graph.outputs)
    for nid in topological_order(graph):
        node = graph[nid]
        vals[nid] = execute_node(node, [vals[s] for s in node.inputs], tensors)
        if not keep:
            for s in node.inputs:
                remaining[s] -= 1
                if remaining[s] == 0 and s not in outputs:
                    del vals[s]
    return vals


def predict_classes(graph: LayerGraph, tensors: Mapping[str, QTensor], x: QTensor) -> np.ndarray:
    """Per-pixel argmax of the main head.

    Argmax is taken on the integer logits feeding the head softmax (softmax is
    monotone for shared params) and replicated through trailing upsamples."""
    vals = run_graph(graph, tensors, x, keep=True)
    nid, factor = graph.outputs[0], 1
    while isinstance(graph[nid].kind, UpsampleNearest):
        factor *= graph[nid].kind.factor
        nid = graph[nid].inputs[0]
    node = graph[nid]
    src = vals[node.inputs[0]] if isinstance(node.kind, Activation) and node.kind.fn == "softmax" else vals[nid]
    cls = np.argmax(src.data, axis=-1).astype(np.uint8)
    return cls.repeat(factor, axis=0).repeat(factor, axis=1)


# ---------------------------------------------------------------------------
# real-valued reference ops used for calibration

def conv2d_real(x: np.ndarray, w: np.ndarray, b: np.ndarray, k: Conv2D) -> np.ndarray:
    H, W, C = x.shape
    G = k.groups
    cg, og = C // G, k.out_channels // G
    Ho, pt, pb = K.same_padding(H, k.stride, k.extent_h)
    Wo, pl, pr = K.same_padding(W, k.stride, k.extent_w)
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
    wr = w.reshape(k.kernel_h, k.kernel_w, cg, G, og)
    out = np.broadcast_to(b.reshape(G, og), (Ho, Wo, G, og)).astype(np.float64)
    d, s = k.dilation, k.stride
    for i in range(k.kernel_h):
        for j in range(k.kernel_w):
            p = xp[i * d: i * d + (Ho - 1) * s + 1: s, j * d: j * d + (Wo - 1) * s + 1: s]
            out = out + np.einsum("hwgc,cgo->hwgo", p.reshape(Ho, Wo, G, cg), wr[i, j])
    return out.reshape(Ho, Wo, k.out_channels)


def _real_output(node, ins: list[np.ndarray], wf: np.ndarray | None, bf: np.ndarray | None) -> np.ndarray:
    k = node.kind
    if isinstance(k, Conv2D):
        return conv2d_real(ins[0], wf, bf, k)
    if isinstance(k, Dense):
        return (ins[0].reshape(-1) @ wf + bf).reshape(1, 1, -1)
    if isinstance(k, Concat):
        return np.concatenate(ins, axis=-1)
    if isinstance(k, Add):
        return sum(ins)
    if isinstance(k, Multiply):
        y = ins[0]
        for o in ins[1:]:
            y = y * o
        return y
    raise ValueError(f"no calibration rule for {k!r}")


def _act_params(values: np.ndarray) -> QuantParams:
    p = calibrate_affine(float(values.min()), float(values.max()), 8)
    return QuantParams(to_f32(p.scale), p.zero_point, 8)


def synthesize_weights(graph: LayerGraph, seed: int = 0, calib: np.ndarray | None = None,
                       bias_std: float = 0.05) -> dict[str, QTensor]:
    """Random He-initialised weights, quantized, with activation ranges calibrated
    on ``calib`` (uint8 image; random if omitted) through the integer pipeline."""
    rng = np.random.default_rng(seed)
    shape = tuple(graph.input_shape.as_list())
    if calib is None:
        calib = rng.integers(0, 256, size=shape, dtype=np.uint8)
    tensors: dict[str, QTensor] = {"input.act": params_tensor(INPUT_PARAMS)}
    vals = {INPUT_ID: quantize_image(calib)}
    for nid in topological_order(graph):
        node = graph[nid]
        k = node.kind
        ins = [vals[s] for s in node.inputs]
        if isinstance(k, (Conv2D, Dense)):
            if isinstance(k, Conv2D):
                cg = ins[0].shape[-1] // k.groups
                wshape = (k.kernel_h, k.kernel_w, cg, k.out_channels)
                fan_in = k.kernel_h * k.kernel_w * cg
            else:
                wshape = (ins[0].shape[-1], k.out_units)
                fan_in = wshape[0]
            wf = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape)
            bf = rng.normal(0.0, bias_std, size=wshape[-1])
            wp = _act_params(wf)
            wq = quantize_tensor(wf, wp)
            bias_scale = ins[0].params.scale * wp.scale
            bp = QuantParams(to_f32(bias_scale), 0, 16)
            bq = QTensor(np.clip(np.rint(bf / bias_scale), -32768, 32767).astype(np.int16), bp)
            real = _real_output(node, [dequantize_tensor(t) for t in ins],
                                dequantize_tensor(wq), bq.data * bias_scale)
            tensors[f"{nid}.weight"], tensors[f"{nid}.bias"] = wq, bq
            tensors[f"{nid}.act"] = params_tensor(_act_params(real))
        elif isinstance(k, Activation) and k.fn in ("sigmoid", "softmax"):
            tensors[f"{nid}.act"] = params_tensor(K.UNIT_PARAMS)
        elif _keeps_params(k):
            tensors[f"{nid}.act"] = params_tensor(ins[0].params)
        else:
            real = _real_output(node, [dequantize_tensor(t) for t in ins], None, None)
            tensors[f"{nid}.act"] = params_tensor(_act_params(real))
        vals[nid] = execute_node(node, ins, tensors)
    return tensors

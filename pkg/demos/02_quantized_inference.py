"""Integer-only inference of the desk-scale model on a synthetic street-like image.

Weights are random but calibrated, so the class map is meaningless; the point is
that every tensor stays int8 (int32 in the accumulators) and runs are bit-reproducible.

    python3 demos/02_quantized_inference.py
"""

import time

import numpy as np

from cgraseg import ModelConfig, build_lmiinet
from cgraseg.engine import predict_classes, quantize_image, run_graph, synthesize_weights
from cgraseg.fixedpoint import load_lmqw, save_lmqw

graph = build_lmiinet(ModelConfig(scale_divisor=8))
h, w = graph.input_shape.height, graph.input_shape.width

# sky on top, road below, a few bright blobs
yy, xx = np.mgrid[0:h, 0:w]
img = np.zeros((h, w, 3), np.uint8)
img[: h // 3] = (120, 170, 230)
img[h // 3:] = (90, 90, 95)
for cy, cx in [(150, 30), (170, 90)]:
    img[(yy - cy) ** 2 + (xx - cx) ** 2 < 120] = (220, 40, 40)

t = time.perf_counter()
tensors = synthesize_weights(graph, seed=0, calib=img)
print(f"synthesized {len(tensors)} tensors in {time.perf_counter() - t:.2f}s")

blob = save_lmqw(tensors)
assert all(load_lmqw(blob)[k] == v for k, v in tensors.items())
print(f"LMQW container: {len(blob)} bytes, round-trip exact")

x = quantize_image(img, tensors["input.act"].params)
t = time.perf_counter()
classes = predict_classes(graph, tensors, x)
print(f"inference: {time.perf_counter() - t:.2f}s, class map {classes.shape}, "
      f"{len(np.unique(classes))} distinct classes")
assert np.array_equal(classes, predict_classes(graph, tensors, x))

acts = run_graph(graph, tensors, x)
logits = acts["head_cls"]
print(f"head logits dtype {logits.data.dtype}, scale {logits.params.scale:.4g}, zp {logits.params.zero_point}")

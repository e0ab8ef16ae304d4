"""Pixel accuracy and mean IoU over a few noisy prediction maps.

    python3 demos/04_metrics.py
"""

import numpy as np

from cgraseg.metrics import ConfusionMatrix, mean_iou, pixel_accuracy

rng = np.random.default_rng(0)
cm = ConfusionMatrix(num_classes=5)

for frame in range(4):
    gt = np.repeat(np.arange(5), 20)[None, :].repeat(30, axis=0)  # vertical class bands
    gt[:3] = 255  # unlabeled border
    pred = gt.copy()
    noise = rng.random(gt.shape) < 0.1 * (frame + 1)
    pred[noise] = rng.integers(0, 5, noise.sum())
    pred[pred == 255] = 0
    cm.update(pred, gt)
    print(f"after frame {frame}: acc {pixel_accuracy(cm):.4f}, mIoU {mean_iou(cm):.4f}")

print("per-class IoU:", np.round(cm.per_class_iou(), 3))
print("confusion (rows = ground truth):")
print(cm.counts)

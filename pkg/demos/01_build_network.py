"""Build the segmentation network at full and desk scale and inspect it.

    python3 demos/01_build_network.py
"""

from collections import Counter

from cgraseg import HwConfig, ModelConfig, build_lmiinet, parameter_summary, validate_hw_constraints

full = build_lmiinet()
print(f"full scale: {len(full)} nodes, input {full.input_shape}")
for out in full.outputs:
    print(f"  output {out}: {full[out].shape}")

# MACs concentrate in the early, high-resolution convolutions.
heavy = sorted(full.nodes, key=lambda n: n.macs, reverse=True)[:5]
for n in heavy:
    print(f"  {n.id:<22} {n.kind.kind:<8} {n.shape!s:<14} {n.macs / 1e6:9.1f} M MACs")
print(f"  total {sum(n.macs for n in full.nodes) / 1e9:.2f} G MACs")

summary = parameter_summary(full)
print(f"parameters: {summary.total_weights} weights, {summary.total_biases} biases, "
      f"{summary.bytes_at(8, 16) / 1024:.1f} KiB at int8/int16")

print("node kinds:", dict(Counter(n.kind.kind for n in full.nodes)))

# Dividing every channel count and the input by 8 gives a model that runs in a fraction of a second.
desk = build_lmiinet(ModelConfig(scale_divisor=8))
print(f"desk scale: {len(desk)} nodes, input {desk.input_shape}, "
      f"hardware violations: {validate_hw_constraints(desk, HwConfig())}")

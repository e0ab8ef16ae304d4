"""Cycle, utilization and latency estimates for the 16x96 PE array.

Compares three views: the measured per-layer cycles, the analytic estimator run over
the same layers, and the estimator run over the graph this package builds.

    python3 demos/03_performance_report.py
"""

from cgraseg import HwConfig
from cgraseg.lmiinet import build_lmiinet
from cgraseg.perf import (EfficiencyModel, analyze, analyze_reference, compare_to_reference,
                          default_reference, fuse_layers, report_to_csv)

hw = HwConfig()
ref = default_reference()

measured = analyze_reference(ref, hw)
print(report_to_csv(measured))

estimated = analyze_reference(ref, hw, EfficiencyModel(0.75))
print("layer  measured  estimated   rel.err")
for d, m, e in zip(compare_to_reference(estimated, ref), measured.rows, estimated.rows):
    print(f"{d.layer_index:>5} {m.cycles:>9} {e.cycles:>10} {d.cycle_rel_err:>9.1%}")
print(f"uncalibrated total: {estimated.latency_ms:.2f} ms vs measured {measured.latency_ms:.2f} ms")

# The built graph fuses activations and pools into their producing conv; it has more
# layers than the 15 measured ones, so only totals are comparable.
graph = build_lmiinet()
layers = fuse_layers(graph)
rep = analyze(graph, hw)
print(f"built graph: {len(layers)} fused layers, {rep.total_ops / 1e9:.2f} G MACs, "
      f"{rep.latency_ms:.2f} ms, {rep.fps:.1f} FPS at {hw.clock_hz / 1e6:.0f} MHz")

fast = analyze_reference(ref, HwConfig(clock_hz=400e6))
print(f"same cycles at 400 MHz: {fast.latency_ms:.2f} ms")

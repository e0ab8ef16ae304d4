import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from cgraseg.graph import LayerGraph, TensorShape
from cgraseg.hwconfig import HwConfig
from cgraseg.lmiinet import ModelConfig, build_lmiinet
from cgraseg.perf import (EfficiencyModel, FusedLayer, LayerPerf, MissingEfficiencyError, PerfReport,
                          ReferenceMismatchError, analyze, analyze_layers, analyze_reference,
                          compare_to_reference, default_reference, estimate_cycles, estimate_memory,
                          fuse_layers, ideal_cycles, read_reference_csv, report_to_csv, report_to_json,
                          utilization)

HW = HwConfig()
REF = default_reference()


def test_ideal_cycles_examples():
    assert ideal_cycles(1_359_000_000, HW) == 884_766
    assert ideal_cycles(0, HW) == 0
    assert ideal_cycles(1, HW) == 1
    assert ideal_cycles(1536, HW) == 1 and ideal_cycles(1537, HW) == 2


def test_estimate_examples():
    row2 = FusedLayer(2, 1_359_000_000, "Conv+Pool")
    got = estimate_cycles(row2, HW, EfficiencyModel(0.9931, pass_overhead=0))
    assert abs(got - 890_883) / 890_883 < 1e-4
    row13 = FusedLayer(13, 1, "Conv")
    assert estimate_cycles(row13, HW, EfficiencyModel(overrides={13: 2_105_345})) == 2_105_345
    with pytest.raises(MissingEfficiencyError):
        estimate_cycles(row2, HW, EfficiencyModel(default=None))
    assert estimate_cycles(row2, HW, EfficiencyModel(None, per_type={"Conv+Pool": 1.0}, pass_overhead=0)) == 884_766


def test_stem_estimate_within_ten_percent():
    stem = fuse_layers(build_lmiinet())[0]
    assert stem.type_tag.startswith("Conv")
    got = estimate_cycles(stem, HW, EfficiencyModel())
    assert abs(got - REF[0].cycles) / REF[0].cycles <= 0.10


def test_utilization_examples():
    assert utilization(1_359_000_000, 890_883, HW) == pytest.approx(0.9931, abs=1e-4)
    assert utilization(339_700_000, 327_681, HW) == pytest.approx(0.675, abs=1e-3)
    with pytest.raises(ZeroDivisionError):
        utilization(10, 0, HW)


def test_reference_utilization_identity():
    # published utilization equals ops / (cycles * PEs) to within rounding of the table
    worst = max(abs(100 * utilization(r.ops, r.cycles, HW) - r.util_pct) for r in REF)
    assert worst <= 0.15
    low = min(REF, key=lambda r: r.utilization)
    assert utilization(low.ops, low.cycles, HW) == pytest.approx(low.utilization, abs=2e-3)


def test_memory_model():
    stem = fuse_layers(build_lmiinet())[0]
    assert estimate_memory(stem, HW) == 18_875_016
    tiny = FusedLayer(0, 1, "Conv", out_shape=TensorShape(1, 1, 1), in_shapes=(TensorShape(1, 1, 1),),
                      weight_elems=1)
    assert estimate_memory(tiny, HW) == 3


@pytest.mark.parametrize("h,w", [(8, 8), (16, 32), (40, 24)])
def test_memory_activations_quadruple_with_doubled_resolution(h, w):
    def mem(hh, ww):
        return estimate_memory(FusedLayer(0, 0, "Conv", out_shape=TensorShape(hh, ww, 16),
                                          in_shapes=(TensorShape(hh, ww, 8),), weight_elems=0), HW)
    assert mem(2 * h, 2 * w) == 4 * mem(h, w)


def test_weight_reload_when_ram_exceeded():
    cap = HW.weight_ram_depth * HW.pe_cols
    small = FusedLayer(0, 0, "Conv", out_shape=TensorShape(64, 4, 1), weight_elems=cap)
    big = FusedLayer(0, 0, "Conv", out_shape=TensorShape(64, 4, 1), weight_elems=cap + 1)
    act = 64 * 4
    assert estimate_memory(small, HW) - act == cap
    assert estimate_memory(big, HW) - act == (cap + 1) * 4


def test_reference_totals():
    rep = analyze_reference(REF)
    assert rep.total_cycles == 10_020_784
    assert f"{rep.latency_ms:.3f}" == "50.104"
    assert f"{rep.fps:.2f}" == "19.96"
    assert all(d.ok for d in compare_to_reference(rep, REF))


def test_clock_scaling_and_batch():
    rep = analyze_reference(REF)
    fast = analyze_reference(REF, HwConfig(clock_hz=400e6))
    assert fast.latency_ms == pytest.approx(rep.latency_ms / 2)
    layers = fuse_layers(build_lmiinet(ModelConfig(scale_divisor=8)))
    one = analyze_layers(layers, HW, EfficiencyModel(), batch=1)
    two = analyze_layers(layers, HW, EfficiencyModel(), batch=2)
    assert two.total_cycles == 2 * one.total_cycles
    assert two.fps == pytest.approx(one.fps)
    with pytest.raises(ValueError):
        analyze_layers(layers, HW, EfficiencyModel(), batch=3)


def test_empty_graph_report():
    rep = analyze(LayerGraph((), TensorShape(8, 8, 3), ()))
    assert rep.rows == [] and rep.total_cycles == 0 and rep.fps is None
    assert report_to_csv(rep).rstrip().endswith("fps,")


def test_compare_boundaries():
    ref = [LayerPerf(0, 1536 * 1000, 1000, 1.0, 0.0, "Conv")]

    def row(cycles):
        return [LayerPerf(0, 1536 * 1000, cycles, 1536 * 1000 / (cycles * 1536), 0.0, "Conv")]
    assert compare_to_reference(row(1100), ref, util_tol_pp=100)[0].cycles_ok
    assert not compare_to_reference(row(1101), ref, util_tol_pp=100)[0].cycles_ok
    assert compare_to_reference(row(900), ref, util_tol_pp=100)[0].cycles_ok
    with pytest.raises(ReferenceMismatchError):
        compare_to_reference(row(1000) * 2, ref)


def test_fusion_tags():
    layers = fuse_layers(build_lmiinet())
    tags = {l.type_tag for l in layers}
    assert "Conv+ReLU" in tags and "Conv+Softmax" in tags and "Dense+Sigmoid" in tags
    assert layers[0].name == "stem"
    assert [l.index for l in layers] == list(range(len(layers)))


@settings(max_examples=100, deadline=None)
@given(ops=st.integers(0, 10**10), eff=st.floats(0.05, 1.0), cout=st.integers(1, 512), h=st.integers(1, 512))
def test_estimate_never_beats_roofline(ops, eff, cout, h):
    layer = FusedLayer(0, ops, "Conv", out_shape=TensorShape(h, 4, cout))
    cycles = estimate_cycles(layer, HW, EfficiencyModel(eff))
    assert cycles >= ideal_cycles(ops, HW)
    if cycles:
        assert utilization(ops, cycles, HW) <= 1.0


def test_csv_deterministic_and_readable(tmp_path):
    g = build_lmiinet(ModelConfig(scale_divisor=8))
    a, b = report_to_csv(analyze(g)), report_to_csv(analyze(g))
    assert a == b
    p = tmp_path / "r.csv"
    p.write_text(a)
    rows = read_reference_csv(p)
    rep = analyze(g)
    assert [r.cycles for r in rows] == [r.cycles for r in rep.rows]
    doc = json.loads(report_to_json(rep))
    assert doc["total_cycles"] == rep.total_cycles
    assert math.isclose(doc["latency_ms"], rep.latency_ms)


def test_reference_csv_loaded():
    assert len(REF) == 15
    assert REF[0].ops == 339_700_000 and REF[0].type_tag == "Conv+Pool"
    assert REF[14].type_tag == "Conv+Softmax"
    assert isinstance(analyze_reference(REF), PerfReport)

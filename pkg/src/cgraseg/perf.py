"""Layer-wise cycle, utilization and memory model of the PE array.

A *fused layer* is one MAC-carrying node (conv or dense) together with any
pool/activation nodes that immediately and exclusively follow it. Zero-MAC
nodes elsewhere (concat, add, multiply, slices, upsample, global pools) are
folded into the pass of the layer that consumes them and get no row.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .graph import (INPUT_ID, Activation, Conv2D, Dense, LayerGraph, Pool, TensorShape,
                    UpsampleNearest, is_inferred, topological_order, weight_count)
from .hwconfig import HwConfig

CSV_HEADER = ["layer", "ops", "cycles", "util_pct", "mem_mb", "type"]
_ACT_TAGS = {"relu": "ReLU", "sigmoid": "Sigmoid", "softmax": "Softmax"}


class MissingEfficiencyError(KeyError):
    pass


class ReferenceMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class FusedLayer:
    index: int
    ops: int
    type_tag: str
    name: str = ""
    out_shape: TensorShape | None = None
    in_shapes: tuple[TensorShape, ...] = ()
    weight_elems: int = 0
    node_ids: tuple[str, ...] = ()


@dataclass
class EfficiencyModel:
    """Fraction of peak PE throughput achieved per layer type.

    ``overrides`` pins measured cycle counts by layer index.
    ``pass_overhead`` is the pipeline-fill cost charged per spatial/channel pass.
    """

    default: float | None = 0.75
    per_type: dict[str, float] = field(default_factory=dict)
    overrides: dict[int, int] = field(default_factory=dict)
    pass_overhead: int = 1

    def __post_init__(self):
        for v in [self.default, *self.per_type.values()]:
            if v is not None and not 0 < v <= 1:
                raise ValueError(f"efficiency {v} outside (0, 1]")
        if self.pass_overhead < 0:
            raise ValueError("pass_overhead must be >= 0")

    def for_tag(self, tag: str) -> float:
        if tag in self.per_type:
            return self.per_type[tag]
        if self.default is None:
            raise MissingEfficiencyError(f"no efficiency defined for layer type {tag!r}")
        return self.default

    @classmethod
    def from_reference(cls, rows: Sequence["LayerPerf"], **kw) -> "EfficiencyModel":
        return cls(overrides={r.layer_index: r.cycles for r in rows}, **kw)


@dataclass(frozen=True)
class LayerPerf:
    layer_index: int
    ops: int
    cycles: int
    utilization: float
    mem_traffic: float
    type_tag: str
    name: str = ""

    @property
    def util_pct(self) -> float:
        return 100.0 * self.utilization


@dataclass
class PerfReport:
    rows: list[LayerPerf]
    clock_hz: float
    batch: int = 1

    @property
    def total_cycles(self) -> int:
        return sum(r.cycles for r in self.rows)

    @property
    def latency_seconds(self) -> float:
        return self.total_cycles / self.clock_hz

    @property
    def latency_ms(self) -> float:
        return 1e3 * self.latency_seconds

    @property
    def fps(self) -> float | None:
        c = self.total_cycles
        return self.batch * self.clock_hz / c if c else None

    @property
    def total_ops(self) -> int:
        return sum(r.ops for r in self.rows)


# ---------------------------------------------------------------------------
# per-layer quantities

def ideal_cycles(ops: int, hw: HwConfig) -> int:
    return -(-int(ops) // hw.num_pes)


def passes(layer: FusedLayer, hw: HwConfig) -> int:
    if layer.out_shape is None:
        return 1
    return -(-layer.out_shape.channels // hw.pe_cols) * -(-layer.out_shape.height // hw.pe_rows)


def estimate_cycles(layer: FusedLayer, hw: HwConfig, eff: EfficiencyModel) -> int:
    if layer.index in eff.overrides:
        return int(eff.overrides[layer.index])
    e = eff.for_tag(layer.type_tag)
    return math.ceil(ideal_cycles(layer.ops, hw) / e) + eff.pass_overhead * passes(layer, hw)


def utilization(ops: int, cycles: int, hw: HwConfig) -> float:
    if cycles <= 0:
        raise ZeroDivisionError("utilization undefined for zero cycles")
    return ops / (cycles * hw.num_pes)


def estimate_memory(layer: FusedLayer, hw: HwConfig) -> int:
    """Bytes moved: inputs + outputs + weights, weights re-streamed per row pass
    when they overflow the on-chip weight RAM."""
    act_b = hw.act_bits / 8
    in_bytes = sum(s.size for s in layer.in_shapes) * act_b
    out_bytes = layer.out_shape.size * act_b if layer.out_shape else 0
    w_bytes = layer.weight_elems * hw.weight_bits / 8
    capacity = hw.weight_ram_depth * hw.pe_cols * hw.weight_bits / 8
    reloads = 1
    if w_bytes > capacity and layer.out_shape is not None:
        reloads = -(-layer.out_shape.height // hw.pe_rows)
    return int(in_bytes + out_bytes + w_bytes * reloads)


# ---------------------------------------------------------------------------
# fusion

def fuse_layers(graph: LayerGraph) -> list[FusedLayer]:
    if not is_inferred(graph):
        raise ValueError("graph shapes must be inferred before analysis")
    consumers = graph.consumers()
    outputs = set(graph.outputs)
    layers = []
    for nid in topological_order(graph):
        node = graph[nid]
        if not isinstance(node.kind, (Conv2D, Dense)):
            continue
        if isinstance(node.kind, Dense):
            tag = "Dense"
        elif node.inputs[0] != INPUT_ID and isinstance(graph[node.inputs[0]].kind, UpsampleNearest):
            tag = "Upsample"
        else:
            tag = "Conv"
        members = [nid]
        tail = nid
        while tail not in outputs and len(consumers[tail]) == 1:
            nxt = graph[consumers[tail][0]]
            if isinstance(nxt.kind, Pool):
                tag += "+Pool"
            elif isinstance(nxt.kind, Activation):
                tag += "+" + _ACT_TAGS[nxt.kind.fn]
            else:
                break
            members.append(nxt.id)
            tail = nxt.id
        layers.append(FusedLayer(len(layers), node.macs, tag, nid, graph[tail].shape,
                                 node.in_shapes, weight_count(node)[0], tuple(members)))
    return layers


def reference_layers(rows: Iterable[LayerPerf]) -> list[FusedLayer]:
    return [FusedLayer(r.layer_index, r.ops, r.type_tag, r.name or f"layer{r.layer_index}")
            for r in rows]


def analyze_layers(layers: Sequence[FusedLayer], hw: HwConfig, eff: EfficiencyModel,
                   batch: int = 1, mem: Mapping[int, float] | None = None) -> PerfReport:
    if not 1 <= batch <= hw.max_batch:
        raise ValueError(f"batch {batch} outside [1, {hw.max_batch}]")
    rows = []
    for layer in layers:
        ops = layer.ops * batch
        cycles = estimate_cycles(layer, hw, eff) * batch
        util = utilization(ops, cycles, hw) if cycles else 0.0
        traffic = mem[layer.index] if mem and layer.index in mem else estimate_memory(layer, hw) * batch
        rows.append(LayerPerf(layer.index, ops, cycles, util, traffic, layer.type_tag, layer.name))
    return PerfReport(rows, hw.clock_hz, batch)


def analyze(graph: LayerGraph, hw: HwConfig = HwConfig(), eff: EfficiencyModel | None = None,
            batch: int = 1) -> PerfReport:
    return analyze_layers(fuse_layers(graph), hw, eff or EfficiencyModel(), batch)


def analyze_reference(rows: Sequence[LayerPerf], hw: HwConfig = HwConfig(),
                      eff: EfficiencyModel | None = None) -> PerfReport:
    """Analyze the reference layer sequence itself (ops and tags from the table).

    With ``eff=None`` the reference cycles are used as overrides."""
    eff = eff if eff is not None else EfficiencyModel.from_reference(rows)
    return analyze_layers(reference_layers(rows), hw, eff,
                          mem={r.layer_index: r.mem_traffic for r in rows})


# ---------------------------------------------------------------------------
# comparison

@dataclass(frozen=True)
class Deviation:
    layer_index: int
    cycle_rel_err: float
    util_diff_pp: float
    cycles_ok: bool
    util_ok: bool

    @property
    def ok(self) -> bool:
        return self.cycles_ok and self.util_ok


def compare_to_reference(report: PerfReport | Sequence[LayerPerf], reference: Sequence[LayerPerf],
                         cycle_tol: float = 0.10, util_tol_pp: float = 0.15) -> list[Deviation]:
    """Relative cycle error and utilization difference per row; a row fails only when
    strictly beyond the tolerance."""
    rows = report.rows if isinstance(report, PerfReport) else list(report)
    if len(rows) != len(reference):
        raise ReferenceMismatchError(f"{len(rows)} report rows vs {len(reference)} reference rows")
    out = []
    for r, ref in zip(rows, reference):
        rel = abs(r.cycles - ref.cycles) / ref.cycles
        du = abs(r.util_pct - ref.util_pct)
        out.append(Deviation(ref.layer_index, rel, du, rel <= cycle_tol, du <= util_tol_pp))
    return out


# ---------------------------------------------------------------------------
# CSV / JSON

def _fmt_ops(ops: int) -> str:
    s = f"{ops / 1e6:.6f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


def read_reference_csv(src: str | Path | io.TextIOBase) -> list[LayerPerf]:
    """Rows of a ``layer,ops,cycles,util_pct,mem_mb,type`` table (ops in millions).

    ``util_pct`` is kept as published; footer rows of a report are ignored."""
    text = Path(src).read_text() if isinstance(src, (str, Path)) else src.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"expected header {CSV_HEADER}, got {header}")
    rows = []
    for rec in reader:
        if not rec or len(rec) == 2:
            continue
        layer, ops, cycles, util_pct, mem_mb, tag = rec
        rows.append(LayerPerf(int(layer), round(float(ops) * 1e6), int(cycles.replace(",", "")),
                              float(util_pct) / 100.0, float(mem_mb) * 1e6, tag))
    return rows


def default_reference() -> list[LayerPerf]:
    return read_reference_csv(Path(__file__).with_name("data") / "table2.csv")


def report_to_csv(report: PerfReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report.rows:
        w.writerow([r.layer_index, _fmt_ops(r.ops), r.cycles, f"{r.util_pct:.4f}",
                    f"{r.mem_traffic / 1e6:.3f}", r.type_tag])
    w.writerow(["total_cycles", report.total_cycles])
    w.writerow(["latency_ms", f"{report.latency_ms:.3f}"])
    fps = report.fps
    w.writerow(["fps", "" if fps is None else f"{fps:.2f}"])
    return buf.getvalue()


def report_to_json(report: PerfReport) -> str:
    doc = {
        "rows": [{"layer": r.layer_index, "name": r.name, "ops": r.ops, "cycles": r.cycles,
                  "util_pct": r.util_pct, "mem_bytes": r.mem_traffic, "type": r.type_tag}
                 for r in report.rows],
        "total_cycles": report.total_cycles,
        "latency_ms": report.latency_ms,
        "fps": report.fps,
        "clock_hz": report.clock_hz,
        "batch": report.batch,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"

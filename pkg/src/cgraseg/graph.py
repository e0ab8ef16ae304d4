"""Layer-graph IR: node kinds, shape inference, MAC counting, hardware checks.

The graph is a pure activation-dataflow DAG. Weights and biases are node
attributes implied by the kind, never edges. The graph input is addressed by
the reserved id ``"input"``.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

from .hwconfig import HwConfig

INPUT_ID = "input"


class GraphError(ValueError):
    pass


class ShapeMismatchError(GraphError):
    def __init__(self, node_id: str, msg: str):
        super().__init__(f"node {node_id!r}: {msg}")
        self.node_id = node_id


class CycleError(GraphError):
    pass


class UninferredShapeError(GraphError):
    pass


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise ValueError(f"tensor dims must be >= 1: {self}")

    @property
    def size(self) -> int:
        return self.height * self.width * self.channels

    def as_list(self) -> list[int]:
        return [self.height, self.width, self.channels]

    def __str__(self) -> str:
        return f"{self.height}x{self.width}x{self.channels}"


# ---------------------------------------------------------------------------
# layer kinds

@dataclass(frozen=True)
class Conv2D:
    kernel_h: int
    kernel_w: int
    out_channels: int
    stride: int = 1
    dilation: int = 1
    groups: int = 1
    padding_mode: str = "same"

    kind = "conv2d"

    def __post_init__(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ValueError("kernel dims must be >= 1")
        if self.dilation < 1 or self.stride < 1 or self.groups < 1 or self.out_channels < 1:
            raise ValueError("stride, dilation, groups and out_channels must be >= 1")
        if self.out_channels % self.groups:
            raise ValueError("groups must divide out_channels")
        if self.padding_mode != "same":
            raise ValueError("only 'same' zero padding is supported")

    @property
    def extent_h(self) -> int:
        return self.dilation * (self.kernel_h - 1) + 1

    @property
    def extent_w(self) -> int:
        return self.dilation * (self.kernel_w - 1) + 1


@dataclass(frozen=True)
class Pool:
    mode: str
    window: int
    stride: int

    kind = "pool"

    def __post_init__(self):
        if self.mode not in ("max", "avg"):
            raise ValueError(f"pool mode must be max|avg, got {self.mode!r}")
        if self.window < 1 or self.stride < 1:
            raise ValueError("window and stride must be >= 1")


@dataclass(frozen=True)
class GlobalPool:
    mode: str

    kind = "global_pool"

    def __post_init__(self):
        if self.mode not in ("max", "avg"):
            raise ValueError(f"global pool mode must be max|avg, got {self.mode!r}")


@dataclass(frozen=True)
class UpsampleNearest:
    factor: int

    kind = "upsample"

    def __post_init__(self):
        if self.factor < 2:
            raise ValueError("upsample factor must be >= 2")


@dataclass(frozen=True)
class Concat:
    kind = "concat"


@dataclass(frozen=True)
class Add:
    kind = "add"


@dataclass(frozen=True)
class Multiply:
    kind = "multiply"


@dataclass(frozen=True)
class Dense:
    out_units: int

    kind = "dense"

    def __post_init__(self):
        if self.out_units < 1:
            raise ValueError("out_units must be >= 1")


@dataclass(frozen=True)
class Activation:
    fn: str

    kind = "activation"

    def __post_init__(self):
        if self.fn not in ("relu", "sigmoid", "softmax"):
            raise ValueError(f"unsupported activation {self.fn!r}")


@dataclass(frozen=True)
class ChannelSlice:
    """Channel range [start, stop) of the input; used for branch splits."""

    start: int
    stop: int

    kind = "slice"

    def __post_init__(self):
        if not 0 <= self.start < self.stop:
            raise ValueError(f"bad slice [{self.start}, {self.stop})")


LayerKind = Union[Conv2D, Pool, GlobalPool, UpsampleNearest, Concat, Add, Multiply,
                  Dense, Activation, ChannelSlice]
KIND_TYPES = {k.kind: k for k in (Conv2D, Pool, GlobalPool, UpsampleNearest, Concat, Add,
                                  Multiply, Dense, Activation, ChannelSlice)}
MERGE_KINDS = (Concat, Add, Multiply)


@dataclass(frozen=True)
class LayerNode:
    id: str
    kind: LayerKind
    inputs: tuple[str, ...]
    name: str = ""
    shape: TensorShape | None = None
    in_shapes: tuple[TensorShape, ...] | None = None
    macs: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if not self.name:
            object.__setattr__(self, "name", self.id)
        n = len(self.inputs)
        if isinstance(self.kind, MERGE_KINDS):
            if n < 2:
                raise GraphError(f"node {self.id!r}: {self.kind.kind} needs >= 2 inputs")
        elif n != 1:
            raise GraphError(f"node {self.id!r}: {self.kind.kind} needs exactly 1 input")


@dataclass(frozen=True)
class LayerGraph:
    nodes: tuple[LayerNode, ...]
    input_shape: TensorShape
    outputs: tuple[str, ...]
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        index = {}
        for n in self.nodes:
            if n.id == INPUT_ID or n.id in index:
                raise GraphError(f"duplicate or reserved node id {n.id!r}")
            index[n.id] = n
        object.__setattr__(self, "_index", index)
        for n in self.nodes:
            for src in n.inputs:
                if src != INPUT_ID and src not in index:
                    raise GraphError(f"node {n.id!r} references unknown input {src!r}")
        if self.nodes and not self.outputs:
            raise GraphError("a non-empty graph needs at least one output")
        for o in self.outputs:
            if o not in index:
                raise GraphError(f"unknown output {o!r}")

    def __getitem__(self, node_id: str) -> LayerNode:
        return self._index[node_id]

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    def consumers(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {INPUT_ID: []}
        out.update({n.id: [] for n in self.nodes})
        for n in self.nodes:
            for src in n.inputs:
                out[src].append(n.id)
        return out

    def shape_of(self, node_id: str) -> TensorShape:
        if node_id == INPUT_ID:
            return self.input_shape
        shape = self[node_id].shape
        if shape is None:
            raise UninferredShapeError(f"node {node_id!r} has no inferred shape")
        return shape

    def replace_nodes(self, nodes: Iterable[LayerNode]) -> "LayerGraph":
        return LayerGraph(tuple(nodes), self.input_shape, self.outputs)


# ---------------------------------------------------------------------------
# ordering and shape inference

def topological_order(graph: LayerGraph) -> list[str]:
    """Kahn's algorithm; ready nodes are released in insertion order."""
    rank = {n.id: i for i, n in enumerate(graph.nodes)}
    indeg = {n.id: sum(1 for s in n.inputs if s != INPUT_ID) for n in graph.nodes}
    consumers = graph.consumers()
    ready = [rank[nid] for nid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = graph.nodes[heapq.heappop(ready)].id
        order.append(nid)
        for c in consumers[nid]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, rank[c])
    if len(order) != len(graph.nodes):
        stuck = sorted(set(indeg) - set(order), key=rank.__getitem__)
        raise CycleError(f"cycle detected among nodes {stuck}")
    return order


def _check_reachable(graph: LayerGraph, order: Sequence[str]) -> None:
    reached = {INPUT_ID}
    for nid in order:
        if any(s in reached for s in graph[nid].inputs):
            reached.add(nid)
    missing = [n.id for n in graph.nodes if n.id not in reached]
    if missing:
        raise GraphError(f"nodes unreachable from the input: {missing}")


def _same_out(H: int, s: int) -> int:
    return -(-H // s)


def output_shape(node: LayerNode, ins: Sequence[TensorShape]) -> TensorShape:
    k = node.kind
    x = ins[0]
    if isinstance(k, Conv2D):
        if x.channels % k.groups:
            raise ShapeMismatchError(node.id, f"groups {k.groups} do not divide {x.channels} input channels")
        return TensorShape(_same_out(x.height, k.stride), _same_out(x.width, k.stride), k.out_channels)
    if isinstance(k, Pool):
        if k.window > min(x.height, x.width):
            raise ShapeMismatchError(node.id, f"pool window {k.window} exceeds input {x}")
        return TensorShape((x.height - k.window) // k.stride + 1,
                           (x.width - k.window) // k.stride + 1, x.channels)
    if isinstance(k, GlobalPool):
        return TensorShape(1, 1, x.channels)
    if isinstance(k, UpsampleNearest):
        return TensorShape(x.height * k.factor, x.width * k.factor, x.channels)
    if isinstance(k, Concat):
        if any((s.height, s.width) != (x.height, x.width) for s in ins):
            raise ShapeMismatchError(node.id, f"concat spatial mismatch {[str(s) for s in ins]}")
        return TensorShape(x.height, x.width, sum(s.channels for s in ins))
    if isinstance(k, Add):
        if any(s != x for s in ins):
            raise ShapeMismatchError(node.id, f"add shape mismatch {[str(s) for s in ins]}")
        return x
    if isinstance(k, Multiply):
        for s in ins[1:]:
            if s != x and s != TensorShape(1, 1, x.channels):
                raise ShapeMismatchError(node.id, f"multiply shape mismatch {x} vs {s}")
        return x
    if isinstance(k, Dense):
        if (x.height, x.width) != (1, 1):
            raise ShapeMismatchError(node.id, f"dense expects 1x1xC input, got {x}")
        return TensorShape(1, 1, k.out_units)
    if isinstance(k, Activation):
        return x
    if isinstance(k, ChannelSlice):
        if k.stop > x.channels:
            raise ShapeMismatchError(node.id, f"slice [{k.start},{k.stop}) beyond {x.channels} channels")
        return TensorShape(x.height, x.width, k.stop - k.start)
    raise GraphError(f"unknown layer kind {k!r}")


def infer_shapes(graph: LayerGraph) -> LayerGraph:
    """Return a copy of ``graph`` with shapes, input shapes and MACs filled."""
    order = topological_order(graph)
    _check_reachable(graph, order)
    shapes = {INPUT_ID: graph.input_shape}
    done: dict[str, LayerNode] = {}
    for nid in order:
        node = graph[nid]
        ins = tuple(shapes[s] for s in node.inputs)
        shapes[nid] = output_shape(node, ins)
        annotated = dataclasses.replace(node, shape=shapes[nid], in_shapes=ins, macs=None)
        done[nid] = dataclasses.replace(annotated, macs=count_macs(annotated))
    return graph.replace_nodes(done[n.id] for n in graph.nodes)


def count_macs(node: LayerNode) -> int:
    if node.shape is None or node.in_shapes is None:
        raise UninferredShapeError(f"node {node.id!r} has no inferred shape")
    k = node.kind
    if isinstance(k, Conv2D):
        c_in = node.in_shapes[0].channels
        s = node.shape
        return s.height * s.width * k.kernel_h * k.kernel_w * (c_in // k.groups) * k.out_channels
    if isinstance(k, Dense):
        return node.in_shapes[0].channels * k.out_units
    return 0


def weight_count(node: LayerNode) -> tuple[int, int]:
    """(kernel elements, bias elements) held by a node."""
    k = node.kind
    if isinstance(k, Conv2D):
        if node.in_shapes is None:
            raise UninferredShapeError(f"node {node.id!r} has no inferred shape")
        c_in = node.in_shapes[0].channels
        return k.kernel_h * k.kernel_w * (c_in // k.groups) * k.out_channels, k.out_channels
    if isinstance(k, Dense):
        if node.in_shapes is None:
            raise UninferredShapeError(f"node {node.id!r} has no inferred shape")
        return node.in_shapes[0].channels * k.out_units, k.out_units
    return 0, 0


def is_inferred(graph: LayerGraph) -> bool:
    return all(n.shape is not None for n in graph.nodes)


# ---------------------------------------------------------------------------
# hardware constraints

@dataclass(frozen=True)
class Violation:
    node_id: str
    rule: str  # "kernel" | "channels"
    value: int
    limit: int

    def __str__(self) -> str:
        return f"{self.node_id}: {self.rule} {self.value} exceeds {self.limit}"


def validate_hw_constraints(graph: LayerGraph, hw: HwConfig) -> list[Violation]:
    out = []
    for node in graph.nodes:
        if node.in_shapes is None:
            raise UninferredShapeError(f"node {node.id!r} has no inferred shape")
        k = node.kind
        if isinstance(k, Conv2D):
            extent = max(k.extent_h, k.extent_w)
            if extent > hw.max_kernel:
                out.append(Violation(node.id, "kernel", extent, hw.max_kernel))
        c_in = max(s.channels for s in node.in_shapes)
        if c_in > hw.max_channels:
            out.append(Violation(node.id, "channels", c_in, hw.max_channels))
    return out


# ---------------------------------------------------------------------------
# JSON

_NODE_KEYS = {"id", "name", "kind", "params", "inputs"}
_GRAPH_KEYS = {"input_shape", "nodes", "outputs"}


def kind_params(kind: LayerKind) -> dict:
    return dataclasses.asdict(kind)


def kind_from_json(name: str, params: dict) -> LayerKind:
    try:
        cls = KIND_TYPES[name]
    except KeyError:
        raise GraphError(f"unknown layer kind {name!r}") from None
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(params) - allowed
    if unknown:
        raise GraphError(f"unknown params for {name}: {sorted(unknown)}")
    return cls(**params)


def graph_to_dict(graph: LayerGraph) -> dict:
    return {
        "input_shape": graph.input_shape.as_list(),
        "nodes": [{"id": n.id, "name": n.name, "kind": n.kind.kind,
                   "params": kind_params(n.kind), "inputs": list(n.inputs)}
                  for n in graph.nodes],
        "outputs": list(graph.outputs),
    }


def graph_from_dict(d: dict) -> LayerGraph:
    if set(d) != _GRAPH_KEYS:
        raise GraphError(f"graph keys must be exactly {sorted(_GRAPH_KEYS)}, got {sorted(d)}")
    nodes = []
    for nd in d["nodes"]:
        extra = set(nd) - _NODE_KEYS
        if extra or not {"id", "kind", "inputs"} <= set(nd):
            raise GraphError(f"bad node record keys: {sorted(nd)}")
        nodes.append(LayerNode(nd["id"], kind_from_json(nd["kind"], nd.get("params", {})),
                               tuple(nd["inputs"]), nd.get("name", "")))
    return LayerGraph(tuple(nodes), TensorShape(*d["input_shape"]), tuple(d["outputs"]))


def save_graph(graph: LayerGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph), indent=1) + "\n")


def load_graph(path: str | Path) -> LayerGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))

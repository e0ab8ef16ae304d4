"""Builder for the PE-array-friendly LMIINet segmentation graph.

Resolution ladder at full scale (2048x1024 input, spatial dims written h x w):

    stem / stage 1   3x3 s2 -> 1/2,  24 ch
    stage 2          3x3 s2 -> 1/4,  48 ch, LFIB(d=1), LFIB(d=2)
    stage 3          3x3 s2 -> 1/8,  96 ch, LFIB(d=1), LFIB(d=2)
    stage 4          3x3 s2 -> 1/16, 128 ch, LFIB(d=1), LFIB(d=2)
    bottleneck       FLAM, FE
    decoder          1/8, 1/4, 1/2 (upsample, concat skip, dw+pw, CAB)
    heads            SegHead on the three decoder features, aux head at 1/8
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .graph import (INPUT_ID, Activation, Add, ChannelSlice, Concat, Conv2D, Dense, GlobalPool,
                    LayerGraph, LayerNode, Multiply, TensorShape, UpsampleNearest, infer_shapes,
                    weight_count)
from .hwconfig import HwConfig


@dataclass(frozen=True)
class ModelConfig:
    encoder_filters: tuple[int, ...] = (24, 48, 96, 128)
    num_classes: int = 19
    input_shape: TensorShape = TensorShape(2048, 1024, 3)
    flam_heads: int = 8
    flam_key_dim: int = 64
    include_aux_head: bool = True
    scale_divisor: int = 1
    lfib_dilations: tuple[int, ...] = (1, 2)
    cc_reduction: int = 4
    cab_reduction: int = 4
    max_channels: int = 256

    def __post_init__(self):
        object.__setattr__(self, "encoder_filters", tuple(self.encoder_filters))
        object.__setattr__(self, "lfib_dilations", tuple(self.lfib_dilations))
        if isinstance(self.input_shape, (list, tuple)):
            object.__setattr__(self, "input_shape", TensorShape(*self.input_shape))
        if len(self.encoder_filters) != 4:
            raise ValueError("encoder_filters needs exactly 4 entries")
        if self.scale_divisor < 1:
            raise ValueError("scale_divisor must be >= 1")
        if any(f < 1 for f in self.filters):
            raise ValueError(f"scaled filters {self.filters} must all be >= 1")
        h, w = self.input_spatial
        if h % 16 or w % 16:
            raise ValueError(f"input spatial dims {h}x{w} must be divisible by 16")

    @property
    def filters(self) -> tuple[int, ...]:
        return tuple(f // self.scale_divisor for f in self.encoder_filters)

    @property
    def input_spatial(self) -> tuple[int, int]:
        return (self.input_shape.height // self.scale_divisor,
                self.input_shape.width // self.scale_divisor)

    @property
    def scaled_input_shape(self) -> TensorShape:
        return TensorShape(*self.input_spatial, self.input_shape.channels)

    @property
    def flam_width(self) -> int:
        return max(1, self.flam_heads * self.flam_key_dim // self.scale_divisor)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["input_shape"] = self.input_shape.as_list()
        d["encoder_filters"] = list(self.encoder_filters)
        d["lfib_dilations"] = list(self.lfib_dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        d = dict(d)
        if "input_shape" in d:
            d["input_shape"] = TensorShape(*d["input_shape"])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class GraphBuilder:
    """Appends nodes with unique ids; block methods return the id of their output."""

    def __init__(self, input_shape: TensorShape):
        self.input_shape = input_shape
        self.nodes: list[LayerNode] = []
        self._counts: dict[str, int] = {}

    def add(self, kind, inputs, name: str) -> str:
        n = self._counts.get(name, 0)
        self._counts[name] = n + 1
        nid = name if n == 0 else f"{name}_{n}"
        inputs = (inputs,) if isinstance(inputs, str) else tuple(inputs)
        self.nodes.append(LayerNode(nid, kind, inputs, nid))
        return nid

    def conv(self, src, out_ch, k=(3, 3), name="conv", stride=1, dilation=1, groups=1, act=None):
        kh, kw = (k, k) if isinstance(k, int) else k
        y = self.add(Conv2D(kh, kw, out_ch, stride=stride, dilation=dilation, groups=groups), src, name)
        if act:
            y = self.add(Activation(act), y, f"{name}_{act}")
        return y

    def graph(self, outputs) -> LayerGraph:
        return infer_shapes(LayerGraph(tuple(self.nodes), self.input_shape, tuple(outputs)))

    def channels(self, nid: str) -> int:
        # cheap re-inference over the partial graph
        return self.graph([nid])[nid].shape.channels if nid != INPUT_ID else self.input_shape.channels

    # -- blocks --------------------------------------------------------------

    def lfib(self, src: str, channels: int, dilation: int, p: str, cc_reduction: int = 4) -> str:
        if channels % 2:
            raise ValueError(f"LFIB needs an even channel count, got {channels}")
        h = channels // 2
        left = self.add(ChannelSlice(0, h), src, f"{p}_split_l")
        right = self.add(ChannelSlice(h, channels), src, f"{p}_split_r")

        left = self.conv(left, h, (3, 1), f"{p}_asym3x1")
        left = self.conv(left, h, (1, 3), f"{p}_asym1x3", act="relu")
        right = self.conv(right, h, 3, f"{p}_dw", dilation=dilation, groups=h)
        right = self.conv(right, h, 1, f"{p}_pw", act="relu")

        merged = self.shuffle_concat(left, right, h, p)

        g = self.add(GlobalPool("avg"), merged, f"{p}_cc_gap")
        g = self.add(Dense(max(1, channels // cc_reduction)), g, f"{p}_cc_fc1")
        g = self.add(Activation("relu"), g, f"{p}_cc_relu")
        g = self.add(Dense(channels), g, f"{p}_cc_fc2")
        g = self.add(Activation("sigmoid"), g, f"{p}_cc_sigmoid")
        gated = self.add(Multiply(), (merged, g), f"{p}_cc_mul")

        y = self.cru(gated, channels, f"{p}_cru")
        return self.add(Add(), (src, y), f"{p}_residual")

    def shuffle_concat(self, left: str, right: str, h: int, p: str) -> str:
        """Two-group channel shuffle: [L0, R0, L1, R1] with halves split at ceil(h/2)."""
        a = -(-h // 2)
        if a == h:
            return self.add(Concat(), (left, right), f"{p}_shuffle")
        parts = [
            self.add(ChannelSlice(0, a), left, f"{p}_cs_l0"),
            self.add(ChannelSlice(0, a), right, f"{p}_cs_r0"),
            self.add(ChannelSlice(a, h), left, f"{p}_cs_l1"),
            self.add(ChannelSlice(a, h), right, f"{p}_cs_r1"),
        ]
        return self.add(Concat(), parts, f"{p}_shuffle")

    def cru(self, src: str, channels: int, p: str) -> str:
        mid = max(1, channels // 2)
        y = self.conv(src, mid, 1, f"{p}_squeeze", act="relu")
        y = self.conv(y, mid, 3, f"{p}_dw", groups=mid)
        return self.conv(y, channels, 1, f"{p}_expand")

    def flam(self, src: str, channels: int, width: int, max_channels: int, p: str) -> str:
        """Dilated local context plus a gated projection; the projection is split
        into chunks of at most ``max_channels`` so no tensor exceeds the datapath."""
        y = self.conv(src, channels, 3, f"{p}_dil", dilation=2, act="relu")
        n_chunks = -(-width // max_channels)
        backs = []
        for i in range(n_chunks):
            w = min(max_channels, width - i * max_channels)
            q = self.conv(y, w, 1, f"{p}_proj{i}")
            gate = self.add(Activation("sigmoid"), q, f"{p}_gate{i}")
            q = self.add(Multiply(), (q, gate), f"{p}_gated{i}")
            backs.append(self.conv(q, channels, 1, f"{p}_out{i}"))
        return self.add(Add(), (src, *backs), f"{p}_residual")

    def attention(self, kind: str, src: str, channels: int, p: str, reduction: int = 4) -> str:
        if kind == "cab":
            g = self.add(GlobalPool("avg"), src, f"{p}_gap")
            g = self.conv(g, max(1, channels // reduction), 1, f"{p}_fc1", act="relu")
            g = self.conv(g, channels, 1, f"{p}_fc2")
        elif kind == "fe":
            a = self.add(GlobalPool("avg"), src, f"{p}_gap")
            m = self.add(GlobalPool("max"), src, f"{p}_gmp")
            g = self.add(Add(), (a, m), f"{p}_pool_sum")
            g = self.conv(g, channels, 1, f"{p}_fc")
        else:
            raise ValueError(f"attention kind must be cab|fe, got {kind!r}")
        g = self.add(Activation("sigmoid"), g, f"{p}_sigmoid")
        return self.add(Multiply(), (src, g), f"{p}_mul")


# ---------------------------------------------------------------------------
# standalone block graphs

def build_lfib(channels: int, dilation: int = 1, spatial=(16, 16), cc_reduction: int = 4) -> LayerGraph:
    b = GraphBuilder(TensorShape(*spatial, channels))
    return b.graph([b.lfib(INPUT_ID, channels, dilation, "lfib", cc_reduction)])


def build_flam(channels: int, spatial=(8, 8), heads: int = 8, key_dim: int = 64,
               scale_divisor: int = 1, max_channels: int = 256) -> LayerGraph:
    b = GraphBuilder(TensorShape(*spatial, channels))
    width = max(1, heads * key_dim // scale_divisor)
    return b.graph([b.flam(INPUT_ID, channels, width, max_channels, "flam")])


def build_attention(kind: str, channels: int, spatial=(8, 8), reduction: int = 4) -> LayerGraph:
    b = GraphBuilder(TensorShape(*spatial, channels))
    return b.graph([b.attention(kind, INPUT_ID, channels, kind, reduction)])


def flam_projection_width(graph: LayerGraph, prefix: str = "flam") -> int:
    return sum(n.kind.out_channels for n in graph.nodes
               if n.id.startswith(f"{prefix}_proj") and isinstance(n.kind, Conv2D))


# ---------------------------------------------------------------------------

def build_lmiinet(config: ModelConfig = ModelConfig()) -> LayerGraph:
    f1, f2, f3, f4 = config.filters
    b = GraphBuilder(config.scaled_input_shape)

    e1 = b.conv(INPUT_ID, f1, 3, "stem", stride=2, act="relu")
    skips = [e1]
    x = e1
    for stage, f in ((2, f2), (3, f3), (4, f4)):
        x = b.conv(x, f, 3, f"enc{stage}_down", stride=2, act="relu")
        for i, d in enumerate(config.lfib_dilations):
            x = b.lfib(x, f, d, f"enc{stage}_lfib{i}", config.cc_reduction)
        skips.append(x)

    x = b.flam(x, f4, config.flam_width, config.max_channels, "flam")
    x = b.attention("fe", x, f4, "fe")

    decoder = []
    for stage, f, skip in ((3, f3, skips[2]), (2, f2, skips[1]), (1, f1, skips[0])):
        up = b.add(UpsampleNearest(2), x, f"dec{stage}_up")
        cat = b.add(Concat(), (up, skip), f"dec{stage}_cat")
        c_cat = b.channels(cat)
        y = b.conv(cat, c_cat, 3, f"dec{stage}_dw", groups=c_cat)
        y = b.conv(y, f, 1, f"dec{stage}_pw", act="relu")
        x = b.attention("cab", y, f, f"dec{stage}_cab", config.cab_reduction)
        decoder.append(x)

    d8, d4, d2 = decoder
    fused = b.add(Concat(), (b.add(UpsampleNearest(4), d8, "head_up8"),
                             b.add(UpsampleNearest(2), d4, "head_up4"), d2), "head_cat")
    logits = b.conv(fused, config.num_classes, 1, "head_cls")
    probs = b.add(Activation("softmax"), logits, "head_softmax")
    out = b.add(UpsampleNearest(2), probs, "head_up_full")
    outputs = [out]
    if config.include_aux_head:
        aux = b.conv(d8, config.num_classes, 1, "aux_cls")
        outputs.append(b.add(Activation("softmax"), aux, "aux_softmax"))
    return b.graph(outputs)


# ---------------------------------------------------------------------------

@dataclass
class ParamRow:
    node_id: str
    weights: int
    biases: int


@dataclass
class ParamSummary:
    rows: list[ParamRow] = field(default_factory=list)
    weight_bits: int = 8
    bias_bits: int = 16

    @property
    def total_weights(self) -> int:
        return sum(r.weights for r in self.rows)

    @property
    def total_biases(self) -> int:
        return sum(r.biases for r in self.rows)

    def bytes_at(self, weight_bits: int, bias_bits: int) -> float:
        return (self.total_weights * weight_bits + self.total_biases * bias_bits) / 8

    @property
    def total_bytes(self) -> float:
        return self.bytes_at(self.weight_bits, self.bias_bits)


def parameter_summary(graph: LayerGraph, hw: HwConfig = HwConfig()) -> ParamSummary:
    rows = []
    for n in graph.nodes:
        w, bias = weight_count(n)
        if w:
            rows.append(ParamRow(n.id, w, bias))
    return ParamSummary(rows, hw.weight_bits, hw.bias_bits)

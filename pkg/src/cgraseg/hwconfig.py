"""CGRA parameter record shared by graph validation and the performance model."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class HwConfig:
    """Parameters of the 16x96 PE-array accelerator.

    Defaults describe the ZCU104 deployment: 1,536 PEs at 200 MHz, 8-bit
    activations/weights, 16-bit bias, 32-bit accumulators.
    """

    pe_rows: int = 16
    pe_cols: int = 96
    clock_hz: float = 200e6
    act_bits: int = 8
    weight_bits: int = 8
    bias_bits: int = 16
    acc_bits: int = 32
    max_batch: int = 2
    weight_ram_depth: int = 256
    edge_ram_depth: int = 32768
    max_channels: int = 256
    axi_bits: int = 128
    max_burst_beats: int = 16
    header_bits: int = 64
    max_kernel: int = 9

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"HwConfig.{f.name} must be >= 1, got {getattr(self, f.name)}")

    @property
    def num_pes(self) -> int:
        return self.pe_rows * self.pe_cols

    @property
    def cycle_time_s(self) -> float:
        return 1.0 / self.clock_hz

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HwConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown HwConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "HwConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

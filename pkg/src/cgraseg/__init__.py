"""INT8 reference engine and PE-array performance model for a CGRA-mapped LMIINet."""

from .graph import (LayerGraph, LayerNode, TensorShape, count_macs, infer_shapes,
                    topological_order, validate_hw_constraints)
from .hwconfig import HwConfig
from .lmiinet import ModelConfig, build_lmiinet, parameter_summary
from .metrics import ConfusionMatrix, mean_iou, pixel_accuracy
from .perf import EfficiencyModel, PerfReport, analyze, analyze_reference, default_reference
from .schedule import ScheduleConfig, lr_for_epoch, phase_for_epoch

__version__ = "0.1.0"

from .blocks import CRPBlock, FrozenBatchNorm2d, TaskHead, conv1x1, conv3x3
from .counting import LayerCount, MacReport, count_macs, count_params
from .encoders import ENCODER_FAMILIES, TAP_STRIDES, build_encoder, make_divisible
from .model import (
    CRPBlockSpec,
    MultiTaskNet,
    NetworkConfig,
    TASKS,
    TaskHeadSpec,
    build_network,
    default_crp_blocks,
)
from .weights import load_encoder_weights, load_weights, save_weights, state_arrays

__all__ = [
    "CRPBlock", "FrozenBatchNorm2d", "TaskHead", "conv1x1", "conv3x3",
    "LayerCount", "MacReport", "count_macs", "count_params",
    "ENCODER_FAMILIES", "TAP_STRIDES", "build_encoder", "make_divisible",
    "CRPBlockSpec", "MultiTaskNet", "NetworkConfig", "TASKS", "TaskHeadSpec",
    "build_network", "default_crp_blocks",
    "load_encoder_weights", "load_weights", "save_weights", "state_arrays",
]

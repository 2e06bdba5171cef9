"""Parameter and multiply-accumulate (MAC) budgeting.

The headline FLOP number follows the MAC convention (one multiply-add = one
FLOP); ``total_flops_2x`` reports the 2x-MAC convention alongside. Pooling,
elementwise and activation work is tallied separately and excluded from the
headline number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from ..errors import ContractError
from .blocks import CRPBlock, FrozenBatchNorm2d
from .model import MultiTaskNet


@dataclass
class LayerCount:
    name: str
    kind: str
    out_shape: tuple[int, ...]
    macs: int
    params: int


@dataclass
class MacReport:
    input_size: tuple[int, int]
    layers: list[LayerCount]
    aux_ops: dict[str, int] = field(default_factory=dict)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def total_flops_2x(self) -> int:
        return 2 * self.total_macs

    def rows(self) -> list[dict]:
        return [vars(l) | {"out_shape": list(l.out_shape)} for l in self.layers]


def count_params(model: nn.Module) -> tuple[int, dict[str, int]]:
    """Exact learnable-parameter count plus a per-partition breakdown.

    For :class:`MultiTaskNet` the breakdown keys are the parameter partitions
    (shared + per task); for other modules there is a single ``all`` entry.
    """
    if isinstance(model, MultiTaskNet):
        breakdown = {part: sum(p.numel() for _, p in named)
                     for part, named in model.parameter_partitions().items()}
    else:
        breakdown = {"all": sum(p.numel() for p in model.parameters())}
    total = sum(p.numel() for p in model.parameters())
    assert sum(breakdown.values()) == total
    return total, breakdown


def _conv_macs(module: nn.Conv2d, out: torch.Tensor) -> int:
    kh, kw = module.kernel_size
    cin_per_group = module.in_channels // module.groups
    positions = out.shape[0] * out.shape[2] * out.shape[3]
    return kh * kw * cin_per_group * module.out_channels * positions


def count_macs(model: nn.Module, input_size: tuple[int, int]) -> MacReport:
    """Layer-wise MAC counts for one forward pass at ``input_size`` (H, W).

    Runs a single batch-1 forward with shape-recording hooks attached, so the
    table reflects the exact execution path. Deterministic for a given model
    and size.
    """
    h, w = input_size
    if h % 32 or w % 32:
        raise ContractError(f"input H and W must be divisible by 32, got {h}x{w}")

    layers: list[LayerCount] = []
    aux = {"pool_ops": 0, "activation_ops": 0, "norm_ops": 0, "elementwise_ops": 0}
    hooks = []

    def attach(name: str, module: nn.Module):
        def hook(mod, inputs, output):
            if isinstance(mod, nn.Conv2d):
                params = sum(p.numel() for p in mod.parameters())
                layers.append(LayerCount(name, "conv2d", tuple(output.shape),
                                         _conv_macs(mod, output), params))
            elif isinstance(mod, nn.MaxPool2d):
                k = mod.kernel_size if isinstance(mod.kernel_size, int) else mod.kernel_size[0]
                aux["pool_ops"] += k * k * output.numel()
            elif isinstance(mod, (nn.ReLU6, nn.ReLU)):
                aux["activation_ops"] += output.numel()
            elif isinstance(mod, FrozenBatchNorm2d):
                aux["norm_ops"] += 2 * output.numel()
            if isinstance(mod, CRPBlock):
                # residual adds, one per stage, not captured by any submodule
                aux["elementwise_ops"] += mod.num_stages * output.numel()
        hooks.append(module.register_forward_hook(hook))

    for name, module in model.named_modules():
        if isinstance(module, (nn.Conv2d, nn.MaxPool2d, nn.ReLU6, nn.ReLU,
                               FrozenBatchNorm2d, CRPBlock)):
            attach(name, module)

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(torch.zeros(1, 3, h, w))
    finally:
        model.train(was_training)
        for hk in hooks:
            hk.remove()

    # top-down fusion adds (one per non-final decoder level)
    if isinstance(model, MultiTaskNet):
        d = model.config.decoder_channels
        for stride in model.config.tap_strides:
            if stride != 4:
                aux["elementwise_ops"] += d * (h // (stride // 2)) * (w // (stride // 2))
    del out
    return MacReport(input_size=input_size, layers=layers, aux_ops=aux)

"""Encoder backbones exposing feature taps at strides 4/8/16/32."""

from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import ConvBNAct

TAP_STRIDES = (4, 8, 16, 32)

# (expansion, out_channels, repeats, first_stride) at width 1.0
_MOBILENET_V2_CFG = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
]


def make_divisible(value: float, divisor: int = 8) -> int:
    """Round channel counts to a multiple of ``divisor``, never dropping >10%."""
    new_v = max(divisor, int(value + divisor / 2) // divisor * divisor)
    if new_v < 0.9 * value:
        new_v += divisor
    return new_v


class InvertedResidual(nn.Module):
    def __init__(self, in_planes: int, out_planes: int, stride: int, expansion: int):
        super().__init__()
        hidden = in_planes * expansion
        self.use_residual = stride == 1 and in_planes == out_planes
        layers = []
        if expansion != 1:
            layers.append(ConvBNAct(in_planes, hidden, kernel_size=1))
        layers.append(ConvBNAct(hidden, hidden, kernel_size=3, stride=stride, groups=hidden))
        layers.append(ConvBNAct(hidden, out_planes, kernel_size=1, act=False))
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.body(x)
        return x + out if self.use_residual else out


class MobileNetV2Encoder(nn.Module):
    """MobileNet-v2 feature extractor (classifier and final 1x1 conv removed).

    Taps are taken after the last block at each of strides 4, 8, 16 and 32,
    i.e. after the 24-, 32-, 96- and 320-channel stages at width 1.0.
    """

    def __init__(self, width_mult: float = 1.0):
        super().__init__()
        self.width_mult = width_mult
        stem_ch = make_divisible(32 * width_mult)
        self.stem = ConvBNAct(3, stem_ch, kernel_size=3, stride=2)
        blocks = []
        tap_after = {}  # block index -> stride
        in_ch = stem_ch
        stride_so_far = 2
        for stage_idx, (t, c, n, s) in enumerate(_MOBILENET_V2_CFG):
            out_ch = make_divisible(c * width_mult)
            for i in range(n):
                stride = s if i == 0 else 1
                blocks.append(InvertedResidual(in_ch, out_ch, stride, t))
                stride_so_far *= stride
                in_ch = out_ch
            # last stage at each tap stride wins (96 over 64, 320 over 160)
            if stage_idx in (1, 2, 4, 6):
                tap_after[len(blocks) - 1] = stride_so_far
        self.blocks = nn.ModuleList(blocks)
        self._tap_after = tap_after
        self.tap_channels = {
            4: make_divisible(24 * width_mult),
            8: make_divisible(32 * width_mult),
            16: make_divisible(96 * width_mult),
            32: make_divisible(320 * width_mult),
        }

    def forward(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        x = self.stem(x)
        taps: dict[int, torch.Tensor] = {}
        for idx, block in enumerate(self.blocks):
            x = block(x)
            stride = self._tap_after.get(idx)
            if stride is not None:
                taps[stride] = x
        return taps


class TinyEncoder(nn.Module):
    """Small plain-conv backbone for desk-scale experiments and tests.

    A stride-2 stem followed by four stride-2 stages; taps after each stage.
    ``width_mult`` scales the base channel count of 8.
    """

    def __init__(self, width_mult: float = 1.0):
        super().__init__()
        self.width_mult = width_mult
        base = make_divisible(8 * width_mult, 4)
        widths = [base * m for m in (2, 3, 4, 6)]
        self.stem = ConvBNAct(3, base, kernel_size=3, stride=2)
        self.stages = nn.ModuleList()
        in_ch = base
        for w in widths:
            self.stages.append(nn.Sequential(
                ConvBNAct(in_ch, w, kernel_size=3, stride=2),
                ConvBNAct(w, w, kernel_size=3, stride=1),
            ))
            in_ch = w
        self.tap_channels = dict(zip(TAP_STRIDES, widths))

    def forward(self, x: torch.Tensor) -> dict[int, torch.Tensor]:
        x = self.stem(x)
        taps: dict[int, torch.Tensor] = {}
        for stride, stage in zip(TAP_STRIDES, self.stages):
            x = stage(x)
            taps[stride] = x
        return taps


ENCODER_FAMILIES = {
    "mobilenet_v2": MobileNetV2Encoder,
    "tiny": TinyEncoder,
}


def build_encoder(family: str, width_mult: float = 1.0) -> nn.Module:
    try:
        cls = ENCODER_FAMILIES[family]
    except KeyError:
        raise ValueError(
            f"unknown encoder family {family!r}; known: {sorted(ENCODER_FAMILIES)}"
        ) from None
    return cls(width_mult=width_mult)

"""Building blocks for the compact encoder-decoder network."""

from __future__ import annotations

import torch
import torch.nn as nn


def conv1x1(in_planes: int, out_planes: int, groups: int = 1, bias: bool = False) -> nn.Conv2d:
    return nn.Conv2d(in_planes, out_planes, kernel_size=1, stride=1, padding=0,
                     groups=groups, bias=bias)


def conv3x3(in_planes: int, out_planes: int, stride: int = 1, groups: int = 1,
            bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(in_planes, out_planes, kernel_size=3, stride=stride, padding=1,
                     groups=groups, bias=bias)


class FrozenBatchNorm2d(nn.Module):
    """BatchNorm2d with permanently frozen running statistics.

    The affine scale/shift are ordinary learnable parameters; the running
    mean/var live in buffers and are never touched by forward passes or
    training steps, in either train or eval mode.
    """

    def __init__(self, num_features: int, eps: float = 1e-5):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        scale = self.weight * (self.running_var + self.eps).rsqrt()
        shift = self.bias - self.running_mean * scale
        return x * scale.reshape(1, -1, 1, 1) + shift.reshape(1, -1, 1, 1)

    def extra_repr(self) -> str:
        return f"{self.num_features}, eps={self.eps}"


class ConvBNAct(nn.Module):
    """Conv -> frozen BN -> optional ReLU6 (the encoder's basic unit)."""

    def __init__(self, in_planes: int, out_planes: int, kernel_size: int = 3,
                 stride: int = 1, groups: int = 1, act: bool = True):
        super().__init__()
        padding = (kernel_size - 1) // 2
        self.conv = nn.Conv2d(in_planes, out_planes, kernel_size, stride, padding,
                              groups=groups, bias=False)
        self.bn = FrozenBatchNorm2d(out_planes)
        self.act = nn.ReLU6(inplace=True) if act else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.bn(self.conv(x)))


class CRPBlock(nn.Module):
    """Chained residual pooling: stages of 5x5 max-pool + 1x1 conv, summed
    residually onto the input.

    With ``depthwise=True`` each stage's convolution is grouped with one group
    per channel. Spatial size is preserved (stride-1 pooling with padding), so
    a block with all-zero conv weights is the identity map.
    """

    def __init__(self, channels: int, num_stages: int = 4, pool_kernel: int = 5,
                 depthwise: bool = False):
        super().__init__()
        self.channels = channels
        self.num_stages = num_stages
        self.depthwise = depthwise
        self.pool = nn.MaxPool2d(kernel_size=pool_kernel, stride=1,
                                 padding=pool_kernel // 2)
        groups = channels if depthwise else 1
        self.convs = nn.ModuleList(
            [conv1x1(channels, channels, groups=groups, bias=False)
             for _ in range(num_stages)]
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        top = x
        for conv in self.convs:
            top = conv(self.pool(top))
            x = x + top
        return x

    def extra_repr(self) -> str:
        return f"channels={self.channels}, stages={self.num_stages}, depthwise={self.depthwise}"


class TaskHead(nn.Module):
    """Two-layer task head: depthwise 1x1 conv, ReLU6, plain 3x3 conv.

    Exactly two parametric layers; the final conv carries the only bias.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.pre = conv1x1(in_channels, in_channels, groups=in_channels, bias=False)
        self.act = nn.ReLU6(inplace=True)
        self.out = conv3x3(in_channels, out_channels, bias=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self.act(self.pre(x)))

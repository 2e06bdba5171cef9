"""Network description and the instantiated multi-task model.

The network is a compact encoder-decoder: a classification backbone tapped at
strides 4/8/16/32, a light top-down decoder built from chained-residual-pooling
(CRP) blocks, and one two-layer head per task branching off the shared
stride-4 feature map. The CRP block at stride 4 uses depthwise 1x1
convolutions; all other CRP blocks use plain 1x1 convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, ContractError
from .blocks import CRPBlock, TaskHead, conv1x1
from .encoders import TAP_STRIDES, build_encoder

TASKS = ("segmentation", "depth", "normals")

# Output channels fixed by task semantics for the non-classification tasks.
_FIXED_OUT_CHANNELS = {"depth": 1, "normals": 3}


@dataclass
class CRPBlockSpec:
    """One decoder-level CRP block."""

    channels: int
    num_stages: int = 4
    pool_kernel: int = 5
    conv_kind: str = "plain_1x1"  # or "depthwise_1x1"

    def validate(self) -> None:
        if self.channels <= 0 or self.num_stages <= 0:
            raise ConfigError("CRP channels and num_stages must be positive")
        if self.conv_kind not in ("plain_1x1", "depthwise_1x1"):
            raise ConfigError(f"unknown conv_kind {self.conv_kind!r}")


@dataclass
class TaskHeadSpec:
    task_name: str
    in_channels: int
    out_channels: int

    def validate(self) -> None:
        if self.task_name not in TASKS:
            raise ConfigError(f"unknown task {self.task_name!r}; known: {TASKS}")
        fixed = _FIXED_OUT_CHANNELS.get(self.task_name)
        if fixed is not None and self.out_channels != fixed:
            raise ConfigError(
                f"{self.task_name} head must have {fixed} output channel(s), "
                f"got {self.out_channels}"
            )
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ConfigError("head channel counts must be positive")


@dataclass
class NetworkConfig:
    """Declarative architecture description."""

    encoder: str = "mobilenet_v2"
    width_mult: float = 1.0
    decoder_channels: int = 256
    crp_blocks: list[CRPBlockSpec] = field(default_factory=list)
    heads: list[TaskHeadSpec] = field(default_factory=list)
    tap_strides: tuple[int, ...] = TAP_STRIDES
    upsample: str = "bilinear"  # or "nearest"

    def __post_init__(self) -> None:
        if not self.crp_blocks:
            self.crp_blocks = default_crp_blocks(self.decoder_channels)

    @classmethod
    def for_tasks(cls, tasks=("segmentation", "depth"), num_classes: int = 40,
                  **kwargs) -> "NetworkConfig":
        cfg = cls(**kwargs)
        cfg.heads = [
            TaskHeadSpec(
                task_name=t,
                in_channels=cfg.decoder_channels,
                out_channels=_FIXED_OUT_CHANNELS.get(t, num_classes),
            )
            for t in tasks
        ]
        cfg.validate()
        return cfg

    @property
    def num_classes(self) -> int | None:
        for h in self.heads:
            if h.task_name == "segmentation":
                return h.out_channels
        return None

    def validate(self) -> None:
        if tuple(self.tap_strides) != TAP_STRIDES:
            raise ConfigError(f"tap_strides must be {TAP_STRIDES}")
        if self.upsample not in ("bilinear", "nearest"):
            raise ConfigError(f"unknown upsample mode {self.upsample!r}")
        if len(self.crp_blocks) != len(self.tap_strides):
            raise ConfigError("need exactly one CRP block per tap stride")
        for i, (spec, stride) in enumerate(zip(self.crp_blocks, self.tap_strides)):
            spec.validate()
            want = "depthwise_1x1" if stride == 4 else "plain_1x1"
            if spec.conv_kind != want:
                raise ConfigError(
                    f"CRP block at stride {stride} must be {want}, got {spec.conv_kind}"
                )
            if spec.channels != self.decoder_channels:
                raise ConfigError("CRP channels must equal decoder_channels")
        names = [h.task_name for h in self.heads]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate task heads")
        for h in self.heads:
            h.validate()
            if h.in_channels != self.decoder_channels:
                raise ConfigError(
                    f"head {h.task_name} in_channels {h.in_channels} != "
                    f"decoder_channels {self.decoder_channels}"
                )


def default_crp_blocks(channels: int) -> list[CRPBlockSpec]:
    """One 4-stage CRP per decoder level; depthwise at the stride-4 level."""
    return [
        CRPBlockSpec(channels=channels,
                     conv_kind="depthwise_1x1" if stride == 4 else "plain_1x1")
        for stride in TAP_STRIDES
    ]


class MultiTaskNet(nn.Module):
    """Instantiated network with parameters partitioned by role.

    Partition names: ``shared`` (encoder + decoder) plus one per task head.
    Batch-norm statistics live in buffers and are frozen by construction.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.encoder = build_encoder(config.encoder, config.width_mult)
        d = config.decoder_channels

        self.tap_convs = nn.ModuleDict({
            f"s{stride}": conv1x1(self.encoder.tap_channels[stride], d, bias=False)
            for stride in config.tap_strides
        })
        self.crp = nn.ModuleDict({
            f"s{stride}": CRPBlock(d, num_stages=spec.num_stages,
                                   pool_kernel=spec.pool_kernel,
                                   depthwise=spec.conv_kind == "depthwise_1x1")
            for stride, spec in zip(config.tap_strides, config.crp_blocks)
        })
        # 1x1 fusion conv after every CRP except the last (stride-4) one
        self.fuse_convs = nn.ModuleDict({
            f"s{stride}": conv1x1(d, d, bias=False)
            for stride in config.tap_strides if stride != 4
        })
        self.heads = nn.ModuleDict({
            spec.task_name: TaskHead(spec.in_channels, spec.out_channels)
            for spec in config.heads
        })
        self.relu = nn.ReLU6(inplace=False)
        self._init_parameters()

    def _init_parameters(self) -> None:
        # fan-out scaled Gaussian for convs, identity for (frozen) norms
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_out = m.kernel_size[0] * m.kernel_size[1] * m.out_channels // m.groups
                nn.init.normal_(m.weight, mean=0.0, std=(2.0 / fan_out) ** 0.5)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)

    @property
    def tasks(self) -> tuple[str, ...]:
        return tuple(spec.task_name for spec in self.config.heads)

    def forward_shared(self, images: torch.Tensor) -> torch.Tensor:
        """Run encoder + decoder, returning the shared stride-4 feature map."""
        if images.dim() != 4 or images.shape[1] != 3:
            raise ContractError(f"expected images of shape (B,3,H,W), got {tuple(images.shape)}")
        h, w = images.shape[-2:]
        if h % 32 or w % 32:
            raise ContractError(f"input H and W must be divisible by 32, got {h}x{w}")
        taps = self.encoder(images)
        x = None
        for stride in sorted(self.config.tap_strides, reverse=True):
            t = self.tap_convs[f"s{stride}"](taps[stride])
            if x is not None:
                x = F.interpolate(x, size=t.shape[-2:], mode=self.config.upsample,
                                  align_corners=False if self.config.upsample == "bilinear" else None)
                t = t + x
            t = self.crp[f"s{stride}"](self.relu(t))
            x = self.fuse_convs[f"s{stride}"](t) if stride != 4 else t
        return x

    def forward(self, images: torch.Tensor) -> dict[str, torch.Tensor]:
        shared = self.forward_shared(images)
        if not self.heads:
            return {"shared": shared}
        return {name: head(shared) for name, head in self.heads.items()}

    def parameter_partitions(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Named parameters grouped into 'shared' and one group per task."""
        parts: dict[str, list[tuple[str, nn.Parameter]]] = {"shared": []}
        for t in self.tasks:
            parts[t] = []
        for name, p in self.named_parameters():
            if name.startswith("heads."):
                task = name.split(".", 2)[1]
                parts[task].append((name, p))
            else:
                parts["shared"].append((name, p))
        return parts

    def bn_stats(self) -> dict[str, torch.Tensor]:
        """Frozen normalization statistics (running mean/var buffers)."""
        return {name: buf for name, buf in self.named_buffers()
                if name.endswith(("running_mean", "running_var"))}


def build_network(config: NetworkConfig, pretrained_encoder: str | None = None) -> MultiTaskNet:
    """Instantiate the network, optionally loading encoder weights from disk."""
    model = MultiTaskNet(config)
    if pretrained_encoder is not None:
        from .weights import load_encoder_weights
        load_encoder_weights(model, pretrained_encoder)
    return model

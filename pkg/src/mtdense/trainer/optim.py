"""Mini-batch SGD with momentum, partition-aware gradient routing, and the
update-frequency policies used in the ablation studies.

Policies:

* ``joint``: every batch updates the shared trunk and every head.
* ``branch_on_seen``: the trunk updates every batch; a head updates only when
  the batch contains at least one example annotated for its task (a head with
  no signal stays bit-identical, momentum included).
* ``accumulate``: gradients are summed into per-partition accumulators.
  A head steps once its task has been seen ``task_update_freq`` examples; the
  trunk steps every ``base_update_freq`` examples regardless of task.
  Accumulated gradients are averaged over the contributing examples, so the
  learning-rate meaning is frequency-independent. Frequencies count examples
  (images), not batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ..errors import ConfigError

POLICY_KINDS = ("joint", "branch_on_seen", "accumulate")


@dataclass
class OptimConfig:
    lr_base: float = 1e-3
    momentum: float = 0.9
    lr_drop_factor: float = 10.0
    per_head_lr_multipliers: dict[str, float] = field(
        default_factory=lambda: {"normals": 10.0})
    batch_size: int = 6
    crop: int = 350
    mirror_prob: float = 0.5
    weight_decay: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.lr_base <= 0:
            raise ConfigError("lr_base must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.crop <= 0 or self.crop % 32:
            raise ConfigError("crop must be a positive multiple of 32")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.lr_drop_factor <= 0:
            raise ConfigError("lr_drop_factor must be > 0")
        if not 0.0 <= self.mirror_prob <= 1.0:
            raise ConfigError("mirror_prob must be in [0, 1]")


@dataclass
class UpdatePolicy:
    kind: str = "joint"
    task_update_freq: int = 1
    base_update_freq: int = 1

    def validate(self) -> None:
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.task_update_freq < 1 or self.base_update_freq < 1:
            raise ConfigError("update frequencies must be >= 1")
        if self.kind in ("joint", "branch_on_seen") and \
                (self.task_update_freq != 1 or self.base_update_freq != 1):
            raise ConfigError(f"{self.kind} policy requires update frequencies of 1")


class MomentumSGD:
    """Classic momentum SGD over named parameter partitions.

    v <- momentum * v + g;  p <- p - lr_eff * v, with lr_eff scaled by the
    partition's per-head multiplier. The buffer of a parameter moves only
    when its partition steps.
    """

    def __init__(self, partitions: dict[str, list[tuple[str, torch.nn.Parameter]]],
                 config: OptimConfig):
        config.validate()
        self.partitions = partitions
        self.config = config
        self.lr = config.lr_base
        self.buffers: dict[str, torch.Tensor] = {
            name: torch.zeros_like(p) for part in partitions.values()
            for name, p in part
        }

    def effective_lr(self, partition: str) -> float:
        return self.lr * self.config.per_head_lr_multipliers.get(partition, 1.0)

    @torch.no_grad()
    def step_partition(self, partition: str,
                       grads: dict[str, torch.Tensor] | None = None) -> None:
        lr = self.effective_lr(partition)
        m = self.config.momentum
        wd = self.config.weight_decay
        for name, p in self.partitions[partition]:
            g = grads[name] if grads is not None else p.grad
            if g is None:
                g = torch.zeros_like(p)
            if wd:
                g = g + wd * p
            buf = self.buffers[name]
            buf.mul_(m).add_(g)
            p.add_(buf, alpha=-lr)


@dataclass
class StepEvent:
    """One applied parameter update, for auditing schedules."""

    partition: str
    examples_in_step: int            # examples averaged into this step
    cumulative_examples: int         # total relevant examples seen so far
    batch_index: int


class GradientRouter:
    """Applies an :class:`UpdatePolicy` on top of :class:`MomentumSGD`.

    Call :meth:`after_backward` once per batch, after ``total.backward()``;
    it consumes ``param.grad`` and returns the step events it applied.
    """

    def __init__(self, optimizer: MomentumSGD, policy: UpdatePolicy):
        policy.validate()
        self.optimizer = optimizer
        self.policy = policy
        self.accumulators: dict[str, dict[str, torch.Tensor]] = {}
        self.window_examples: dict[str, int] = {p: 0 for p in optimizer.partitions}
        self.cumulative_examples: dict[str, int] = {p: 0 for p in optimizer.partitions}
        self.batch_index = 0

    def state_arrays(self) -> dict:
        return {
            "window_examples": dict(self.window_examples),
            "cumulative_examples": dict(self.cumulative_examples),
            "batch_index": self.batch_index,
            "accumulators": {part: {n: t for n, t in acc.items()}
                             for part, acc in self.accumulators.items()},
        }

    def load_state(self, state: dict) -> None:
        self.window_examples = dict(state["window_examples"])
        self.cumulative_examples = dict(state["cumulative_examples"])
        self.batch_index = int(state["batch_index"])
        self.accumulators = {part: {n: t.clone() for n, t in acc.items()}
                             for part, acc in state["accumulators"].items()}

    def _freq(self, partition: str) -> int:
        return (self.policy.base_update_freq if partition == "shared"
                else self.policy.task_update_freq)

    def _relevant_examples(self, partition: str, batch_size: int,
                           task_examples: dict[str, int]) -> int:
        return batch_size if partition == "shared" else task_examples.get(partition, 0)

    def after_backward(self, batch_size: int,
                       task_examples: dict[str, int]) -> list[StepEvent]:
        self.batch_index += 1
        events: list[StepEvent] = []
        parts = self.optimizer.partitions

        if self.policy.kind in ("joint", "branch_on_seen"):
            for partition in parts:
                n = self._relevant_examples(partition, batch_size, task_examples)
                self.cumulative_examples[partition] += n
                if self.policy.kind == "branch_on_seen" and partition != "shared" and n == 0:
                    continue
                self.optimizer.step_partition(partition)
                events.append(StepEvent(partition, batch_size,
                                        self.cumulative_examples[partition],
                                        self.batch_index))
            return events

        # accumulate
        for partition in parts:
            n = self._relevant_examples(partition, batch_size, task_examples)
            if n == 0:
                continue
            acc = self.accumulators.setdefault(partition, {})
            for name, p in parts[partition]:
                g = p.grad if p.grad is not None else torch.zeros_like(p)
                if name in acc:
                    acc[name].add_(g, alpha=float(n))
                else:
                    acc[name] = g.detach().clone().mul_(float(n))
            self.window_examples[partition] += n
            self.cumulative_examples[partition] += n
            if self.window_examples[partition] >= self._freq(partition):
                seen = self.window_examples[partition]
                mean_grads = {name: t / float(seen) for name, t in acc.items()}
                self.optimizer.step_partition(partition, grads=mean_grads)
                events.append(StepEvent(partition, seen,
                                        self.cumulative_examples[partition],
                                        self.batch_index))
                self.accumulators[partition] = {}
                self.window_examples[partition] = 0
        return events

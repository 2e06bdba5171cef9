"""Joint training objective: softmax cross-entropy for segmentation, inverse
Huber (berHu) for depth, negative dot product for surface normals.

The combined objective is

    total = lambda * segm + (1 - lambda) * depth [+ normals_weight * normals]

with per-task losses averaged over their valid pixels; a task with zero valid
pixels contributes exactly zero (value and gradient). The berHu threshold is

    c = berhu_fraction * max |pred - gt|     (over valid pixels, no gradient)

with per-pixel loss |r| when |r| <= c and (r^2 + c^2) / (2c) otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import DataError


@dataclass
class LossConfig:
    lam: float = 0.5
    ignore_index: int = 255
    berhu_fraction: float = 0.2
    berhu_c_mode: str = "batch"  # threshold statistic scope: "batch" or "image"
    normals_weight: float = 1.0
    normals_eps: float = 1e-8

    def validate(self) -> None:
        from .errors import ConfigError
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0,1], got {self.lam}")
        if self.berhu_fraction <= 0:
            raise ConfigError("berhu_fraction must be > 0")
        if self.berhu_c_mode not in ("batch", "image"):
            raise ConfigError(f"unknown berhu_c_mode {self.berhu_c_mode!r}")


@dataclass
class TaskLoss:
    """One task's loss term: a scalar (tensor or float) plus its pixel count."""

    value: torch.Tensor | float
    valid_pixels: int


@dataclass
class LossReport:
    segm: float | None
    depth: float | None
    normals: float | None
    total: torch.Tensor | float
    valid_pixel_counts: dict[str, int] = field(default_factory=dict)

    def as_floats(self) -> dict:
        out = {"total": float(self.total)}
        for k in ("segm", "depth", "normals"):
            v = getattr(self, k)
            if v is not None:
                out[k] = float(v)
        out["valid_pixel_counts"] = dict(self.valid_pixel_counts)
        return out


def _zero_like(t: torch.Tensor) -> torch.Tensor:
    return torch.zeros((), dtype=t.dtype, device=t.device)


def segmentation_loss(logits: torch.Tensor, labels: torch.Tensor,
                      ignore_index: int = 255,
                      class_ranges: list[tuple[int, int]] | None = None) -> TaskLoss:
    """Mean over non-ignored pixels of -log softmax probability of the label.

    ``class_ranges`` optionally restricts the softmax of each batch element to
    a half-open slice ``[lo, hi)`` of the channel axis (labels are global
    indices inside that slice). Logits outside a sample's slice take no part
    in its loss and receive no gradient from it. Used when one head serves
    several datasets with disjoint label ranges.
    """
    b, k, h, w = logits.shape
    if labels.shape != (b, h, w):
        raise DataError(f"labels shape {tuple(labels.shape)} does not match logits {(b, h, w)}")
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        idx = bad.nonzero()[0].tolist()
        raise DataError(
            f"label {int(labels[tuple(idx)])} out of range [0,{k}) at pixel "
            f"(image {idx[0]}, row {idx[1]}, col {idx[2]})"
        )
    if class_ranges is None:
        class_ranges = [(0, k)] * b
    class_ranges = [tuple(r) for r in class_ranges]
    if len(class_ranges) != b:
        raise DataError("need one class range per batch element")

    n_valid = int(valid.sum())
    if n_valid == 0:
        return TaskLoss(_zero_like(logits), 0)

    loss_sum = _zero_like(logits)
    for (lo, hi) in sorted(set(class_ranges)):
        rows = [i for i, r in enumerate(class_ranges) if r == (lo, hi)]
        if not (0 <= lo < hi <= k):
            raise DataError(f"class range ({lo},{hi}) outside [0,{k})")
        sub_logits = logits[rows, lo:hi]
        sub_labels = labels[rows].clone()
        sub_valid = sub_labels != ignore_index
        out_of_slice = sub_valid & ((sub_labels < lo) | (sub_labels >= hi))
        if out_of_slice.any():
            raise DataError("label outside its sample's declared class range")
        sub_labels[sub_valid] -= lo
        sub_labels[~sub_valid] = ignore_index
        loss_sum = loss_sum + torch.nn.functional.cross_entropy(
            sub_logits, sub_labels, ignore_index=ignore_index, reduction="sum")
    return TaskLoss(loss_sum / n_valid, n_valid)


def berhu_loss(pred: torch.Tensor, gt: torch.Tensor, valid_mask: torch.Tensor,
               fraction: float = 0.2, c_mode: str = "batch") -> TaskLoss:
    """Inverse Huber loss averaged over valid pixels.

    The threshold ``c`` is a constant (gradients do not flow through the max).
    ``c_mode`` picks the scope of the max: over all valid pixels in the batch,
    or per image.
    """
    if pred.shape != gt.shape:
        raise DataError(f"pred shape {tuple(pred.shape)} != gt shape {tuple(gt.shape)}")
    valid = valid_mask.to(torch.bool)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return TaskLoss(_zero_like(pred), 0)

    residual = torch.where(valid, pred - gt, torch.zeros_like(pred))
    abs_res = residual.abs()
    with torch.no_grad():
        if c_mode == "batch":
            c = fraction * abs_res.max()
        elif c_mode == "image":
            flat = abs_res.reshape(abs_res.shape[0], -1)
            c = (fraction * flat.max(dim=1).values).reshape(
                -1, *([1] * (abs_res.dim() - 1)))
        else:
            raise DataError(f"unknown c_mode {c_mode!r}")
    # keep the unselected quadratic branch finite when c == 0
    c_safe = torch.clamp(c, min=torch.finfo(pred.dtype).tiny)
    quadratic = (residual * residual + c * c) / (2 * c_safe)
    per_pixel = torch.where(abs_res <= c, abs_res, quadratic)
    loss = per_pixel[valid].sum() / n_valid
    return TaskLoss(loss, n_valid)


def normals_loss(pred: torch.Tensor, gt: torch.Tensor, valid_mask: torch.Tensor,
                 eps: float = 1e-8) -> TaskLoss:
    """Mean over valid pixels of the negative dot product after normalizing
    the prediction. Pixels where the prediction norm is below ``eps`` are
    excluded from both the mean and the gradient.
    """
    if pred.shape != gt.shape or pred.shape[1] != 3:
        raise DataError("pred and gt must both have shape (B,3,h,w)")
    valid = valid_mask.to(torch.bool)
    if valid.shape != (pred.shape[0], *pred.shape[2:]):
        raise DataError("valid_mask must have shape (B,h,w)")
    norm = torch.linalg.vector_norm(pred, dim=1)
    usable = valid & (norm >= eps)
    n_valid = int(usable.sum())
    if n_valid == 0:
        return TaskLoss(_zero_like(pred), 0)
    # zero out unusable pixels before normalizing so no gradient leaks there
    mask = usable.unsqueeze(1)
    safe_pred = torch.where(mask, pred, torch.zeros_like(pred))
    unit = safe_pred / torch.clamp(norm, min=eps).unsqueeze(1)
    dots = (unit * gt).sum(dim=1)
    loss = -(dots[usable].sum()) / n_valid
    return TaskLoss(loss, n_valid)


def total_loss(parts: dict[str, TaskLoss], config: LossConfig) -> LossReport:
    """Combine per-task losses into the weighted total.

    Tasks missing from ``parts`` or with zero valid pixels contribute zero;
    the remaining weights are not renormalized.
    """
    weights = {
        "segmentation": config.lam,
        "depth": 1.0 - config.lam,
        "normals": config.normals_weight,
    }
    total = 0.0
    values: dict[str, float | None] = {"segmentation": None, "depth": None, "normals": None}
    counts: dict[str, int] = {}
    for task, part in parts.items():
        if task not in weights:
            raise DataError(f"unknown task {task!r} in loss parts")
        counts[task] = part.valid_pixels
        values[task] = part.value
        if part.valid_pixels > 0:
            total = total + weights[task] * part.value
    if isinstance(total, float):  # every task empty
        some = next(iter(parts.values()), None)
        total = _zero_like(some.value) if isinstance(getattr(some, "value", None), torch.Tensor) else 0.0
    return LossReport(
        segm=values["segmentation"], depth=values["depth"], normals=values["normals"],
        total=total, valid_pixel_counts=counts,
    )

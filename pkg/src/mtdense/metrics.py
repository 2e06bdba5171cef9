"""Evaluation metrics for segmentation, depth and surface normals, plus the
forward-pass latency benchmark.

Accumulators are merge-able (associative, commutative), so metrics are
invariant to how the test set is batched: a global confusion matrix for IoU,
pooled per-pixel sums for depth and normals. A per-image averaging mode for
the depth bundle is available behind a flag.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

DEPTH_FLOOR_M = 1e-3  # predictions are clamped here before logs/ratios


class SegmentationAccumulator:
    """Global confusion matrix over the whole test set."""

    def __init__(self, num_classes: int, ignore_index: int = 255):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.confusion = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, pred: np.ndarray, gt: np.ndarray) -> None:
        pred = np.asarray(pred).reshape(-1)
        gt = np.asarray(gt).reshape(-1)
        if pred.shape != gt.shape:
            raise DataError("pred and gt label maps must have the same shape")
        keep = gt != self.ignore_index
        pred, gt = pred[keep], gt[keep]
        if np.any((gt < 0) | (gt >= self.num_classes)):
            raise DataError("ground-truth label outside [0, num_classes)")
        if np.any((pred < 0) | (pred >= self.num_classes)):
            raise DataError("predicted label outside [0, num_classes)")
        idx = gt * self.num_classes + pred
        self.confusion += np.bincount(idx, minlength=self.num_classes**2) \
            .reshape(self.num_classes, self.num_classes)

    def merge(self, other: "SegmentationAccumulator") -> None:
        self.confusion += other.confusion

    def result(self) -> dict:
        tp = np.diag(self.confusion).astype(np.float64)
        gt_count = self.confusion.sum(axis=1)
        union = gt_count + self.confusion.sum(axis=0) - np.diag(self.confusion)
        with np.errstate(divide="ignore", invalid="ignore"):
            iou = np.where(union > 0, tp / union, np.nan)
        present = gt_count > 0  # classes appearing in the ground truth
        miou = float(np.mean(iou[present])) if present.any() else float("nan")
        return {
            "per_class_iou": [None if not p else float(v)
                              for p, v in zip(present, iou)],
            "miou": miou,
        }


class DepthAccumulator:
    """Pooled depth error sums; set ``per_image=True`` for mean-of-image-means."""

    def __init__(self, per_image: bool = False, floor: float = DEPTH_FLOOR_M):
        self.per_image = per_image
        self.floor = floor
        self.pixel_sums = np.zeros(8, dtype=np.float64)  # n, sq, sqlog, absrel, sqrel, d1, d2, d3
        self.image_sums = np.zeros(8, dtype=np.float64)

    def add(self, pred: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> None:
        pred = np.asarray(pred, dtype=np.float64).reshape(-1)
        gt = np.asarray(gt, dtype=np.float64).reshape(-1)
        valid = np.asarray(valid, dtype=bool).reshape(-1)
        p, g = pred[valid], gt[valid]
        if np.any(g <= 0):
            raise DataError("valid ground-truth depth must be positive")
        n = p.size
        if n == 0:
            return
        diff = p - g
        p_pos = np.maximum(p, self.floor)
        ratio = np.maximum(p_pos / g, g / p_pos)
        log_diff = np.log(p_pos) - np.log(g)
        sums = np.array([
            n,
            float(np.sum(diff**2)),
            float(np.sum(log_diff**2)),
            float(np.sum(np.abs(diff) / g)),
            float(np.sum(diff**2 / g)),
            float(np.sum(ratio < 1.25)),
            float(np.sum(ratio < 1.25**2)),
            float(np.sum(ratio < 1.25**3)),
        ])
        self.pixel_sums += sums
        per_image = sums.copy()
        per_image[1:] /= n
        per_image[0] = 1
        self.image_sums += per_image

    def merge(self, other: "DepthAccumulator") -> None:
        self.pixel_sums += other.pixel_sums
        self.image_sums += other.image_sums

    def result(self) -> dict:
        sums = self.image_sums if self.per_image else self.pixel_sums
        n = sums[0]
        if n == 0:
            raise DataError("no valid depth pixels to evaluate")
        mean = sums[1:] / n
        return {
            "rmse_lin": float(np.sqrt(mean[0])),
            "rmse_log": float(np.sqrt(mean[1])),
            "abs_rel": float(mean[2]),
            "sqr_rel": float(mean[3]),
            "delta1": float(mean[4]),
            "delta2": float(mean[5]),
            "delta3": float(mean[6]),
        }


class NormalsAccumulator:
    """Pooled per-pixel angular errors in degrees."""

    def __init__(self, eps: float = 1e-8):
        self.eps = eps
        self.angles: list[np.ndarray] = []
        self.excluded = 0

    def add(self, pred: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> None:
        pred = np.asarray(pred, dtype=np.float64)
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape or pred.shape[-1] != 3:
            raise DataError("pred and gt normals must have shape (..., 3)")
        pred = pred.reshape(-1, 3)[np.asarray(valid, dtype=bool).reshape(-1)]
        gt = gt.reshape(-1, 3)[np.asarray(valid, dtype=bool).reshape(-1)]
        norm = np.linalg.norm(pred, axis=1)
        usable = norm >= self.eps
        self.excluded += int((~usable).sum())
        dots = (pred[usable] / norm[usable, None] * gt[usable]).sum(axis=1)
        self.angles.append(np.degrees(np.arccos(np.clip(dots, -1.0, 1.0))))

    def merge(self, other: "NormalsAccumulator") -> None:
        self.angles.extend(other.angles)
        self.excluded += other.excluded

    def result(self) -> dict:
        if not self.angles or sum(a.size for a in self.angles) == 0:
            raise DataError("no valid normal pixels to evaluate")
        allang = np.concatenate(self.angles)
        return {
            "mean_angle": float(np.mean(allang)),
            "median_angle": float(np.median(allang)),
            "excluded_pixels": self.excluded,
        }


def eval_segmentation(preds, gts, num_classes: int, ignore_index: int = 255) -> dict:
    """IoU per class and mIoU over label-map pairs (lists or single arrays)."""
    acc = SegmentationAccumulator(num_classes, ignore_index)
    for p, g in _paired(preds, gts):
        acc.add(p, g)
    return acc.result()


def eval_depth(preds, gts, valid_masks, per_image: bool = False) -> dict:
    acc = DepthAccumulator(per_image=per_image)
    for p, (g, v) in zip(_aslist(preds), zip(_aslist(gts), _aslist(valid_masks))):
        acc.add(p, g, v)
    return acc.result()


def eval_normals(preds, gts, valid_masks) -> dict:
    acc = NormalsAccumulator()
    for p, (g, v) in zip(_aslist(preds), zip(_aslist(gts), _aslist(valid_masks))):
        acc.add(p, g, v)
    return acc.result()


def _aslist(x):
    return x if isinstance(x, (list, tuple)) else [x]


def _paired(preds, gts):
    return zip(_aslist(preds), _aslist(gts))


@dataclass
class LatencyReport:
    mean_ms: float
    std_ms: float
    n_passes: int
    warmup: int
    device: str
    input_size: tuple[int, int]

    def as_dict(self) -> dict:
        return {"mean_ms": self.mean_ms, "std_ms": self.std_ms,
                "n_passes": self.n_passes, "warmup": self.warmup,
                "device": self.device, "input_size": list(self.input_size)}


def benchmark_latency(model, input_size: tuple[int, int], n_passes: int = 100,
                      warmup: int = 10, device: str = "cpu") -> LatencyReport:
    """Wall-clock statistics over ``n_passes`` forward passes (after warmup).

    Numbers are environment-dependent and only meaningful on the machine that
    produced them. ``model`` may be any callable taking the input tensor.
    """
    import torch

    h, w = input_size
    x = torch.zeros(1, 3, h, w, device=device)
    fn = model
    if isinstance(model, torch.nn.Module):
        model.eval()

    times = []
    with torch.no_grad():
        for _ in range(warmup):
            fn(x)
        if device.startswith("cuda"):
            torch.cuda.synchronize()
        for _ in range(n_passes):
            t0 = time.perf_counter()
            fn(x)
            if device.startswith("cuda"):
                torch.cuda.synchronize()
            times.append((time.perf_counter() - t0) * 1000.0)
    arr = np.asarray(times)
    return LatencyReport(mean_ms=float(arr.mean()), std_ms=float(arr.std()),
                        n_passes=n_passes, warmup=warmup, device=device,
                        input_size=input_size)


@dataclass
class MetricReport:
    segm: dict | None = None
    depth: dict | None = None
    normals: dict | None = None
    latency: dict | None = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {}
        for key in ("segm", "depth", "normals", "latency"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        out.update(self.extras)
        return out


def format_comparison(report: MetricReport, reference: dict[str, dict]) -> str:
    """Plain-text table of this report next to reference rows (e.g. published
    results), one column per metric the report contains."""
    rows = {"ours": _flatten(report.as_dict())}
    rows.update({name: _flatten(vals) for name, vals in reference.items()})
    cols = sorted({k for vals in rows.values() for k in vals})
    width = max(len(c) for c in cols) + 2 if cols else 8
    name_w = max(len(n) for n in rows) + 2
    lines = [" " * name_w + "".join(c.rjust(width) for c in cols)]
    for name, vals in rows.items():
        cells = []
        for c in cols:
            v = vals.get(c)
            cells.append(("-" if v is None else f"{v:.4g}").rjust(width))
        lines.append(name.ljust(name_w) + "".join(cells))
    return "\n".join(lines)


def _flatten(d: dict, prefix: str = "") -> dict:
    flat = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, f"{key}."))
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            flat[key] = float(v)
    return flat

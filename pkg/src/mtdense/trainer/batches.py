"""Sample loading, augmentation and batching for the optimization loop.

Augmentation is a random square crop plus random horizontal mirroring.
Images smaller than the crop are reflection-padded; annotations are padded
with ignore/invalid so padded pixels never contribute loss. Mirroring flips
the x component of surface normals. Every augmented sample consumes exactly
three draws from the generator, keeping data order reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..asymdata.formats import IGNORE_INDEX, read_depth, read_image, read_mask, read_normals
from ..asymdata.manifest import DatasetManifest, Sample, remap_labels
from ..errors import DataError


@dataclass
class PreprocessConfig:
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)


def image_to_tensor(rgb01: np.ndarray, preprocessing: PreprocessConfig | None = None) -> torch.Tensor:
    """(H, W, 3) float RGB in [0,1] -> normalized (3, H, W) float32 tensor."""
    pp = preprocessing or PreprocessConfig()
    x = torch.from_numpy(np.ascontiguousarray(rgb01)).float().permute(2, 0, 1)
    mean = torch.tensor(pp.mean).reshape(3, 1, 1)
    std = torch.tensor(pp.std).reshape(3, 1, 1)
    return (x - mean) / std


def pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflection-pad (B,C,H,W) on the bottom/right to a size multiple."""
    h, w = x.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    return x, (h, w)


@dataclass
class LoadedSample:
    image: torch.Tensor                      # (3, H, W) normalized
    seg: torch.Tensor | None = None          # (H, W) int64, global indices
    depth: torch.Tensor | None = None        # (1, H, W) float32 meters
    depth_valid: torch.Tensor | None = None  # (H, W) bool
    normals: torch.Tensor | None = None      # (3, H, W) float32
    normals_valid: torch.Tensor | None = None
    class_range: tuple[int, int] = (0, 0)
    present: dict[str, bool] = field(default_factory=dict)

    @property
    def size(self) -> tuple[int, int]:
        return tuple(self.image.shape[-2:])


def load_sample(sample: Sample, manifest: DatasetManifest,
                tasks: tuple[str, ...],
                preprocessing: PreprocessConfig | None = None) -> LoadedSample:
    rgb = read_image(sample.image_path)
    h, w = rgb.shape[:2]
    out = LoadedSample(image=image_to_tensor(rgb, preprocessing))
    space = manifest.label_spaces[sample.dataset_id]
    out.class_range = space.global_range
    for task in tasks:
        ann = sample.annotations.get(task)
        out.present[task] = ann is not None
        if task == "segmentation":
            if ann is not None:
                labels = read_mask(ann.path)
                if labels.shape != (h, w):
                    raise DataError(f"mask {ann.path} size differs from its image")
                labels = remap_labels(manifest, sample.dataset_id, labels)
            else:
                labels = np.full((h, w), IGNORE_INDEX, dtype=np.int64)
            out.seg = torch.from_numpy(np.ascontiguousarray(labels)).long()
        elif task == "depth":
            if ann is not None:
                meters, valid = read_depth(ann.path)
                if meters.shape != (h, w):
                    raise DataError(f"depth {ann.path} size differs from its image")
            else:
                meters = np.zeros((h, w), dtype=np.float32)
                valid = np.zeros((h, w), dtype=bool)
            out.depth = torch.from_numpy(np.ascontiguousarray(meters)).float().unsqueeze(0)
            out.depth_valid = torch.from_numpy(np.ascontiguousarray(valid))
        elif task == "normals":
            if ann is not None:
                n, valid = read_normals(ann.path)
                if n.shape[:2] != (h, w):
                    raise DataError(f"normals {ann.path} size differs from its image")
                nt = torch.from_numpy(np.ascontiguousarray(n)).float().permute(2, 0, 1)
                vt = torch.from_numpy(np.ascontiguousarray(valid))
            else:
                nt = torch.zeros(3, h, w)
                vt = torch.zeros(h, w, dtype=torch.bool)
            out.normals = nt
            out.normals_valid = vt
    return out


def _pad_2d(t: torch.Tensor, ph: int, pw: int, mode: str, value=0):
    if not ph and not pw:
        return t
    if mode == "reflect":
        return F.pad(t.unsqueeze(0), (0, pw, 0, ph), mode="reflect").squeeze(0)
    if t.dtype == torch.bool:  # constant-pad on bool is not supported everywhere
        return F.pad(t.to(torch.uint8), (0, pw, 0, ph), value=int(bool(value))).bool()
    return F.pad(t, (0, pw, 0, ph), mode="constant", value=value)


def augment_crop_mirror(ls: LoadedSample, crop: int, mirror_prob: float,
                        gen: torch.Generator) -> LoadedSample:
    """Random ``crop``x``crop`` window plus random horizontal mirror."""
    h, w = ls.size
    ph, pw = max(0, crop - h), max(0, crop - w)
    image = _pad_2d(ls.image, ph, pw, "reflect")
    seg = _pad_2d(ls.seg, ph, pw, "constant", IGNORE_INDEX) if ls.seg is not None else None
    depth = _pad_2d(ls.depth, ph, pw, "constant", 0.0) if ls.depth is not None else None
    depth_valid = (_pad_2d(ls.depth_valid, ph, pw, "constant", False)
                   if ls.depth_valid is not None else None)
    normals = _pad_2d(ls.normals, ph, pw, "constant", 0.0) if ls.normals is not None else None
    normals_valid = (_pad_2d(ls.normals_valid, ph, pw, "constant", False)
                     if ls.normals_valid is not None else None)

    hh, ww = image.shape[-2:]
    top = int(torch.randint(0, hh - crop + 1, (1,), generator=gen))
    left = int(torch.randint(0, ww - crop + 1, (1,), generator=gen))
    mirror = bool(torch.rand(1, generator=gen) < mirror_prob)

    def cut(t):
        return None if t is None else t[..., top:top + crop, left:left + crop]

    image, seg, depth, depth_valid, normals, normals_valid = map(
        cut, (image, seg, depth, depth_valid, normals, normals_valid))
    if mirror:
        flip = lambda t: None if t is None else t.flip(-1)
        image, seg, depth, depth_valid, normals, normals_valid = map(
            flip, (image, seg, depth, depth_valid, normals, normals_valid))
        if normals is not None:
            normals = normals.clone()
            normals[0] = -normals[0]
    return LoadedSample(image=image, seg=seg, depth=depth, depth_valid=depth_valid,
                        normals=normals, normals_valid=normals_valid,
                        class_range=ls.class_range, present=dict(ls.present))


@dataclass
class Batch:
    images: torch.Tensor
    seg: torch.Tensor | None
    depth: torch.Tensor | None
    depth_valid: torch.Tensor | None
    normals: torch.Tensor | None
    normals_valid: torch.Tensor | None
    class_ranges: list[tuple[int, int]]
    presence: dict[str, list[bool]]

    def task_example_counts(self) -> dict[str, int]:
        return {task: sum(flags) for task, flags in self.presence.items()}

    @property
    def size(self) -> int:
        return self.images.shape[0]


def collate(samples: list[LoadedSample], tasks: tuple[str, ...]) -> Batch:
    def stack(attr):
        vals = [getattr(s, attr) for s in samples]
        return None if any(v is None for v in vals) else torch.stack(vals)

    return Batch(
        images=torch.stack([s.image for s in samples]),
        seg=stack("seg") if "segmentation" in tasks else None,
        depth=stack("depth") if "depth" in tasks else None,
        depth_valid=stack("depth_valid") if "depth" in tasks else None,
        normals=stack("normals") if "normals" in tasks else None,
        normals_valid=stack("normals_valid") if "normals" in tasks else None,
        class_ranges=[s.class_range for s in samples],
        presence={t: [s.present.get(t, False) for s in samples] for t in tasks},
    )


def upsample_to(pred: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    if pred.shape[-2:] == size:
        return pred
    return F.interpolate(pred, size=size, mode="bilinear", align_corners=False)

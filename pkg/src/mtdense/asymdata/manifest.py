"""Datasets with asymmetric annotations.

A manifest is a flat list of samples, each carrying an image path and any
subset of annotation slots (segmentation / depth / normals). Every slot
records its provenance: real ground truth, or a pseudo-label produced by a
teacher. Label spaces of distinct datasets occupy disjoint global index
ranges so several datasets can share one segmentation head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError, DataError
from .formats import IGNORE_INDEX

MODALITIES = ("segmentation", "depth", "normals")
GROUND_TRUTH = "ground_truth"
PSEUDO_LABEL = "pseudo_label"


@dataclass
class Annotation:
    path: str
    kind: str = GROUND_TRUTH  # or PSEUDO_LABEL
    teacher_id: str | None = None

    def validate(self) -> None:
        if self.kind not in (GROUND_TRUTH, PSEUDO_LABEL):
            raise DataError(f"unknown annotation kind {self.kind!r}")
        if self.kind == PSEUDO_LABEL and not self.teacher_id:
            raise DataError("pseudo labels must record a teacher_id")


@dataclass
class Sample:
    image_path: str
    annotations: dict[str, Annotation] = field(default_factory=dict)
    dataset_id: str = "default"

    def has(self, modality: str) -> bool:
        return modality in self.annotations

    def validate(self) -> None:
        if not self.annotations:
            raise DataError(f"sample {self.image_path} has no annotations at all")
        for modality, ann in self.annotations.items():
            if modality not in MODALITIES:
                raise DataError(f"unknown modality {modality!r}")
            ann.validate()


@dataclass
class LabelSpace:
    num_classes: int
    offset: int = 0
    class_names: list[str] | None = None

    @property
    def global_range(self) -> tuple[int, int]:
        return (self.offset, self.offset + self.num_classes)


@dataclass
class DatasetManifest:
    samples: list[Sample] = field(default_factory=list)
    label_spaces: dict[str, LabelSpace] = field(default_factory=dict)
    split: str = "finetune_small"  # pretrain_large | finetune_small | test

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def total_classes(self) -> int:
        return max((ls.offset + ls.num_classes for ls in self.label_spaces.values()),
                   default=0)

    def validate(self) -> None:
        ranges = sorted(ls.global_range for ls in self.label_spaces.values())
        for (a_lo, a_hi), (b_lo, b_hi) in zip(ranges, ranges[1:]):
            if b_lo < a_hi:
                raise DataError(
                    f"label ranges [{a_lo},{a_hi}) and [{b_lo},{b_hi}) overlap")
        for s in self.samples:
            s.validate()
            if s.dataset_id not in self.label_spaces:
                raise DataError(
                    f"sample {s.image_path} references unknown dataset {s.dataset_id!r}")

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "label_spaces": {
                did: {"num_classes": ls.num_classes, "offset": ls.offset,
                      "class_names": ls.class_names}
                for did, ls in sorted(self.label_spaces.items())
            },
            "samples": [
                {
                    "image": s.image_path,
                    "dataset_id": s.dataset_id,
                    "annotations": {
                        m: {"path": a.path, "kind": a.kind, "teacher_id": a.teacher_id}
                        for m, a in sorted(s.annotations.items())
                    },
                }
                for s in self.samples
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        manifest = cls(split=data.get("split", "finetune_small"))
        for did, ls in data.get("label_spaces", {}).items():
            manifest.label_spaces[did] = LabelSpace(
                num_classes=ls["num_classes"], offset=ls.get("offset", 0),
                class_names=ls.get("class_names"))
        for row in data.get("samples", []):
            anns = {m: Annotation(path=a["path"], kind=a.get("kind", GROUND_TRUTH),
                                  teacher_id=a.get("teacher_id"))
                    for m, a in row.get("annotations", {}).items()}
            manifest.samples.append(Sample(image_path=row["image"], annotations=anns,
                                           dataset_id=row.get("dataset_id", "default")))
        return manifest

    def save(self, path: str | Path) -> None:
        from .formats import atomic_write
        payload = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        atomic_write(path, lambda tmp: Path(tmp).write_text(payload))

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def partition(manifest: DatasetManifest,
              task_pair: tuple[str, str] = ("depth", "segmentation"),
              ) -> tuple[list[Sample], list[Sample]]:
    """Split samples into (S1, S2) for ``task_pair`` = (present, possibly missing).

    S2 holds samples annotated for both tasks of the pair; S1 holds the rest
    (in the intended usage every sample carries task one, so S1 is exactly
    "missing task two"). The two lists are always disjoint and cover the
    manifest.
    """
    t1, t2 = task_pair
    for t in (t1, t2):
        if t not in MODALITIES:
            raise DataError(f"unknown task {t!r}")
    s2 = [s for s in manifest.samples if s.has(t1) and s.has(t2)]
    s1 = [s for s in manifest.samples if not (s.has(t1) and s.has(t2))]
    return s1, s2


def remap_labels(manifest: DatasetManifest, dataset_id: str,
                 labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Map a dataset-local label map into the global index space."""
    if dataset_id not in manifest.label_spaces:
        raise DataError(f"unknown dataset_id {dataset_id!r}")
    space = manifest.label_spaces[dataset_id]
    labels = np.asarray(labels)
    out = np.where(labels == ignore_index, labels, labels + space.offset)
    return out


def concat_manifests(parts: dict[str, DatasetManifest], split: str) -> DatasetManifest:
    """Concatenate several single-dataset manifests into one.

    Keys become dataset_ids; label offsets are assigned in key order so the
    global ranges are disjoint intervals.
    """
    out = DatasetManifest(split=split)
    offset = 0
    for did, m in parts.items():
        if len(m.label_spaces) != 1:
            raise ConfigError(f"manifest for {did!r} must declare exactly one label space")
        (ls,) = m.label_spaces.values()
        out.label_spaces[did] = LabelSpace(num_classes=ls.num_classes, offset=offset,
                                           class_names=ls.class_names)
        offset += ls.num_classes
        for s in m.samples:
            out.samples.append(Sample(image_path=s.image_path,
                                      annotations=dict(s.annotations),
                                      dataset_id=did))
    out.validate()
    return out


# -- directory layouts ----------------------------------------------------


def load_manifest(root_dir: str | Path, layout: str, num_classes: int | None = None,
                  split: str = "finetune_small", dataset_id: str | None = None,
                  validate_labels: bool = True) -> DatasetManifest:
    """Build a manifest from an on-disk dataset.

    Layouts:

    * ``generic-listfile``: ``<root>/list.txt`` with one tab-separated row per
      sample: image, segmentation, depth, normals (paths relative to root,
      ``-`` for an absent column).
    * ``nyud`` / ``kitti``: directory pairing. ``<root>/images/*.png`` with
      optional ``<root>/segm/<name>.png`` (8-bit mask, 255 = unlabeled) and
      ``<root>/depth/<name>.png`` (16-bit millimeters, 0 = no measurement) or
      ``<name>.npy`` (float meters); ``<root>/normals/<name>.npy`` if present.

    ``num_classes`` is required unless the root contains ``label_space.json``
    (written by the synthesizer) declaring it.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    if layout not in ("generic-listfile", "nyud", "kitti"):
        raise DataError(f"unknown layout {layout!r}")
    dataset_id = dataset_id or (layout if layout != "generic-listfile" else "default")

    meta_path = root / "label_space.json"
    class_names = None
    if num_classes is None and meta_path.exists():
        meta = json.loads(meta_path.read_text())
        num_classes = meta["num_classes"]
        class_names = meta.get("class_names")
    if num_classes is None:
        raise ConfigError("num_classes not given and no label_space.json found")

    if layout == "generic-listfile":
        samples, errors = _parse_listfile(root)
    else:
        samples, errors = _pair_directories(root)
    for s in samples:
        s.dataset_id = dataset_id

    if validate_labels:
        errors += _check_label_ranges(samples, num_classes)
    if errors:
        raise DataError("manifest load failed:\n  " + "\n  ".join(errors))

    manifest = DatasetManifest(
        samples=samples,
        label_spaces={dataset_id: LabelSpace(num_classes=num_classes,
                                             class_names=class_names)},
        split=split,
    )
    manifest.validate()
    return manifest


def _parse_listfile(root: Path) -> tuple[list[Sample], list[str]]:
    listfile = root / "list.txt"
    if not listfile.exists():
        return [], [f"missing list file {listfile}"]
    samples: list[Sample] = []
    errors: list[str] = []
    for lineno, line in enumerate(listfile.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.rstrip("\n").split("\t")
        if len(cols) < 2:
            errors.append(f"line {lineno}: need at least image and one annotation column")
            continue
        cols += ["-"] * (4 - len(cols))
        image, seg, depth, normals = cols[:4]
        anns: dict[str, Annotation] = {}
        for modality, col in zip(MODALITIES, (seg, depth, normals)):
            if col != "-":
                p = root / col
                if not p.exists():
                    errors.append(f"line {lineno}: missing {modality} file {p}")
                else:
                    anns[modality] = Annotation(path=str(p))
        img_path = root / image
        if not img_path.exists():
            errors.append(f"line {lineno}: missing image {img_path}")
            continue
        if not anns:
            errors.append(f"line {lineno}: sample has no annotations")
            continue
        samples.append(Sample(image_path=str(img_path), annotations=anns))
    return samples, errors


def _pair_directories(root: Path) -> tuple[list[Sample], list[str]]:
    images_dir = root / "images"
    if not images_dir.is_dir():
        return [], [f"missing images directory {images_dir}"]
    samples: list[Sample] = []
    errors: list[str] = []
    for img in sorted(images_dir.iterdir()):
        if img.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        anns: dict[str, Annotation] = {}
        seg = root / "segm" / f"{img.stem}.png"
        if seg.exists():
            anns["segmentation"] = Annotation(path=str(seg))
        for cand in (root / "depth" / f"{img.stem}.png", root / "depth" / f"{img.stem}.npy"):
            if cand.exists():
                anns["depth"] = Annotation(path=str(cand))
                break
        norm = root / "normals" / f"{img.stem}.npy"
        if norm.exists():
            anns["normals"] = Annotation(path=str(norm))
        if not anns:
            errors.append(f"image {img.name} has no annotation files")
            continue
        samples.append(Sample(image_path=str(img), annotations=anns))
    if not samples and not errors:
        errors.append(f"no images found under {images_dir}")
    return samples, errors


def _check_label_ranges(samples: list[Sample], num_classes: int) -> list[str]:
    errors = []
    for s in samples:
        ann = s.annotations.get("segmentation")
        if ann is None or not Path(ann.path).exists():
            continue
        try:
            with Image.open(ann.path) as img:
                lo, hi = img.convert("L").getextrema() if img.mode == "P" else img.getextrema()
        except OSError as exc:
            errors.append(f"unreadable mask {ann.path}: {exc}")
            continue
        if hi >= num_classes and hi != IGNORE_INDEX:
            errors.append(
                f"mask {ann.path} contains label {hi} outside [0,{num_classes}) "
                f"and != {IGNORE_INDEX}")
    return errors

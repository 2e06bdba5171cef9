"""Teacher (expert) models that fill in missing annotations.

A teacher is anything with a ``teacher_id``, a ``modality`` and a
``predict(sample, image) -> np.ndarray`` method returning hard labels
(int64 class map) for segmentation or a float32 meter map for depth.
Besides wrapping a trained network, the module ships a constant teacher and
an oracle teacher (optionally noisy) for tests and desk-scale experiments.
"""

from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from .formats import read_depth, read_mask
from .manifest import DatasetManifest, Sample


def _sample_rng(seed: int, key: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        (seed << 32) ^ zlib.crc32(key.encode("utf-8"))))


class ConstantTeacher:
    """Predicts the same value everywhere; a degenerate but handy baseline."""

    def __init__(self, modality: str, value: float, teacher_id: str = "constant"):
        if modality not in ("segmentation", "depth"):
            raise ConfigError(f"constant teacher cannot produce {modality!r}")
        self.modality = modality
        self.value = value
        self.teacher_id = teacher_id

    def predict(self, sample: Sample, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        if self.modality == "segmentation":
            return np.full((h, w), int(self.value), dtype=np.int64)
        return np.full((h, w), float(self.value), dtype=np.float32)


class OracleTeacher:
    """Returns the withheld true annotation, optionally corrupted.

    ``reference`` maps image paths to true annotation paths (built from a
    fully annotated manifest). With ``noise_rate`` > 0, segmentation labels
    are flipped to a random other class at that per-pixel rate, and depth is
    perturbed multiplicatively with log-normal noise of that sigma. Noise is
    deterministic per (seed, image path).
    """

    def __init__(self, modality: str, reference: dict[str, str],
                 num_classes: int | None = None, noise_rate: float = 0.0,
                 seed: int = 0, teacher_id: str | None = None):
        if modality not in ("segmentation", "depth"):
            raise ConfigError(f"oracle teacher cannot produce {modality!r}")
        if modality == "segmentation" and noise_rate > 0 and not num_classes:
            raise ConfigError("noisy segmentation oracle needs num_classes")
        self.modality = modality
        self.reference = dict(reference)
        self.num_classes = num_classes
        self.noise_rate = float(noise_rate)
        self.seed = seed
        self.teacher_id = teacher_id or (
            f"oracle-noise{noise_rate:g}" if noise_rate else "oracle")

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, modality: str,
                      **kwargs) -> "OracleTeacher":
        reference = {s.image_path: s.annotations[modality].path
                     for s in manifest.samples if s.has(modality)}
        num_classes = kwargs.pop("num_classes", manifest.total_classes or None)
        return cls(modality, reference, num_classes=num_classes, **kwargs)

    def predict(self, sample: Sample, image: np.ndarray) -> np.ndarray:
        try:
            ref_path = self.reference[sample.image_path]
        except KeyError:
            raise DataError(f"oracle has no reference for {sample.image_path}") from None
        if self.modality == "segmentation":
            labels = read_mask(ref_path)
            if self.noise_rate > 0:
                rng = _sample_rng(self.seed, sample.image_path)
                flip = rng.random(labels.shape) < self.noise_rate
                flip &= labels != 255
                offsets = rng.integers(1, self.num_classes, size=labels.shape)
                labels = np.where(flip, (labels + offsets) % self.num_classes, labels)
            return labels
        meters, valid = read_depth(ref_path)
        if self.noise_rate > 0:
            rng = _sample_rng(self.seed, sample.image_path)
            meters = meters * np.exp(rng.normal(0.0, self.noise_rate, meters.shape))
            meters = meters.astype(np.float32)
        return np.where(valid, meters, 0.0).astype(np.float32)


class ModelTeacher:
    """Wraps a trained network as a teacher for one of its tasks.

    Predictions are upsampled to image resolution; segmentation is argmaxed
    to hard labels (optionally restricted to one dataset's label range, local
    indices returned), depth is clamped to a positive floor.
    """

    def __init__(self, model, modality: str, preprocessing=None,
                 teacher_id: str = "model", class_range: tuple[int, int] | None = None,
                 depth_floor: float = 1e-3):
        if modality not in ("segmentation", "depth"):
            raise ConfigError(f"model teacher cannot produce {modality!r}")
        self.model = model
        self.modality = modality
        self.preprocessing = preprocessing
        self.teacher_id = teacher_id
        self.class_range = class_range
        self.depth_floor = depth_floor

    def predict(self, sample: Sample, image: np.ndarray) -> np.ndarray:
        import torch

        from ..trainer.batches import image_to_tensor, pad_to_multiple
        x = image_to_tensor(image, self.preprocessing).unsqueeze(0)
        x, (h, w) = pad_to_multiple(x, 32)
        self.model.eval()
        with torch.no_grad():
            out = self.model(x)[self.modality]
            out = torch.nn.functional.interpolate(
                out, size=x.shape[-2:], mode="bilinear", align_corners=False)
        out = out[:, :, :h, :w]
        if self.modality == "segmentation":
            if self.class_range is not None:
                lo, hi = self.class_range
                return out[0, lo:hi].argmax(dim=0).numpy().astype(np.int64)
            return out[0].argmax(dim=0).numpy().astype(np.int64)
        return out[0, 0].clamp_min(self.depth_floor).numpy().astype(np.float32)

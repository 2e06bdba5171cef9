"""On-disk annotation formats.

The toolkit reads and writes:

* images           RGB PNG/JPEG, any 8-bit mode convertible to RGB
* segmentation     single-channel 8-bit PNG, class index per pixel, 255 = ignore
* depth (.png)     single-channel 16-bit PNG, millimeters, 0 = no measurement
* depth (.npy)     float32 array, meters, values <= 0 or non-finite = invalid
* normals (.npy)   float32 array (H, W, 3), unit vectors, camera coordinates

Depth files keep their unit by extension; reads always return meters.
Every write goes through a same-directory temp file + atomic rename, and every
format round-trips bit-exact.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError

IGNORE_INDEX = 255
DEPTH_MM_SCALE = 1000.0


def atomic_write(path: str | Path, write_fn) -> None:
    """Call ``write_fn(tmp_path)`` then atomically rename onto ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def read_image(path: str | Path) -> np.ndarray:
    """RGB image as float32 (H, W, 3) in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr.astype(np.float32) / 255.0


def write_image(path: str | Path, rgb01: np.ndarray) -> None:
    arr = np.clip(np.round(rgb01 * 255.0), 0, 255).astype(np.uint8)
    atomic_write(path, lambda tmp: Image.fromarray(arr, mode="RGB").save(tmp, format="PNG"))


def read_mask(path: str | Path) -> np.ndarray:
    """Segmentation mask as int64 (H, W); 255 means unlabeled."""
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "I", "I;16"):
                raise DataError(f"mask {path} has unsupported mode {img.mode}")
            arr = np.asarray(img.convert("L") if img.mode == "P" else img)
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    return arr.astype(np.int64)


def write_mask(path: str | Path, labels: np.ndarray) -> None:
    if labels.min() < 0 or labels.max() > 255:
        raise DataError("segmentation labels must fit in uint8")
    arr = labels.astype(np.uint8)
    atomic_write(path, lambda tmp: Image.fromarray(arr, mode="L").save(tmp, format="PNG"))


def read_depth(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Depth in meters (float32) plus a validity mask.

    16-bit PNGs are millimeter maps with 0 marking missing measurements;
    ``.npy`` files are float meters with non-positive/non-finite invalid.
    """
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
        if arr.ndim != 2:
            raise DataError(f"depth array {path} must be 2-D, got shape {arr.shape}")
        meters = arr.astype(np.float32)
        valid = np.isfinite(meters) & (meters > 0)
        meters = np.where(valid, meters, 0.0).astype(np.float32)
        return meters, valid
    try:
        with Image.open(path) as img:
            raw = np.asarray(img)
    except OSError as exc:
        raise DataError(f"cannot read depth map {path}: {exc}") from exc
    if raw.ndim != 2:
        raise DataError(f"depth map {path} must be single-channel")
    mm = raw.astype(np.float32)
    valid = mm > 0
    return (mm / DEPTH_MM_SCALE).astype(np.float32), valid


def write_depth(path: str | Path, meters: np.ndarray, valid: np.ndarray | None = None) -> None:
    path = Path(path)
    if valid is None:
        valid = np.isfinite(meters) & (meters > 0)
    if path.suffix == ".npy":
        out = np.where(valid, meters, 0.0).astype(np.float32)
        atomic_write(path, lambda tmp: _save_npy(tmp, out))
        return
    mm = np.round(meters * DEPTH_MM_SCALE)
    if np.any(mm[valid] > np.iinfo(np.uint16).max):
        raise DataError("depth exceeds the 65.535 m range of 16-bit millimeter PNGs")
    mm = np.where(valid, mm, 0.0).astype(np.uint16)
    atomic_write(path, lambda tmp: Image.fromarray(mm, mode="I;16").save(tmp, format="PNG"))


def _save_npy(tmp: str, arr: np.ndarray) -> None:
    # np.save appends ".npy" to bare paths; a file object sidesteps that
    with open(tmp, "wb") as f:
        np.save(f, arr)


def read_normals(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals as float32 (H, W, 3) plus validity (non-zero norm)."""
    arr = np.load(path)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"normals array {path} must have shape (H, W, 3)")
    n = arr.astype(np.float32)
    norm = np.linalg.norm(n, axis=2)
    valid = np.isfinite(norm) & (norm > 0.5)  # unit vectors; 0 marks invalid
    return n, valid


def write_normals(path: str | Path, normals: np.ndarray) -> None:
    if normals.ndim != 3 or normals.shape[2] != 3:
        raise DataError("normals must have shape (H, W, 3)")
    out = normals.astype(np.float32)
    atomic_write(path, lambda tmp: _save_npy(tmp, out))

"""Procedural desk-scale dataset with mutually consistent annotations.

Each scene is a height field over the image grid: a receding ground plane
(class 0) with a few primitives composited by z-buffer — fronto-parallel
plates, tilted ramps and spheres. Depth is the height field itself, normals
are the analytic surface normals of the same field (oriented toward the
camera, negative z), and the class map follows the compositing. Shading and
distance fog tie local appearance to depth so the tasks are learnable from
RGB alone. Everything is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .formats import atomic_write, write_depth, write_image, write_mask, write_normals
from .manifest import Annotation, DatasetManifest, LabelSpace, Sample

Z_NEAR = 1.0
Z_FAR = 8.0
SCENE_WIDTH_M = 4.0
LIGHT_DIR = np.array([0.35, 0.25, -0.9])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
FOG_DENSITY = 0.18
HAZE = 0.55


@dataclass
class SceneArrays:
    rgb: np.ndarray      # (H, W, 3) float in [0, 1]
    labels: np.ndarray   # (H, W) int64
    depth: np.ndarray    # (H, W) float32 meters
    normals: np.ndarray  # (H, W, 3) float32 unit, camera coords


def _normalize(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec, axis=-1, keepdims=True)


def _class_palette(n_classes: int) -> np.ndarray:
    import colorsys
    colors = [(0.42, 0.45, 0.38)]  # ground
    for c in range(1, n_classes):
        colors.append(colorsys.hsv_to_rgb((c - 1) / max(1, n_classes - 1) * 0.85, 0.65, 0.9))
    return np.array(colors, dtype=np.float64)


def render_scene(rng: np.random.Generator, size: tuple[int, int],
                 n_classes: int) -> SceneArrays:
    h, w = size
    s = SCENE_WIDTH_M / w  # meters per pixel
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))

    # ground plane: near at the bottom row, far at the top
    depth = Z_NEAR + (Z_FAR - Z_NEAR) * (1.0 - vv / (h - 1))
    zy = -(Z_FAR - Z_NEAR) / (h - 1) / s  # dz/dy in m/m
    ground_n = _normalize(np.array([0.0, zy, -1.0]))
    normals = np.broadcast_to(ground_n, (h, w, 3)).copy()
    labels = np.zeros((h, w), dtype=np.int64)
    albedo_idx = np.zeros((h, w), dtype=np.int64)
    jitter = np.zeros((h, w), dtype=np.float64)

    n_objects = int(rng.integers(3, 7))
    for _ in range(n_objects):
        kind = rng.choice(["plate", "ramp", "sphere"])
        cls = int(rng.integers(1, n_classes))
        z0 = float(rng.uniform(Z_NEAR + 0.4, Z_FAR - 0.8))
        # apparent radius shrinks with distance; clamp to the canvas
        r = float(np.clip(0.55 / z0 / s * rng.uniform(0.7, 1.3), 4, min(h, w) // 3))
        # objects rest where the ground reaches their depth, with jitter
        v_ground = (h - 1) * (1.0 - (z0 - Z_NEAR) / (Z_FAR - Z_NEAR))
        u0 = float(rng.uniform(r, w - 1 - r))
        v0 = float(np.clip(v_ground - 0.6 * r + rng.uniform(-0.15, 0.15) * h, r, h - 1 - r))

        du, dv = (uu - u0), (vv - v0)
        if kind == "sphere":
            radius_m = r * s
            d2 = (du * s) ** 2 + (dv * s) ** 2
            inside = d2 <= radius_m**2 * 0.98  # trim the grazing silhouette rim
            bulge = np.sqrt(np.maximum(radius_m**2 - d2, 0.0))
            obj_depth = z0 - bulge
            obj_normals = np.stack([du * s, dv * s, -bulge], axis=-1) / radius_m
        else:
            inside = (np.abs(du) <= r) & (np.abs(dv) <= r * rng.uniform(0.6, 1.0))
            if kind == "plate":
                gx, gy = 0.0, 0.0
            else:
                gx = float(rng.uniform(-0.7, 0.7))
                gy = float(rng.uniform(-0.7, 0.7))
            obj_depth = z0 + gx * du * s + gy * dv * s
            obj_normals = np.broadcast_to(
                _normalize(np.array([gx, gy, -1.0])), (h, w, 3))

        closer = inside & (obj_depth < depth)
        depth = np.where(closer, obj_depth, depth)
        normals = np.where(closer[..., None], obj_normals, normals)
        labels = np.where(closer, cls, labels)
        albedo_idx = np.where(closer, 0, albedo_idx)
        jitter = np.where(closer, float(rng.uniform(-0.08, 0.08)), jitter)

    # ground checker texture (albedo only, never class)
    checker = (((uu // 8).astype(int) + (vv // 8).astype(int)) % 2)
    albedo_idx = np.where(labels == 0, checker + 1, albedo_idx)
    albedo_scale = np.choose(albedo_idx, [1.0, 0.92, 1.08])

    palette = _class_palette(n_classes)
    base = palette[labels] * (albedo_scale + jitter)[..., None]
    lambert = np.clip((normals * LIGHT_DIR).sum(axis=-1), 0.0, None)
    shade = 0.35 + 0.65 * lambert
    fog = np.exp(-FOG_DENSITY * depth)
    rgb = base * shade[..., None] * fog[..., None] + HAZE * (1.0 - fog[..., None])
    rgb += rng.normal(0.0, 0.008, size=rgb.shape)  # sensor-ish grain
    rgb = np.clip(rgb, 0.0, 1.0)

    return SceneArrays(rgb=rgb, labels=labels,
                       depth=depth.astype(np.float32),
                       normals=normals.astype(np.float32))


def synth_dataset(out_dir: str | Path, seed: int, n_images: int,
                  size: tuple[int, int] = (96, 96), n_classes: int = 5,
                  split: str = "finetune_small") -> DatasetManifest:
    """Render ``n_images`` scenes to disk and return their manifest.

    Layout matches the directory-pairing convention (images/segm/depth/
    normals); depth is stored as 16-bit millimeter PNG. Identical arguments
    produce bit-identical trees.
    """
    if n_classes < 2:
        raise ConfigError("n_classes must be >= 2")
    if n_images < 0:
        raise ConfigError("n_images must be >= 0")
    out = Path(out_dir)
    manifest = DatasetManifest(
        split=split,
        label_spaces={"synth": LabelSpace(
            num_classes=n_classes,
            class_names=["ground"] + [f"object_{c}" for c in range(1, n_classes)])},
    )
    for idx in range(n_images):
        rng = np.random.Generator(np.random.PCG64(seed * 1_000_003 + idx))
        scene = render_scene(rng, size, n_classes)
        name = f"{idx:05d}"
        img = out / "images" / f"{name}.png"
        seg = out / "segm" / f"{name}.png"
        dep = out / "depth" / f"{name}.png"
        nrm = out / "normals" / f"{name}.npy"
        write_image(img, scene.rgb)
        write_mask(seg, scene.labels)
        write_depth(dep, scene.depth)
        write_normals(nrm, scene.normals)
        manifest.samples.append(Sample(
            image_path=str(img), dataset_id="synth",
            annotations={
                "segmentation": Annotation(path=str(seg)),
                "depth": Annotation(path=str(dep)),
                "normals": Annotation(path=str(nrm)),
            }))
    meta = {"num_classes": n_classes,
            "class_names": manifest.label_spaces["synth"].class_names}
    atomic_write(out / "label_space.json",
                 lambda tmp: Path(tmp).write_text(json.dumps(meta, indent=1)))
    manifest.save(out / "manifest.json")
    return manifest

from .expert import ExpertReport, expert_label
from .formats import (
    IGNORE_INDEX,
    atomic_write,
    read_depth,
    read_image,
    read_mask,
    read_normals,
    write_depth,
    write_image,
    write_mask,
    write_normals,
)
from .manifest import (
    GROUND_TRUTH,
    MODALITIES,
    PSEUDO_LABEL,
    Annotation,
    DatasetManifest,
    LabelSpace,
    Sample,
    concat_manifests,
    load_manifest,
    partition,
    remap_labels,
)
from .synth import SceneArrays, render_scene, synth_dataset
from .teachers import ConstantTeacher, ModelTeacher, OracleTeacher

__all__ = [
    "ExpertReport", "expert_label",
    "IGNORE_INDEX", "atomic_write", "read_depth", "read_image", "read_mask",
    "read_normals", "write_depth", "write_image", "write_mask", "write_normals",
    "GROUND_TRUTH", "MODALITIES", "PSEUDO_LABEL", "Annotation", "DatasetManifest",
    "LabelSpace", "Sample", "concat_manifests", "load_manifest", "partition",
    "remap_labels",
    "SceneArrays", "render_scene", "synth_dataset",
    "ConstantTeacher", "ModelTeacher", "OracleTeacher",
]

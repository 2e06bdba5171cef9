"""Expert labeling: fill missing modalities with a teacher's hard predictions.

Each labeled sample gets one stored artifact (argmax class map for
segmentation, millimeter depth map for depth), written atomically. Samples
the teacher fails on are skipped and listed in the rejects report. Ground
truth is never replaced. Re-running with a deterministic teacher rewrites
identical bytes.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import MTDenseError
from .formats import read_image, write_depth, write_mask
from .manifest import PSEUDO_LABEL, Annotation, Sample


@dataclass
class ExpertReport:
    samples: list[Sample] = field(default_factory=list)   # input order, rejects dropped
    labeled: list[Sample] = field(default_factory=list)
    unchanged: list[Sample] = field(default_factory=list)
    rejects: list[tuple[Sample, str]] = field(default_factory=list)


def _artifact_name(sample: Sample, modality: str, teacher_id: str) -> str:
    stem = Path(sample.image_path).stem
    tag = zlib.crc32(sample.image_path.encode("utf-8")) & 0xFFFFFFFF
    safe_teacher = teacher_id.replace("/", "_")
    return f"{stem}_{tag:08x}_{modality}_{safe_teacher}.png"


def _label_one(sample: Sample, teacher, output_dir: Path) -> Sample:
    image = read_image(sample.image_path)
    pred = teacher.predict(sample, image)
    out_path = output_dir / _artifact_name(sample, teacher.modality, teacher.teacher_id)
    if teacher.modality == "segmentation":
        write_mask(out_path, pred)
    else:
        write_depth(out_path, pred)
    annotations = dict(sample.annotations)
    annotations[teacher.modality] = Annotation(
        path=str(out_path), kind=PSEUDO_LABEL, teacher_id=teacher.teacher_id)
    return Sample(image_path=sample.image_path, annotations=annotations,
                  dataset_id=sample.dataset_id)


def expert_label(samples: list[Sample], teacher, output_dir: str | Path,
                 workers: int = 1) -> ExpertReport:
    """Run the teacher over every sample missing its modality.

    Samples that already carry ground truth for the modality pass through
    untouched. File writes are atomic per sample; with ``workers`` > 1 images
    are processed concurrently and the report is assembled serially at the
    end, in input order.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    report = ExpertReport()

    def run(sample: Sample):
        existing = sample.annotations.get(teacher.modality)
        if existing is not None and existing.kind == "ground_truth":
            return sample, "unchanged"
        try:
            return _label_one(sample, teacher, output_dir), "labeled"
        except (MTDenseError, OSError) as exc:
            return sample, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, samples))
    else:
        results = [run(s) for s in samples]

    for sample, status in results:
        if status == "unchanged":
            report.unchanged.append(sample)
            report.samples.append(sample)
        elif status == "labeled":
            report.labeled.append(sample)
            report.samples.append(sample)
        else:
            report.rejects.append((sample, status))
    return report

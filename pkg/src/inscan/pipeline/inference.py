"""Detect once, suppress, crop, classify each crop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from inscan.dataset_io import condition_from_flags
from inscan.geometry import BoundingBox, Detection, ImageGrid, check_grid
from inscan.pipeline.backends import ClassifierBackend, DetectorBackend
from inscan.pipeline.nms import nms

log = logging.getLogger(__name__)

DEFAULT_NMS_IOU = 0.5
DEFAULT_CONF = 0.25
DEFAULT_PAD = 0.05


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class Patch:
    index: int  # position of the source box in the input list
    window: tuple[int, int, int, int]  # integer crop (x0, y0, x1, y1)
    pixels: ImageGrid


def crop_window(box: BoundingBox, width: int, height: int, pad_frac: float) -> tuple[int, int, int, int] | None:
    """Padded, clipped, outward-rounded crop window; None when nothing is left."""
    if pad_frac < 0:
        raise ValueError(f"pad_frac must be >= 0, got {pad_frac}")
    grown = box.dilate(pad_frac * box.width, pad_frac * box.height).clip(width, height)
    x0, y0 = math.floor(grown.x_min), math.floor(grown.y_min)
    x1, y1 = math.ceil(grown.x_max), math.ceil(grown.y_max)
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1, y1


def extract_patches(image: ImageGrid, boxes: Sequence[BoundingBox], pad_frac: float = DEFAULT_PAD) -> list[Patch]:
    """Crop one patch per box, in input order; boxes missing the image are skipped with a warning."""
    image = check_grid(image)
    h, w = image.shape
    patches = []
    for i, box in enumerate(boxes):
        win = crop_window(box, w, h, pad_frac)
        if win is None:
            log.warning("box %d %s does not intersect the %dx%d image; skipped", i, box.as_tuple(), w, h)
            continue
        x0, y0, x1, y1 = win
        patches.append(Patch(i, win, image[y0:y1, x0:x1].copy()))
    return patches


@dataclass(frozen=True)
class RegionResult:
    box: BoundingBox
    status: str
    det_conf: float
    cls_conf: float

    def to_dict(self) -> dict:
        return {"box": self.box.to_dict(), "status": self.status, "det_conf": self.det_conf, "cls_conf": self.cls_conf}

    @classmethod
    def from_dict(cls, d: dict) -> RegionResult:
        return cls(BoundingBox.from_dict(d["box"]), d["status"], float(d["det_conf"]), float(d["cls_conf"]))


@dataclass
class InsulationReport:
    image_id: str
    width: int
    height: int
    regions: list[RegionResult] = field(default_factory=list)

    @property
    def condition(self) -> str | None:
        return condition_from_flags([r.status == "present" for r in self.regions])

    def detections(self) -> list[Detection]:
        return [Detection(r.box, r.det_conf) for r in self.regions]

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "condition": self.condition,
            "regions": [r.to_dict() for r in self.regions],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> InsulationReport:
        return cls(d["image_id"], int(d["width"]), int(d["height"]), [RegionResult.from_dict(r) for r in d["regions"]])


def run_two_phase(
    image: ImageGrid,
    det: DetectorBackend,
    cls: ClassifierBackend,
    nms_thr: float = DEFAULT_NMS_IOU,
    conf_thr: float = DEFAULT_CONF,
    pad_frac: float = DEFAULT_PAD,
    image_id: str = "image",
) -> InsulationReport:
    """Full inference for one image.

    Confidence filtering happens before NMS, so a low-confidence box can never
    suppress a kept one. The detector runs exactly once; the classifier only
    ever sees crops.
    """
    for name, thr in (("nms_thr", nms_thr), ("conf_thr", conf_thr)):
        if not (0.0 < thr <= 1.0):
            raise ValueError(f"{name} must be in (0, 1], got {thr}")
    image = check_grid(image)
    h, w = image.shape
    try:
        raw = det.detect(image)
    except Exception as exc:
        raise PipelineError(f"{image_id}: detector {getattr(det, 'name', det)!r} failed: {exc}") from exc
    kept = nms([d for d in raw if d.confidence >= conf_thr], nms_thr)
    report = InsulationReport(image_id, w, h)
    for patch in extract_patches(image, [d.box for d in kept], pad_frac):
        try:
            label, conf = cls.classify(patch.pixels)
        except Exception as exc:
            raise PipelineError(f"{image_id}: classifier {getattr(cls, 'name', cls)!r} failed: {exc}") from exc
        d = kept[patch.index]
        report.regions.append(RegionResult(d.box, label, d.confidence, float(conf)))
    return report

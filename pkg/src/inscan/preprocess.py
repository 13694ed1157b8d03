"""Focused cropping and lossless augmentation with exact annotation remapping."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np

from inscan.dataset_io import AnnotatedImage, Lineage, PatchSample, condition_from_flags
from inscan.geometry import BoundingBox, ImageGrid, NormalizedBox, check_grid, to_normalized

AugmentKind = Literal["flip_vertical", "rotate_cw90", "rotate_ccw90", "contrast"]

# Boxes keeping less than this fraction of their area after cropping are dropped.
MIN_RETAINED_AREA = 0.25


@dataclass(frozen=True)
class CropSpec:
    left_frac: float = 0.05
    right_frac: float = 0.85
    top_frac: float = 0.10
    bottom_frac: float = 0.95

    def __post_init__(self):
        if not (0 <= self.left_frac < self.right_frac <= 1):
            raise ValueError(f"need 0 <= left < right <= 1, got {self.left_frac}, {self.right_frac}")
        if not (0 <= self.top_frac < self.bottom_frac <= 1):
            raise ValueError(f"need 0 <= top < bottom <= 1, got {self.top_frac}, {self.bottom_frac}")

    def window(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer crop window (x0, y0, out_w, out_h) for an image of the given size."""
        out_w = round((self.right_frac - self.left_frac) * width)
        out_h = round((self.bottom_frac - self.top_frac) * height)
        if out_w < 1 or out_h < 1:
            raise ValueError(f"crop window {out_w}x{out_h} is smaller than one pixel")
        x0 = min(round(self.left_frac * width), width - out_w)
        y0 = min(round(self.top_frac * height), height - out_h)
        return x0, y0, out_w, out_h


@dataclass(frozen=True)
class AugmentOp:
    kind: AugmentKind
    contrast_factor: float = 1.0

    def __post_init__(self):
        if self.kind not in ("flip_vertical", "rotate_cw90", "rotate_ccw90", "contrast"):
            raise ValueError(f"unknown augmentation {self.kind!r}")
        if self.kind == "contrast" and not (0.5 <= self.contrast_factor <= 2.0):
            raise ValueError(f"contrast factor {self.contrast_factor} outside [0.5, 2.0]")

    @property
    def name(self) -> str:
        if self.kind == "contrast":
            return f"contrast{self.contrast_factor:g}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> AugmentOp:
        """Accept ``flip_vertical``, ``rotate_cw90``, ``rotate_ccw90`` or ``contrast<factor>``."""
        if text.startswith("contrast"):
            return cls("contrast", float(text[len("contrast"):].lstrip(":=") or 1.0))
        return cls(text)  # type: ignore[arg-type]


DETECTION_OPS = (AugmentOp("flip_vertical"), AugmentOp("rotate_cw90"), AugmentOp("rotate_ccw90"))
CLASSIFICATION_OPS = DETECTION_OPS + (AugmentOp("contrast", 0.8), AugmentOp("contrast", 1.2))


def _derive(img: AnnotatedImage, transform: str, image: ImageGrid, boxes: list[NormalizedBox]) -> AnnotatedImage:
    return AnnotatedImage(
        image_id=f"{img.image_id}__{transform}",
        image=image,
        boxes=boxes,
        condition=img.condition,
        lineage=Lineage(img.image_id, transform),
        region_flags=None if img.region_flags is None else list(img.region_flags),
    )


def focused_crop(img: AnnotatedImage, spec: CropSpec = CropSpec(), min_retained: float = MIN_RETAINED_AREA) -> AnnotatedImage:
    """Cut fixed fractional margins and remap boxes into the cropped frame.

    The image id and lineage are kept: cropping defines the base image every
    augmentation starts from. Boxes are clipped to the window; those with an
    empty intersection or keeping less than ``min_retained`` of their original
    area are dropped.
    """
    x0, y0, out_w, out_h = spec.window(img.width, img.height)
    pixels = img.image[y0 : y0 + out_h, x0 : x0 + out_w].copy()
    boxes: list[NormalizedBox] = []
    flags: list[bool] = []
    for i, (nb, pb) in enumerate(zip(img.boxes, img.pixel_boxes())):
        moved = BoundingBox(pb.x_min - x0, pb.y_min - y0, pb.x_max - x0, pb.y_max - y0)
        clipped = moved.clip(out_w, out_h)
        if clipped.width <= 0 or clipped.height <= 0:
            continue
        if pb.area() > 0 and clipped.area() < min_retained * pb.area():
            continue
        boxes.append(to_normalized(clipped, out_w, out_h, nb.class_id))
        if img.region_flags is not None:
            flags.append(img.region_flags[i])
    region_flags = flags if img.region_flags is not None else None
    condition = condition_from_flags(flags) if region_flags is not None else (img.condition if boxes else None)
    return AnnotatedImage(img.image_id, pixels, boxes, condition, img.lineage, region_flags)


def uncrop_box(box: BoundingBox, spec: CropSpec, width: int, height: int) -> BoundingBox:
    """Map a box in the cropped frame back to the original image frame."""
    x0, y0, _, _ = spec.window(width, height)
    return BoundingBox(box.x_min + x0, box.y_min + y0, box.x_max + x0, box.y_max + y0)


def flip_vertical(img: AnnotatedImage) -> AnnotatedImage:
    boxes = [NormalizedBox(b.class_id, b.cx, 1.0 - b.cy, b.w, b.h) for b in img.boxes]
    return _derive(img, "flip_vertical", img.image[::-1, :].copy(), boxes)


def rotate90(img: AnnotatedImage, direction: Literal["cw", "ccw"]) -> AnnotatedImage:
    """Quarter-turn rotation; dimensions swap and boxes follow exactly."""
    if direction == "cw":
        pixels = np.rot90(img.image, k=-1).copy()
        boxes = [NormalizedBox(b.class_id, 1.0 - b.cy, b.cx, b.h, b.w) for b in img.boxes]
    elif direction == "ccw":
        pixels = np.rot90(img.image, k=1).copy()
        boxes = [NormalizedBox(b.class_id, b.cy, 1.0 - b.cx, b.h, b.w) for b in img.boxes]
    else:
        raise ValueError(f"direction must be 'cw' or 'ccw', got {direction!r}")
    return _derive(img, f"rotate_{direction}90", pixels, boxes)


def adjust_contrast(img: ImageGrid, factor: float) -> ImageGrid:
    """Linear contrast about mid-gray 128, rounded half-up and clamped to 8 bits."""
    if not (0.5 <= factor <= 2.0):
        raise ValueError(f"contrast factor {factor} outside [0.5, 2.0]")
    arr = check_grid(img).astype(np.float64)
    out = np.floor(128.0 + factor * (arr - 128.0) + 0.5)
    return np.clip(out, 0, 255).astype(np.uint8)


def _apply_raster(op: AugmentOp, pixels: ImageGrid) -> ImageGrid:
    if op.kind == "flip_vertical":
        return pixels[::-1, :].copy()
    if op.kind == "rotate_cw90":
        return np.rot90(pixels, k=-1).copy()
    if op.kind == "rotate_ccw90":
        return np.rot90(pixels, k=1).copy()
    return adjust_contrast(pixels, op.contrast_factor)


def apply_op(op: AugmentOp, img: AnnotatedImage) -> AnnotatedImage:
    if op.kind == "flip_vertical":
        return flip_vertical(img)
    if op.kind == "rotate_cw90":
        return rotate90(img, "cw")
    if op.kind == "rotate_ccw90":
        return rotate90(img, "ccw")
    return _derive(img, op.name, adjust_contrast(img.image, op.contrast_factor), list(img.boxes))


def augment_detection_set(
    images: Sequence[AnnotatedImage], ops: Sequence[AugmentOp] = DETECTION_OPS
) -> list[AnnotatedImage]:
    """Originals plus one derived image per (image, op), ordered by id then op."""
    out: list[AnnotatedImage] = []
    for img in sorted(images, key=lambda im: im.image_id):
        out.append(img)
        out.extend(apply_op(op, img) for op in ops)
    seen: set[str] = set()
    for im in out:
        if im.image_id in seen:
            raise ValueError(f"duplicate image id after augmentation: {im.image_id}")
        seen.add(im.image_id)
    return out


def augment_patches(patches: Sequence[PatchSample], ops: Sequence[AugmentOp] = CLASSIFICATION_OPS) -> list[PatchSample]:
    """Classification-side augmentation; labels and provenance carry over."""
    out: list[PatchSample] = []
    for p in sorted(patches, key=lambda s: s.patch_id):
        out.append(p)
        for op in ops:
            out.append(
                replace(
                    p,
                    patch_id=f"{p.patch_id}__{op.name}",
                    patch=_apply_raster(op, p.patch),
                    lineage=Lineage(p.patch_id, op.name),
                )
            )
    if len({p.patch_id for p in out}) != len(out):
        raise ValueError("duplicate patch id after augmentation")
    return out

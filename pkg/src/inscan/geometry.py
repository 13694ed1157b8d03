"""Box types, coordinate conversion and IoU shared by every stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-6

# 8-bit luminance raster, shape (height, width).
ImageGrid = np.ndarray


class OutOfBoundsError(ValueError):
    """A pixel box does not lie inside the image it is converted against."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates (origin top-left)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def dilate(self, dx: float, dy: float | None = None) -> BoundingBox:
        dy = dx if dy is None else dy
        return BoundingBox(self.x_min - dx, self.y_min - dy, self.x_max + dx, self.y_max + dy)

    def clip(self, width: float, height: float) -> BoundingBox:
        x0 = min(max(self.x_min, 0.0), width)
        y0 = min(max(self.y_min, 0.0), height)
        x1 = min(max(self.x_max, 0.0), width)
        y1 = min(max(self.y_max, 0.0), height)
        return BoundingBox(x0, y0, x1, y1)

    def intersection(self, other: BoundingBox) -> float:
        w = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        h = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        if w <= 0 or h <= 0:
            return 0.0
        return w * h

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "y_min": self.y_min, "x_max": self.x_max, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, d: dict) -> BoundingBox:
        return cls(float(d["x_min"]), float(d["y_min"]), float(d["x_max"]), float(d["y_max"]))


@dataclass(frozen=True)
class NormalizedBox:
    """YOLO-style box: center and size as fractions of the image dimensions."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not (-EPS <= v <= 1 + EPS):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.cx - self.w / 2 < -EPS or self.cx + self.w / 2 > 1 + EPS:
            raise ValueError(f"box spills horizontally: cx={self.cx}, w={self.w}")
        if self.cy - self.h / 2 < -EPS or self.cy + self.h / 2 > 1 + EPS:
            raise ValueError(f"box spills vertically: cy={self.cy}, h={self.h}")

    def as_tuple(self) -> tuple[int, float, float, float, float]:
        return (self.class_id, self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    """A predicted box with its confidence."""

    box: BoundingBox
    confidence: float
    class_id: int = 0

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 when the union is empty."""
    inter = a.intersection(b)
    union = a.area() + b.area() - inter
    if union <= 0:
        return 0.0
    return inter / union


def to_pixels(n: NormalizedBox, width: int, height: int) -> BoundingBox:
    """Convert a normalized box to pixel coordinates, clipped to the image."""
    box = BoundingBox(
        (n.cx - n.w / 2) * width,
        (n.cy - n.h / 2) * height,
        (n.cx + n.w / 2) * width,
        (n.cy + n.h / 2) * height,
    )
    return box.clip(width, height)


def to_normalized(b: BoundingBox, width: int, height: int, class_id: int = 0) -> NormalizedBox:
    """Convert a pixel box to normalized center/size form.

    Raises OutOfBoundsError if the box leaves the image by more than a
    rounding-level tolerance.
    """
    tol_x, tol_y = EPS * width, EPS * height
    if b.x_min < -tol_x or b.y_min < -tol_y or b.x_max > width + tol_x or b.y_max > height + tol_y:
        raise OutOfBoundsError(f"box {b.as_tuple()} outside {width}x{height} image")
    return NormalizedBox(
        class_id,
        (b.x_min + b.x_max) / 2 / width,
        (b.y_min + b.y_max) / 2 / height,
        (b.x_max - b.x_min) / width,
        (b.y_max - b.y_min) / height,
    )


def check_grid(img: ImageGrid) -> ImageGrid:
    """Validate an image raster and return it as a 2-D uint8 array."""
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D luminance raster, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("pixel values outside [0, 255]")
        arr = arr.astype(np.uint8)
    return arr

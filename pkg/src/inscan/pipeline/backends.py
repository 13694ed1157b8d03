"""Detector/classifier backend interfaces and the stroke-width baselines.

The baselines read line thickness directly: the skeleton of the ink mask is
weighted by twice the Euclidean distance transform, which for an
axis-aligned stroke of integer width ``t`` measures ``t`` (even) or ``t + 1``
(odd). Thickness bands are therefore compared in that measured domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage as ndi
from skimage.morphology import skeletonize

from inscan.geometry import BoundingBox, Detection, ImageGrid, check_grid
from inscan.synthgen import SynthSpec

INK_THRESHOLD = 128
_EIGHT = np.ones((3, 3), dtype=bool)


class DetectorBackend(Protocol):
    name: str

    def detect(self, image: ImageGrid) -> list[Detection]: ...


class ClassifierBackend(Protocol):
    name: str

    def classify(self, patch: ImageGrid) -> tuple[str, float]: ...


def measured_width(t: int) -> int:
    return t + t % 2


@dataclass(frozen=True)
class ThicknessBands:
    """Cut points separating primary, auxiliary and structure strokes."""

    primary_aux_cut: float
    aux_structure_cut: float
    structure_max_px: int

    @classmethod
    def from_spec(cls, spec: SynthSpec) -> ThicknessBands:
        p_lo, p_hi = spec.px_range("primary")
        a_lo, a_hi = spec.px_range("auxiliary")
        s_lo, s_hi = spec.px_range("structure")
        p_max = max(measured_width(t) for t in range(p_lo, p_hi + 1))
        a_min = min(measured_width(t) for t in range(a_lo, a_hi + 1))
        a_max = max(measured_width(t) for t in range(a_lo, a_hi + 1))
        s_min = min(measured_width(t) for t in range(s_lo, s_hi + 1))
        if not (p_max < a_min and a_max < s_min):
            raise ValueError(
                f"thickness bands overlap at {spec.dpi:g} dpi: primary {p_lo}-{p_hi}px, "
                f"auxiliary {a_lo}-{a_hi}px, structure {s_lo}-{s_hi}px"
            )
        return cls((p_max + a_min) / 2, (a_max + s_min) / 2, s_hi)

    def is_primary(self, widths: np.ndarray) -> np.ndarray:
        return (widths > 0) & (widths < self.primary_aux_cut)

    def is_auxiliary(self, widths: np.ndarray) -> np.ndarray:
        return (widths >= self.primary_aux_cut) & (widths < self.aux_structure_cut)


def skeleton_widths(image: ImageGrid) -> tuple[np.ndarray, np.ndarray]:
    """Skeleton mask of the ink and the stroke width measured at each skeleton pixel.

    A one-pixel blank border is added first so strokes cut by the image edge
    are measured like strokes that end there.
    """
    ink = np.pad(check_grid(image) < INK_THRESHOLD, 1, constant_values=False)
    skel = skeletonize(ink)
    widths = np.zeros(ink.shape, dtype=np.float64)
    if skel.any():
        widths[skel] = 2.0 * ndi.distance_transform_edt(ink)[skel]
    return skel[1:-1, 1:-1], widths[1:-1, 1:-1]


class BaselineDetector:
    """Finds primary-insulation strokes by thickness and boxes them."""

    name = "baseline"

    def __init__(self, bands: ThicknessBands | None = None, min_pixels: int = 30, size_scale: float = 50.0):
        self.bands = bands or ThicknessBands.from_spec(SynthSpec())
        self.min_pixels = min_pixels
        self.size_scale = size_scale

    def detect(self, image: ImageGrid) -> list[Detection]:
        image = check_grid(image)
        h, w = image.shape
        skel, widths = skeleton_widths(image)
        mask = skel & self.bands.is_primary(widths)
        labels, n = ndi.label(mask, structure=_EIGHT)
        if n == 0:
            return []
        counts = np.bincount(labels.ravel(), minlength=n + 1)
        pad = 3 * self.bands.structure_max_px
        dets = []
        for k, sl in enumerate(ndi.find_objects(labels), start=1):
            count = int(counts[k])
            if sl is None or count < self.min_pixels:
                continue
            ys, xs = sl
            box = BoundingBox(xs.start, ys.start, xs.stop, ys.stop).dilate(pad).clip(w, h)
            dets.append(Detection(box, count / (count + self.size_scale)))
        dets.sort(key=lambda d: (-d.confidence, d.box.x_min, d.box.y_min))
        return dets


class BaselineClassifier:
    """Calls a patch ``present`` when it holds enough auxiliary-width skeleton."""

    name = "baseline"

    def __init__(self, bands: ThicknessBands | None = None, min_count: int = 10):
        self.bands = bands or ThicknessBands.from_spec(SynthSpec())
        self.min_count = min_count

    def aux_count(self, patch: ImageGrid) -> int:
        skel, widths = skeleton_widths(patch)
        return int(np.count_nonzero(skel & self.bands.is_auxiliary(widths)))

    def classify(self, patch: ImageGrid) -> tuple[str, float]:
        count = self.aux_count(patch)
        k = self.min_count
        if count >= k:
            return "present", count / (count + k)
        return "missing", k / (count + k)


class StaticDetector:
    """Replays a fixed detection list, e.g. predictions produced by an external model."""

    name = "external"

    def __init__(self, dets: Sequence[Detection]):
        self._dets = list(dets)

    def detect(self, image: ImageGrid) -> list[Detection]:
        return list(self._dets)


def baseline_detect(image: ImageGrid) -> list[Detection]:
    return BaselineDetector().detect(image)


def baseline_classify(patch: ImageGrid) -> tuple[str, float]:
    return BaselineClassifier().classify(patch)

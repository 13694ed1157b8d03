"""Greedy non-maximum suppression."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from inscan.geometry import Detection


def priority_order(dets: Sequence[Detection]) -> list[int]:
    """Indices by descending confidence; ties go to smaller x_min, then y_min."""
    return sorted(
        range(len(dets)),
        key=lambda i: (-dets[i].confidence, dets[i].box.x_min, dets[i].box.y_min, dets[i].box.x_max, dets[i].box.y_max, i),
    )


def nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    """Keep the best remaining detection, drop everything overlapping it by more than the threshold, repeat.

    The result is ordered by descending confidence and is never a superset of
    the input; confidences are passed through untouched.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if not dets:
        return []
    boxes = np.array([d.box.as_tuple() for d in dets], dtype=np.float64)
    x0, y0, x1, y1 = boxes.T
    areas = (x1 - x0) * (y1 - y0)
    order = np.array(priority_order(dets), dtype=np.int64)
    keep: list[int] = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        w = np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest])
        h = np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest])
        inter = np.where((w > 0) & (h > 0), w * h, 0.0)
        union = areas[i] + areas[rest] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            ious = np.where(union > 0, inter / union, 0.0)
        order = rest[ious <= iou_threshold]
    return [dets[i] for i in keep]

"""Slow, plainly written reference implementations used to check the vectorized code.

Boxes are (x_min, y_min, x_max, y_max) tuples; nothing here imports numpy.
"""

from __future__ import annotations


def box_area(b):
    return (b[2] - b[0]) * (b[3] - b[1])


def box_iou(a, b):
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    inter = w * h if (w > 0 and h > 0) else 0.0
    union = box_area(a) + box_area(b) - inter
    return inter / union if union > 0 else 0.0


def priority(boxes, confs):
    return sorted(range(len(boxes)), key=lambda i: (-confs[i], boxes[i][0], boxes[i][1], boxes[i][2], boxes[i][3], i))


def brute_nms(boxes, confs, thr):
    """Indices kept: a box survives iff no surviving box ahead of it overlaps it by more than thr."""
    order = priority(boxes, confs)
    kept = []
    for i in order:
        if all(box_iou(boxes[i], boxes[k]) <= thr for k in kept):
            kept.append(i)
    return kept


def brute_match(pred_boxes, confs, gt_boxes, thr):
    """For each prediction (input order) the gt it claims, or None.

    Walks predictions in priority order; each scans every gt, skipping
    taken ones, and claims the first with the largest IoU if that IoU reaches thr.
    """
    taken = [False] * len(gt_boxes)
    out = [None] * len(pred_boxes)
    for i in priority(pred_boxes, confs):
        best, best_iou = None, -1.0
        for j, g in enumerate(gt_boxes):
            if taken[j]:
                continue
            v = box_iou(pred_boxes[i], g)
            if v > best_iou:
                best, best_iou = j, v
        if best is not None and best_iou >= thr:
            out[i] = best
            taken[best] = True
    return out


def brute_ap(tp_flags_sorted, n_gts):
    """All-points AP from TP flags already in sweep order: sum of recall steps times the best precision at or beyond them."""
    n = len(tp_flags_sorted)
    prec, rec = [], []
    tp = 0
    for k in range(n):
        tp += 1 if tp_flags_sorted[k] else 0
        prec.append(tp / (k + 1))
        rec.append(tp / n_gts)
    ap = 0.0
    prev_r = 0.0
    for k in range(n):
        best = max(prec[k:])
        ap += (rec[k] - prev_r) * best
        prev_r = rec[k]
    return ap

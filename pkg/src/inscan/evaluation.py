"""Detection and classification metrics computed from first principles."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from inscan.dataset_io import LABELS
from inscan.geometry import BoundingBox, Detection, iou
from inscan.pipeline.nms import priority_order

APMethod = Literal["all_points", "interp_101"]

DEFAULT_MATCH_IOU = 0.5
DEFAULT_CONF_GRID = tuple(round(0.01 * i, 2) for i in range(101))


@dataclass
class MatchResult:
    """Greedy one-to-one matching of predictions to ground truth.

    ``matched[i]`` is the ground-truth index taken by prediction ``i`` (input
    order), or None for a false positive.
    """

    matched: list[int | None]
    n_gts: int
    order: list[int] = field(default_factory=list)

    @property
    def is_tp(self) -> list[bool]:
        return [m is not None for m in self.matched]

    @property
    def tp(self) -> int:
        return sum(m is not None for m in self.matched)

    @property
    def fp(self) -> int:
        return len(self.matched) - self.tp

    @property
    def fn(self) -> int:
        return self.n_gts - self.tp


def _check_iou_thr(iou_thr: float) -> None:
    if not (0.0 < iou_thr <= 1.0):
        raise ValueError(f"iou_thr must be in (0, 1], got {iou_thr}")


def match_detections(preds: Sequence[Detection], gts: Sequence[BoundingBox], iou_thr: float = DEFAULT_MATCH_IOU) -> MatchResult:
    """Walk predictions by descending confidence; each claims the best still-free ground truth if it overlaps enough."""
    _check_iou_thr(iou_thr)
    order = priority_order(preds)
    matched: list[int | None] = [None] * len(preds)
    if gts and preds:
        ious = np.array([[iou(p.box, g) for g in gts] for p in preds], dtype=np.float64)
        free = np.ones(len(gts), dtype=bool)
        for i in order:
            if not free.any():
                break
            row = np.where(free, ious[i], -1.0)
            j = int(np.argmax(row))
            if row[j] >= iou_thr:
                matched[i] = j
                free[j] = False
    return MatchResult(matched, len(gts), order)


@dataclass
class PRCurve:
    """Precision/recall after each prediction in the confidence sweep."""

    recall: list[float]
    precision: list[float]
    confidence: list[float]
    n_gts: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall, self.precision))

    @property
    def ap(self) -> float:
        return average_precision(self)


class DetectionSet:
    """Predictions and ground truth for many images, matched per image and swept globally."""

    def __init__(self, iou_thr: float = DEFAULT_MATCH_IOU):
        _check_iou_thr(iou_thr)
        self.iou_thr = iou_thr
        self._conf: list[float] = []
        self._tp: list[bool] = []
        self._keys: list[tuple] = []
        self.n_gts = 0
        self._n_images = 0

    def add(self, preds: Sequence[Detection], gts: Sequence[BoundingBox]) -> MatchResult:
        m = match_detections(preds, gts, self.iou_thr)
        for rank, i in enumerate(m.order):
            d = preds[i]
            self._conf.append(d.confidence)
            self._tp.append(m.matched[i] is not None)
            self._keys.append((-d.confidence, d.box.x_min, d.box.y_min, self._n_images, rank))
        self.n_gts += len(gts)
        self._n_images += 1
        return m

    def _sorted(self) -> tuple[np.ndarray, np.ndarray]:
        idx = sorted(range(len(self._keys)), key=self._keys.__getitem__)
        conf = np.array([self._conf[i] for i in idx], dtype=np.float64)
        tp = np.array([self._tp[i] for i in idx], dtype=bool)
        return conf, tp

    def pr_curve(self) -> PRCurve:
        if self.n_gts == 0:
            raise ValueError("no ground-truth boxes: recall is undefined")
        conf, tp = self._sorted()
        ctp = np.cumsum(tp)
        cfp = np.cumsum(~tp)
        recall = ctp / self.n_gts
        precision = ctp / np.maximum(ctp + cfp, 1)
        return PRCurve(recall.tolist(), precision.tolist(), conf.tolist(), self.n_gts)

    def counts_at(self, conf_thr: float) -> tuple[int, int, int]:
        """(TP, FP, FN) over predictions with confidence >= conf_thr."""
        conf, tp = self._sorted()
        keep = conf >= conf_thr
        n_tp = int(np.count_nonzero(tp & keep))
        n_fp = int(np.count_nonzero(~tp & keep))
        return n_tp, n_fp, self.n_gts - n_tp

    def f1_curve(self, conf_grid: Sequence[float] = DEFAULT_CONF_GRID) -> F1Curve:
        if self.n_gts == 0:
            raise ValueError("no ground-truth boxes: recall is undefined")
        if not conf_grid:
            raise ValueError("conf_grid must not be empty")
        if any(b < a for a, b in zip(conf_grid, conf_grid[1:])):
            raise ValueError("conf_grid must be sorted ascending")
        rows = []
        for c in conf_grid:
            n_tp, n_fp, _ = self.counts_at(c)
            p = n_tp / (n_tp + n_fp) if n_tp + n_fp else 0.0
            r = n_tp / self.n_gts
            f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
            rows.append((float(c), p, r, f1))
        return F1Curve(rows)

    def confusion(self, conf_thr: float) -> DetectionConfusion:
        n_tp, n_fp, n_fn = self.counts_at(conf_thr)
        return DetectionConfusion(n_tp, n_fp, n_fn)


@dataclass
class F1Curve:
    rows: list[tuple[float, float, float, float]]  # (confidence, precision, recall, f1)

    @property
    def points(self) -> list[tuple[float, float]]:
        return [(c, f1) for c, _, _, f1 in self.rows]

    @property
    def best(self) -> tuple[float, float]:
        """(confidence, f1) at the first maximum."""
        c, _, _, f1 = max(self.rows, key=lambda r: r[3])
        return c, f1


@dataclass(frozen=True)
class DetectionConfusion:
    """Counts over {insulation_area, background}; true negatives are uncountable and fixed at 0."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: DetectionConfusion) -> DetectionConfusion:
        return DetectionConfusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def matrix(self) -> list[list[int]]:
        """Rows: true class, columns: predicted class, order (insulation_area, background)."""
        return [[self.tp, self.fn], [self.fp, self.tn]]

    @property
    def accuracy(self) -> float:
        """TP / (TP + FP + FN); this is an interpretation, not a standard detector metric."""
        denom = self.tp + self.fp + self.fn
        return self.tp / denom if denom else math.nan


def pr_curve(preds: Sequence[Detection], gts: Sequence[BoundingBox], iou_thr: float = DEFAULT_MATCH_IOU) -> PRCurve:
    ds = DetectionSet(iou_thr)
    ds.add(preds, gts)
    return ds.pr_curve()


def average_precision(curve: PRCurve, method: APMethod = "all_points") -> float:
    """Area under the monotone precision envelope.

    ``all_points`` integrates the envelope over every recall step;
    ``interp_101`` averages it at recall 0, 0.01, ..., 1.
    """
    if not curve.recall:
        return 0.0
    r = np.asarray(curve.recall, dtype=np.float64)
    p = np.asarray(curve.precision, dtype=np.float64)
    env = np.maximum.accumulate(p[::-1])[::-1]
    if method == "all_points":
        steps = np.diff(np.concatenate(([0.0], r)))
        return float(np.sum(steps * env))
    if method == "interp_101":
        total = 0.0
        for k in range(101):
            t = k / 100
            hit = np.nonzero(r >= t - 1e-12)[0]
            total += env[hit[0]] if hit.size else 0.0
        return total / 101
    raise ValueError(f"unknown AP method {method!r}")


def map_score(per_class_ap: Sequence[float]) -> float:
    if len(per_class_ap) == 0:
        raise ValueError("need at least one per-class AP")
    return float(sum(per_class_ap) / len(per_class_ap))


def f1_curve(
    preds: Sequence[Detection],
    gts: Sequence[BoundingBox],
    iou_thr: float = DEFAULT_MATCH_IOU,
    conf_grid: Sequence[float] = DEFAULT_CONF_GRID,
) -> F1Curve:
    ds = DetectionSet(iou_thr)
    ds.add(preds, gts)
    return ds.f1_curve(conf_grid)


def detection_confusion(
    preds: Sequence[Detection],
    gts: Sequence[BoundingBox],
    iou_thr: float = DEFAULT_MATCH_IOU,
    conf_thr: float = 0.25,
) -> DetectionConfusion:
    m = match_detections([d for d in preds if d.confidence >= conf_thr], gts, iou_thr)
    return DetectionConfusion(m.tp, m.fp, m.fn)


def classification_metrics(pred_labels: Sequence[str], true_labels: Sequence[str]) -> tuple[float, np.ndarray]:
    """Accuracy and the 2x2 confusion (rows true, columns predicted; order present, missing)."""
    if len(pred_labels) != len(true_labels):
        raise ValueError(f"length mismatch: {len(pred_labels)} predictions vs {len(true_labels)} labels")
    if not pred_labels:
        raise ValueError("need at least one label")
    pos = {name: k for k, name in enumerate(LABELS)}
    cm = np.zeros((2, 2), dtype=np.int64)
    for p, t in zip(pred_labels, true_labels):
        if p not in pos or t not in pos:
            raise ValueError(f"unknown label in pair ({p!r}, {t!r}); expected {LABELS}")
        cm[pos[t], pos[p]] += 1
    return int(np.trace(cm)) / int(cm.sum()), cm


def map_over_thresholds(images: Sequence[tuple[Sequence[Detection], Sequence[BoundingBox]]], thresholds: Sequence[float]) -> float:
    """Mean AP over several IoU thresholds (e.g. 0.50:0.95)."""
    aps = []
    for t in thresholds:
        ds = DetectionSet(t)
        for preds, gts in images:
            ds.add(preds, gts)
        aps.append(ds.pr_curve().ap)
    return map_score(aps)


@dataclass
class EvalReport:
    ap: float
    map: float
    ap_method: str
    iou_thr: float
    conf_thr: float
    pr: PRCurve
    f1: F1Curve
    det_confusion: DetectionConfusion
    n_images: int
    n_preds: int
    cls_accuracy: float | None = None
    cls_confusion: np.ndarray | None = None

    def to_dict(self) -> dict:
        best_c, best_f1 = self.f1.best
        acc = self.det_confusion.accuracy
        return {
            "ap": self.ap,
            "map": self.map,
            "ap_method": self.ap_method,
            "iou_thr": self.iou_thr,
            "conf_thr": self.conf_thr,
            "n_images": self.n_images,
            "n_gts": self.pr.n_gts,
            "n_preds": self.n_preds,
            "best_f1": {"confidence": best_c, "f1": best_f1},
            "f1_curve": [[c, f] for c, f in self.f1.points],
            "pr_curve": [[r, p] for r, p in self.pr.points],
            "det_confusion": {
                "labels": ["insulation_area", "background"],
                "matrix": self.det_confusion.matrix(),
                "tp": self.det_confusion.tp,
                "fp": self.det_confusion.fp,
                "fn": self.det_confusion.fn,
                "tn": self.det_confusion.tn,
            },
            "det_accuracy": None if math.isnan(acc) else acc,
            "cls_accuracy": self.cls_accuracy,
            "cls_confusion": None
            if self.cls_confusion is None
            else {"labels": list(LABELS), "matrix": self.cls_confusion.tolist()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def curves_csv(self) -> str:
        """F1/precision/recall on the confidence grid."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["confidence", "precision", "recall", "f1"])
        for c, p, r, f1 in self.f1.rows:
            w.writerow([f"{c:.4f}", f"{p:.6f}", f"{r:.6f}", f"{f1:.6f}"])
        return buf.getvalue()

    def pr_csv(self) -> str:
        """One row per prediction of the confidence sweep."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["confidence", "precision", "recall", "f1"])
        for c, r, p in zip(self.pr.confidence, self.pr.recall, self.pr.precision):
            f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
            w.writerow([f"{c:.6f}", f"{p:.6f}", f"{r:.6f}", f"{f1:.6f}"])
        return buf.getvalue()


def evaluate(
    images: Sequence[tuple[Sequence[Detection], Sequence[BoundingBox]]],
    iou_thr: float = DEFAULT_MATCH_IOU,
    conf_thr: float = 0.25,
    ap_method: APMethod = "all_points",
    conf_grid: Sequence[float] = DEFAULT_CONF_GRID,
    cls_pairs: Sequence[tuple[str, str]] | None = None,
) -> EvalReport:
    """Headline metrics over a set of images; ``cls_pairs`` holds (predicted, true) patch labels."""
    ds = DetectionSet(iou_thr)
    det_cm = DetectionConfusion()
    n_preds = 0
    for preds, gts in images:
        ds.add(preds, gts)
        det_cm = det_cm + detection_confusion(preds, gts, iou_thr, conf_thr)
        n_preds += len(preds)
    curve = ds.pr_curve()
    ap = average_precision(curve, ap_method)
    report = EvalReport(
        ap=ap,
        map=map_score([ap]),
        ap_method=ap_method,
        iou_thr=iou_thr,
        conf_thr=conf_thr,
        pr=curve,
        f1=ds.f1_curve(conf_grid),
        det_confusion=det_cm,
        n_images=len(images),
        n_preds=n_preds,
    )
    if cls_pairs:
        acc, cm = classification_metrics([p for p, _ in cls_pairs], [t for _, t in cls_pairs])
        report.cls_accuracy = acc
        report.cls_confusion = cm
    return report

"""Acceptance criteria, one test each; results are listed in the terminal summary."""

import json
import random
import time
from pathlib import Path

import numpy as np
import pytest

from inscan import dataset_io as dio
from inscan.cli import main
from inscan.dataset_io import AnnotatedImage
from inscan.evaluation import (
    average_precision,
    classification_metrics,
    evaluate,
    match_detections,
    pr_curve,
)
from inscan.geometry import BoundingBox, Detection, NormalizedBox, iou
from inscan.pipeline import InsulationReport
from inscan.pipeline.nms import nms
from inscan.preprocess import flip_vertical, rotate90

from oracles import brute_match, brute_nms

SMALL = ["--width", "800", "--height", "800", "--cell", "300", "400"]


@pytest.fixture(autouse=True)
def jobs(monkeypatch):
    monkeypatch.setenv("INSCAN_JOBS", "1")


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_1_nms_oracle(record):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        dets = []
        for _ in range(rng.randint(0, 200)):
            x0, y0 = rng.uniform(0, 1000), rng.uniform(0, 1000)
            # two-decimal confidences force plenty of ties
            dets.append(Detection(BoundingBox(x0, y0, x0 + rng.uniform(1, 150), y0 + rng.uniform(1, 150)), round(rng.random(), 2)))
        boxes = [d.box.as_tuple() for d in dets]
        confs = [d.confidence for d in dets]
        for thr in (0.3, 0.5, 0.7):
            if nms(dets, thr) != [dets[i] for i in brute_nms(boxes, confs, thr)]:
                mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30
    record(1, ok, "NMS equals brute force", f"{mismatches} mismatches over 3000 runs, {elapsed:.1f}s (limit 30s)")
    assert ok


def test_2_ap_fixture(record):
    g1, g2 = BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)
    preds = [Detection(g1, 0.9), Detection(BoundingBox(50, 50, 60, 60), 0.8), Detection(g2, 0.7)]
    ap = average_precision(pr_curve(preds, [g1, g2]), "all_points")
    perfect = average_precision(pr_curve([Detection(g1, 0.9), Detection(g2, 0.8)], [g1, g2]))
    zero = average_precision(pr_curve([Detection(BoundingBox(50, 50, 60, 60), 0.9)], [g1, g2]))
    ok = abs(ap - 5 / 6) < 1e-9 and perfect == 1.0 and zero == 0.0
    record(2, ok, "AP fixture", f"AP={ap:.12f} (5/6), perfect={perfect}, zero-TP={zero}")
    assert ok


def test_3_matching_oracle(record):
    rng = random.Random(77)
    mismatches = 0
    for _ in range(500):
        def box():
            x0, y0 = rng.randint(0, 30), rng.randint(0, 30)
            return BoundingBox(x0, y0, x0 + rng.randint(1, 15), y0 + rng.randint(1, 15))

        gts = [box() for _ in range(rng.randint(0, 8))]
        preds = []
        for _ in range(rng.randint(0, 12)):
            if gts and rng.random() < 0.6:
                g = rng.choice(gts)
                dx = rng.randint(0, 2)
                b = BoundingBox(g.x_min + dx, g.y_min, g.x_max + dx + rng.randint(0, 2), g.y_max + rng.randint(0, 1))
            else:
                b = box()
            preds.append(Detection(b, rng.randint(1, 10) / 10))
        expected = brute_match([p.box.as_tuple() for p in preds], [p.confidence for p in preds], [g.as_tuple() for g in gts], 0.5)
        if match_detections(preds, gts, 0.5).matched != expected:
            mismatches += 1
    ok = mismatches == 0
    record(3, ok, "greedy matching equals oracle", f"{mismatches} mismatches over 500 instances")
    assert ok


def _boxes_err(a, b) -> float:
    if len(a) != len(b):
        return float("inf")
    return max((float(np.max(np.abs(np.subtract(x.as_tuple(), y.as_tuple())))) for x, y in zip(a, b)), default=0.0)


def test_4_augmentation_algebra(record):
    rng = np.random.default_rng(5)
    pixel_fail = 0
    max_box_err = 0.0
    max_iou_err = 0.0
    for k in range(50):
        h, w = int(rng.integers(20, 120)), int(rng.integers(20, 120))
        boxes = []
        for _ in range(int(rng.integers(1, 6))):
            bw, bh = rng.uniform(0.05, 0.5, 2)
            boxes.append(NormalizedBox(0, rng.uniform(bw / 2, 1 - bw / 2), rng.uniform(bh / 2, 1 - bh / 2), bw, bh))
        img = AnnotatedImage(f"a{k}", rng.integers(0, 256, (h, w), dtype=np.uint8), boxes)
        r4 = img
        for _ in range(4):
            r4 = rotate90(r4, "cw")
        for out in (flip_vertical(flip_vertical(img)), rotate90(rotate90(img, "cw"), "ccw"), r4):
            pixel_fail += not np.array_equal(out.image, img.image)
            max_box_err = max(max_box_err, _boxes_err(out.boxes, img.boxes))
        for out in (flip_vertical(img), rotate90(img, "cw"), rotate90(img, "ccw")):
            a, b = img.pixel_boxes(), out.pixel_boxes()
            for i in range(len(a)):
                for j in range(len(a)):
                    max_iou_err = max(max_iou_err, abs(iou(a[i], a[j]) - iou(b[i], b[j])))
    ok = pixel_fail == 0 and max_box_err <= 1e-12 and max_iou_err <= 1e-9
    record(4, ok, "augmentation identities", f"pixel failures={pixel_fail}, max box err={max_box_err:.1e}, max IoU err={max_iou_err:.1e}")
    assert ok


def test_5_dataset_arithmetic(tmp_path, record):
    syn, prep, br = tmp_path / "syn", tmp_path / "prep", tmp_path / "br"
    assert main(["synth", "--count", "900", "--seed", "11", "--out", str(syn), *SMALL]) == 0
    assert main(["prep", "--input", str(syn), "--out", str(prep)]) == 0
    n_prep = len(list((prep / "images").rglob("*.png")))
    pm = dio.DatasetManifest.load(prep / "manifest.json")
    leaks = 0
    split = pm.by_id()
    for e in pm.entries:
        if e.lineage is not None and split[e.lineage.parent].split != e.split:
            leaks += 1

    assert main(["bridge", "--input", str(prep), "--out", str(br)]) == 0
    bm = dio.DatasetManifest.load(br / "manifest.json")
    n_present = len(list(br.glob("*/present/*.png")))
    n_missing = len(list(br.glob("*/missing/*.png")))
    per_split = {s: [e.label for e in bm.entries if e.split == s] for s in dio.SPLITS}
    split_balanced = all(v.count("present") == v.count("missing") for v in per_split.values())
    root_split = {}
    for e in bm.entries:
        root = e.source_id.split("__", 1)[0]
        root_split.setdefault(root, set()).add(e.split)
        root_split[root].add(split[root].split)
    leaks += sum(len(s) > 1 for s in root_split.values())

    ok = n_prep == 3600 and len(pm.entries) == 3600 and n_present == n_missing > 0 and split_balanced and leaks == 0
    record(5, ok, "dataset arithmetic", f"prep outputs={n_prep} (3600), patches present={n_present} missing={n_missing}, "
           f"split-balanced={split_balanced}, lineage leaks={leaks}")
    assert ok


def _eval_identities(doc: dict, reports: list[InsulationReport], conf_thr: float) -> bool:
    cm = doc["det_confusion"]
    retained = sum(1 for r in reports for reg in r.regions if reg.det_conf >= conf_thr)
    ok = cm["tp"] + cm["fn"] == doc["n_gts"] and cm["tp"] + cm["fp"] == retained
    if doc["cls_confusion"] is not None:
        m = np.array(doc["cls_confusion"]["matrix"])
        ok &= doc["cls_accuracy"] == np.trace(m) / m.sum()
    return bool(ok)


def test_6_end_to_end(tmp_path, record):
    syn, run, ev = tmp_path / "syn", tmp_path / "run", tmp_path / "ev"
    t0 = time.perf_counter()
    assert main(["synth", "--count", "200", "--seed", "7", "--out", str(syn)]) == 0
    assert main(["run", "--input", str(syn), "--out", str(run)]) == 0
    assert main(["eval", "--pred", str(run / "reports"), "--gt", str(syn / "regions"), "--out", str(ev)]) == 0
    elapsed = time.perf_counter() - t0
    doc = json.loads((ev / "eval_report.json").read_text())
    reports = [InsulationReport.from_dict(json.loads(p.read_text())) for p in sorted((run / "reports").glob("*.json"))]
    identities = _eval_identities(doc, reports, doc["conf_thr"])
    ok = doc["map"] >= 0.95 and doc["cls_accuracy"] >= 0.98 and elapsed < 300 and identities
    record(6, ok, "end-to-end synthetic run",
           f"mAP@0.5={doc['map']:.4f} (>=0.95), region accuracy={doc['cls_accuracy']:.4f} (>=0.98), "
           f"{len(reports)} images, {elapsed:.0f}s (limit 300s)")
    assert ok


def test_7_metric_identities(record):
    rng = random.Random(99)
    failures = 0
    for _ in range(100):
        images = []
        for _ in range(rng.randint(1, 4)):
            gts = [BoundingBox(x, y, x + rng.randint(2, 9), y + rng.randint(2, 9))
                   for x, y in ((rng.randint(0, 40), rng.randint(0, 40)) for _ in range(rng.randint(0, 6)))]
            preds = []
            for _ in range(rng.randint(0, 8)):
                if gts and rng.random() < 0.6:
                    g = rng.choice(gts)
                    b = BoundingBox(g.x_min, g.y_min, g.x_max + rng.randint(0, 3), g.y_max)
                else:
                    x, y = rng.randint(0, 40), rng.randint(0, 40)
                    b = BoundingBox(x, y, x + rng.randint(2, 9), y + rng.randint(2, 9))
                preds.append(Detection(b, rng.random()))
            images.append((preds, gts))
        if sum(len(g) for _, g in images) == 0:
            images.append(([], [BoundingBox(0, 0, 3, 3)]))
        conf_thr = rng.choice([0.0, 0.25, 0.5])
        labels = [(rng.choice(dio.LABELS), rng.choice(dio.LABELS)) for _ in range(rng.randint(1, 20))]
        report = evaluate(images, 0.5, conf_thr, cls_pairs=labels)
        cm = report.det_confusion
        n_gts = sum(len(g) for _, g in images)
        retained = sum(1 for p, _ in images for d in p if d.confidence >= conf_thr)
        acc, m = classification_metrics([p for p, _ in labels], [t for _, t in labels])
        failures += not (cm.tp + cm.fn == n_gts and cm.tp + cm.fp == retained and acc == np.trace(m) / m.sum())
        scale = rng.uniform(0.01, 1.0)
        scaled = [([Detection(d.box, d.confidence * scale) for d in p], g) for p, g in images]
        failures += evaluate(scaled, 0.5, conf_thr).ap != report.ap
    ok = failures == 0
    record(7, ok, "metric identities and AP scale invariance", f"{failures} failures over 100 instances")
    assert ok


def test_8_determinism(tmp_path, record):
    syn, run = tmp_path / "syn", tmp_path / "run"
    snaps = []
    for _ in range(2):
        assert main(["synth", "--count", "4", "--seed", "3", "--out", str(syn)]) == 0
        assert main(["run", "--input", str(syn), "--out", str(run), "--overlays"]) == 0
        snaps.append((tree_bytes(syn), tree_bytes(run)))
    same_synth = snaps[0][0] == snaps[1][0]
    same_run = snaps[0][1] == snaps[1][1]
    ok = same_synth and same_run
    record(8, ok, "byte-identical reruns", f"synth identical={same_synth} ({len(snaps[0][0])} files), "
           f"run identical={same_run} ({len(snaps[0][1])} files)")
    assert ok

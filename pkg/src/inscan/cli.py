"""``inscan`` command line: synth, prep, bridge, run, eval."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml
from PIL import Image, ImageDraw

from inscan import dataset_io as dio
from inscan.dataset_io import (
    AnnotatedImage,
    DatasetManifest,
    ItemRef,
    Lineage,
    ManifestEntry,
    PatchSample,
)
from inscan.evaluation import DEFAULT_MATCH_IOU, evaluate, match_detections
from inscan.geometry import BoundingBox, Detection
from inscan.pipeline import (
    BaselineClassifier,
    BaselineDetector,
    InsulationReport,
    StaticDetector,
    ThicknessBands,
    TrainingConfig,
    extract_patches,
    nms,
    run_two_phase,
)
from inscan.pipeline.inference import DEFAULT_CONF, DEFAULT_NMS_IOU, DEFAULT_PAD
from inscan.pipeline.trainer_config import write_training_config
from inscan.preprocess import (
    CLASSIFICATION_OPS,
    DETECTION_OPS,
    MIN_RETAINED_AREA,
    AugmentOp,
    CropSpec,
    apply_op,
    augment_patches,
    focused_crop,
)
from inscan.synthgen import SynthSpec, generate_dataset

log = logging.getLogger("inscan")

RUN_CONFIG = "run_config.json"


class CommandError(RuntimeError):
    """A command could not produce its artifacts; reported with exit code 1."""


def jobs_from_env() -> int:
    raw = os.environ.get("INSCAN_JOBS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise CommandError(f"INSCAN_JOBS must be an integer, got {raw!r}") from None


# --- argument types -------------------------------------------------------------


def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def unit_interval(text: str) -> float:
    v = float(text)
    if not (0.0 < v <= 1.0):
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {v}")
    return v


def non_negative(text: str) -> float:
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def augment_op(text: str) -> str:
    try:
        AugmentOp.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


# --- shared helpers ---------------------------------------------------------------


def write_run_config(out: Path, args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    out.mkdir(parents=True, exist_ok=True)
    (out / RUN_CONFIG).write_text(json.dumps(cfg, indent=2, default=str) + "\n")


def image_root(path: Path) -> Path:
    return path / "images" if (path / "images").is_dir() else path


def discover_images(path: Path) -> list[tuple[str, Path, Path]]:
    """(stem, image path, path relative to the image root) for every PNG, sorted."""
    root = image_root(path)
    if not root.is_dir():
        raise CommandError(f"input directory {root} does not exist")
    found = []
    seen: dict[str, Path] = {}
    for p in sorted(root.rglob("*.png")):
        rel = p.relative_to(root)
        if p.stem in seen:
            raise CommandError(f"image stem collision: {seen[p.stem]} and {p}")
        seen[p.stem] = p
        found.append((p.stem, p, rel))
    return found


def sibling(dataset: Path, kind: str, rel: Path, suffix: str) -> Path:
    """Path of the label/sidecar matching an image at ``images/<rel>``."""
    return dataset / kind / rel.parent / f"{rel.stem}{suffix}"


def load_annotated(dataset: Path, stem: str, img_path: Path, rel: Path, conditions: dict[str, str | None]) -> AnnotatedImage:
    label_path = sibling(dataset, "labels", rel, ".txt")
    if not label_path.is_file():
        raise CommandError(f"missing label file for image {stem!r} (expected {label_path})")
    try:
        boxes = dio.parse_detection_label(label_path.read_text())
    except dio.LabelParseError as exc:
        raise CommandError(f"{label_path}: {exc}") from None
    flags = None
    side = sibling(dataset, "regions", rel, ".regions.json")
    if side.is_file():
        regions = dio.parse_regions_sidecar(side.read_text())
        if len(regions) != len(boxes):
            raise CommandError(f"{stem}: sidecar lists {len(regions)} regions but the label has {len(boxes)} boxes")
        flags = [f for _, f in regions]
    condition = conditions.get(stem)
    if flags is not None:
        condition = dio.condition_from_flags(flags)
    return AnnotatedImage(stem, dio.load_png(img_path), boxes, condition, None, flags)


def manifest_labels(dataset: Path) -> dict[str, str | None]:
    path = dataset / "manifest.json"
    if not path.is_file():
        return {}
    return {e.image_id: e.label for e in DatasetManifest.load(path).entries}


def manifest_splits(dataset: Path) -> dict[str, str]:
    path = dataset / "manifest.json"
    if not path.is_file():
        return {}
    return {e.image_id: e.split for e in DatasetManifest.load(path).entries if e.split is not None}


def parallel_map(fn: Callable, work: Sequence, jobs: int) -> list:
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, work, chunksize=max(1, len(work) // (4 * jobs))))
    return [fn(w) for w in work]


def spec_from_args(args: argparse.Namespace) -> SynthSpec:
    return SynthSpec(
        width=args.width,
        height=args.height,
        dpi=args.dpi,
        regions_per_image=tuple(args.regions),
        condition_mix=tuple(args.mix),
        cell_px=tuple(args.cell),
        seed=args.seed,
        touching_ranges=args.touching_ranges,
    )


def bands_from_args(args: argparse.Namespace) -> ThicknessBands:
    return ThicknessBands.from_spec(SynthSpec(dpi=args.dpi, touching_ranges=args.touching_ranges))


# --- synth ----------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    manifest = generate_dataset(spec_from_args(args), args.count, out, jobs=jobs_from_env())
    write_run_config(out, args)
    counts = manifest.counts()["pool"]
    print(f"wrote {counts['total']} blueprints to {out} " + ", ".join(f"{k}={v}" for k, v in counts.items() if k != "total"))
    return 0


# --- prep -----------------------------------------------------------------------------


def cmd_prep(args: argparse.Namespace) -> int:
    src, out = Path(args.input), Path(args.out)
    images = discover_images(src)
    if not images:
        raise CommandError(f"no images found under {image_root(src)}")
    for stem, _, rel in images:
        if not sibling(src, "labels", rel, ".txt").is_file():
            raise CommandError(f"missing label file for image {stem!r}")
    ops = [] if args.no_augment else [AugmentOp.parse(o) for o in args.ops]
    crop = CropSpec(*args.crop)

    refs = []
    for stem, _, _ in images:
        refs.append(ItemRef(stem))
        refs.extend(ItemRef(f"{stem}__{op.name}", Lineage(stem, op.name)) for op in ops)
    manifest = dio.split_dataset(refs, tuple(args.ratios), args.seed, phase="detection")
    dio._check_stems(manifest.ids())
    index = manifest.by_id()
    conditions = manifest_labels(src)

    dio.prepare_layout(out, "detection")
    for stem, path, rel in images:
        base = load_annotated(src, stem, path, rel, conditions)
        if not args.no_crop:
            base = focused_crop(base, crop, args.min_retained)
        for item in [base] + [apply_op(op, base) for op in ops]:
            entry = index[item.image_id]
            entry.label = item.condition
            dio.write_detection_item(item, entry.split, out)
    dio.finish_layout(manifest, out, "detection")
    write_training_config(TrainingConfig.detection(), out / "train_detect.cfg")
    write_run_config(out, args)
    counts = manifest.counts()
    print(f"prepared {len(manifest.entries)} images: " + ", ".join(f"{s}={counts.get(s, {}).get('total', 0)}" for s in dio.SPLITS))
    return 0


# --- bridge ---------------------------------------------------------------------------


def _balance(patches: list[PatchSample], rng: np.random.Generator) -> list[PatchSample]:
    by_label = {lab: sorted((p for p in patches if p.label == lab), key=lambda p: p.patch_id) for lab in dio.LABELS}
    n = min(len(v) for v in by_label.values())
    kept = []
    for group in by_label.values():
        if len(group) > n:
            pick = np.sort(rng.choice(len(group), size=n, replace=False))
            group = [group[i] for i in pick]
        kept.extend(group)
    return sorted(kept, key=lambda p: p.patch_id)


def _source_root(stem: str, splits: dict[str, str]) -> str:
    # augmented detection images are named <parent>__<transform>
    return stem if stem in splits else stem.split("__", 1)[0]


def cmd_bridge(args: argparse.Namespace) -> int:
    src, out = Path(args.input), Path(args.out)
    images = discover_images(src)
    infer = args.mode == "infer"
    if infer and not args.detections:
        raise CommandError("--mode infer needs --detections")
    classifier = BaselineClassifier(bands_from_args(args), args.aux_min_count) if infer else None

    patches: list[PatchSample] = []
    for stem, path, rel in images:
        if infer:
            det_path = Path(args.detections) / f"{stem}.txt"
            if not det_path.is_file():
                log.warning("no detection file for %s; skipped", stem)
                continue
            pixels = dio.load_png(path)
            h, w = pixels.shape
            dets = dio.parse_detection_file(det_path.read_text(), w, h)
            dets = nms([d for d in dets if d.confidence >= args.conf], args.nms_iou)
            boxes = [d.box for d in dets]
            labels = None
        else:
            side = sibling(src, "regions", rel, ".regions.json")
            if not side.is_file():
                raise CommandError(f"missing ground-truth sidecar for image {stem!r} (expected {side})")
            regions = dio.parse_regions_sidecar(side.read_text())
            if not regions:
                continue
            pixels = dio.load_png(path)
            boxes = [b for b, _ in regions]
            labels = ["present" if f else "missing" for _, f in regions]
        for patch in extract_patches(pixels, boxes, args.pad):
            label = labels[patch.index] if labels is not None else classifier.classify(patch.pixels)[0]
            patches.append(PatchSample(f"{stem}__r{patch.index:02d}", patch.pixels, label, stem, boxes[patch.index]))

    if not patches:
        log.warning("no regions found in %s; writing an empty classification dataset", src)

    splits = manifest_splits(src)
    if splits:
        assigned = {p.patch_id: splits[_source_root(p.source_id, splits)] for p in patches}
    elif patches:
        refs = [ItemRef(p.patch_id, None, p.label, _source_root(p.source_id, {})) for p in patches]
        plan = dio.split_dataset(refs, tuple(args.ratios), args.seed, phase="classification")
        assigned = {e.image_id: e.split for e in plan.entries}
    else:
        assigned = {}

    rng = np.random.default_rng(args.seed)
    balanced = []
    for split in dio.SPLITS:
        balanced += _balance([p for p in patches if assigned[p.patch_id] == split], rng)
    final = augment_patches(balanced, [AugmentOp.parse(o) for o in args.ops]) if args.augment else balanced
    entries = [
        ManifestEntry(p.patch_id, assigned[p.lineage.parent if p.lineage else p.patch_id], "classification",
                      p.lineage, p.label, p.source_id)
        for p in final
    ]
    manifest = DatasetManifest(entries)
    dio.emit_dataset_layout(manifest, final, out, phase="classification")
    write_training_config(TrainingConfig.classification(), out / "train_classify.cfg")
    write_run_config(out, args)
    counts = {lab: sum(p.label == lab for p in final) for lab in dio.LABELS}
    print(f"wrote {len(final)} patches to {out}: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


# --- run ------------------------------------------------------------------------------

STATUS_COLORS = {"present": (0, 160, 0), "missing": (220, 0, 0)}


def draw_overlay(pixels: np.ndarray, report: InsulationReport, path: Path) -> None:
    im = Image.fromarray(pixels, mode="L").convert("RGB")
    draw = ImageDraw.Draw(im)
    width = max(2, round(max(report.width, report.height) / 600))
    for r in report.regions:
        draw.rectangle(r.box.as_tuple(), outline=STATUS_COLORS.get(r.status, (0, 0, 255)), width=width)
    path.parent.mkdir(parents=True, exist_ok=True)
    im.save(path, format="PNG")


def _run_one(task: tuple) -> dict:
    stem, img_path, det_path, opts = task
    pixels = dio.load_png(img_path)
    h, w = pixels.shape
    bands = ThicknessBands.from_spec(SynthSpec(dpi=opts["dpi"], touching_ranges=opts["touching_ranges"]))
    if det_path is not None:
        text = Path(det_path).read_text() if Path(det_path).is_file() else ""
        detector = StaticDetector(dio.parse_detection_file(text, w, h))
    else:
        detector = BaselineDetector(bands, opts["min_pixels"])
    classifier = BaselineClassifier(bands, opts["aux_min_count"])
    report = run_two_phase(pixels, detector, classifier, opts["nms_iou"], opts["conf"], opts["pad"], image_id=stem)
    out = Path(opts["out"])
    (out / "reports" / f"{stem}.report.json").write_text(report.to_json())
    if opts["overlays"]:
        draw_overlay(pixels, report, out / "overlays" / f"{stem}.png")
    return {"image_id": stem, "regions": len(report.regions), "condition": report.condition,
            "present": sum(r.status == "present" for r in report.regions),
            "missing": sum(r.status == "missing" for r in report.regions)}


def cmd_run(args: argparse.Namespace) -> int:
    src, out = Path(args.input), Path(args.out)
    images = discover_images(src)
    det_dir = Path(args.detections_file) if args.detections_file else None
    if det_dir is not None and not det_dir.is_dir():
        raise CommandError(f"detections directory {det_dir} does not exist")
    if det_dir is None and args.detector != "baseline":
        raise CommandError(f"unknown detector backend {args.detector!r}")
    (out / "reports").mkdir(parents=True, exist_ok=True)
    opts = {k: getattr(args, k) for k in ("dpi", "touching_ranges", "min_pixels", "aux_min_count", "nms_iou", "conf", "pad", "overlays")}
    opts["out"] = str(out)
    tasks = [(stem, str(p), None if det_dir is None else str(det_dir / f"{stem}.txt"), opts) for stem, p, _ in images]
    rows = parallel_map(_run_one, tasks, jobs_from_env())
    summary = {
        "n_images": len(rows),
        "n_regions": sum(r["regions"] for r in rows),
        "status_counts": {s: sum(r[s] for r in rows) for s in dio.LABELS},
        "images": rows,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_run_config(out, args)
    print(f"processed {summary['n_images']} images, {summary['n_regions']} regions "
          f"(present={summary['status_counts']['present']}, missing={summary['status_counts']['missing']})")
    return 0


# --- eval -----------------------------------------------------------------------------


def _load_gt(gt_dir: Path) -> dict[str, tuple[str, list]]:
    """stem -> (unit, entries); unit is 'px' for sidecars, 'norm' for label files."""
    found: dict[str, tuple[str, list]] = {}
    for p in sorted(gt_dir.rglob("*.regions.json")):
        found[p.name[: -len(".regions.json")]] = ("px", dio.parse_regions_sidecar(p.read_text()))
    if not found:
        for p in sorted(gt_dir.rglob("*.txt")):
            found[p.stem] = ("norm", [(b, None) for b in dio.parse_detection_label(p.read_text())])
    return found


def _load_preds(pred_dir: Path) -> dict[str, tuple[str, object]]:
    found: dict[str, tuple[str, object]] = {}
    for p in sorted(pred_dir.rglob("*.report.json")):
        found[p.name[: -len(".report.json")]] = ("report", InsulationReport.from_dict(json.loads(p.read_text())))
    if not found:
        for p in sorted(pred_dir.rglob("*.txt")):
            found[p.stem] = ("norm", dio.parse_detection_file_normalized(p.read_text()))
    return found


def _size_lookup(images_dir: Path | None) -> dict[str, tuple[int, int]]:
    if images_dir is None:
        return {}
    return {stem: dio.image_size(p) for stem, p, _ in discover_images(images_dir)}


def _unit_boxes(stem: str, gt, pred, sizes) -> tuple[list[Detection], list[BoundingBox], list[bool | None], list[str | None]]:
    """Bring predictions and ground truth of one image into a common frame."""
    g_unit, g_entries = gt if gt is not None else ("any", [])
    p_kind, p_data = pred if pred is not None else ("none", None)
    size = sizes.get(stem)
    if p_kind == "report":
        size = size or (p_data.width, p_data.height)

    def norm_box(nb) -> BoundingBox:
        return BoundingBox(nb.cx - nb.w / 2, nb.cy - nb.h / 2, nb.cx + nb.w / 2, nb.cy + nb.h / 2)

    want_px = g_unit == "px" or p_kind == "report"
    if want_px and (g_unit == "norm" or p_kind == "norm"):
        if size is None:
            raise CommandError(f"{stem}: mixing pixel and normalized boxes needs --images for the image size")
    w, h = size if size else (1, 1)

    def as_frame(nb) -> BoundingBox:
        b = norm_box(nb)
        return BoundingBox(b.x_min * w, b.y_min * h, b.x_max * w, b.y_max * h) if want_px else b

    gts = [b if g_unit == "px" else as_frame(b) for b, _ in g_entries]
    flags = [f for _, f in g_entries]
    if p_kind == "report":
        preds = [Detection(r.box, r.det_conf) for r in p_data.regions]
        statuses = [r.status for r in p_data.regions]
    elif p_kind == "norm":
        preds = [Detection(as_frame(nb), conf, nb.class_id) for nb, conf in p_data]
        statuses = [None] * len(preds)
    else:
        preds, statuses = [], []
    return preds, gts, flags, statuses


def _load_cls_labels(path: Path) -> list[tuple[str, str]]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"true", "pred"} <= set(reader.fieldnames):
            raise CommandError(f"{path}: expected a CSV with 'true' and 'pred' columns")
        return [(row["pred"].strip(), row["true"].strip()) for row in reader]


def _write_matrix(path: Path, labels: Sequence[str], matrix) -> None:
    rows = ["true\\pred," + ",".join(labels)]
    rows += [f"{lab}," + ",".join(str(int(v)) for v in row) for lab, row in zip(labels, matrix)]
    path.write_text("\n".join(rows) + "\n")


def cmd_eval(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cls_pairs: list[tuple[str, str]] = []
    if args.cls_labels:
        cls_pairs += _load_cls_labels(Path(args.cls_labels))

    if bool(args.pred) != bool(args.gt):
        raise CommandError("--pred and --gt must be given together")
    if not args.pred and not cls_pairs:
        raise CommandError("nothing to evaluate: give --pred/--gt and/or --cls-labels")

    headline = []
    if args.pred:
        gt = _load_gt(Path(args.gt))
        preds = _load_preds(Path(args.pred))
        sizes = _size_lookup(Path(args.images) if args.images else None)
        per_image = []
        for stem in sorted(set(gt) | set(preds)):
            p, g, flags, statuses = _unit_boxes(stem, gt.get(stem), preds.get(stem), sizes)
            per_image.append((p, g))
            if any(s is not None for s in statuses) and any(f is not None for f in flags):
                m = match_detections(p, g, args.iou)
                for i, j in enumerate(m.matched):
                    if j is not None and statuses[i] is not None and flags[j] is not None:
                        cls_pairs.append((statuses[i], "present" if flags[j] else "missing"))
        if sum(len(g) for _, g in per_image) == 0:
            raise CommandError("ground truth contains no boxes: recall is undefined")
        report = evaluate(per_image, args.iou, args.conf, args.ap_method, cls_pairs=cls_pairs or None)
        doc = report.to_dict()
        (out / "curves.csv").write_text(report.curves_csv())
        (out / "pr_curve.csv").write_text(report.pr_csv())
        _write_matrix(out / "confusion_detection.csv", ["insulation_area", "background"], report.det_confusion.matrix())
        headline.append(f"mAP@{args.iou:g} ({args.ap_method}) = {report.map:.4f}")
        det_acc = doc["det_accuracy"]
        if det_acc is not None:
            headline.append(f"detection accuracy TP/(TP+FP+FN) = {det_acc:.4f}")
    else:
        from inscan.evaluation import classification_metrics

        acc, cm = classification_metrics([p for p, _ in cls_pairs], [t for _, t in cls_pairs])
        doc = {"cls_accuracy": acc, "cls_confusion": {"labels": list(dio.LABELS), "matrix": cm.tolist()}}

    if doc.get("cls_confusion"):
        _write_matrix(out / "confusion_classification.csv", dio.LABELS, doc["cls_confusion"]["matrix"])
        headline.append(f"classification accuracy = {doc['cls_accuracy']:.4f}")
    (out / "eval_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    write_run_config(out, args)
    print("\n".join(headline))
    return 0


# --- parser ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON or YAML file of flag defaults (flags still win)")


def _add_band_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dpi", type=float, default=SynthSpec.dpi, help="rendering resolution the thickness bands assume")
    p.add_argument("--touching-ranges", action="store_true", help="use touching 0.05-0.09 / 0.09-0.13 mm primary/auxiliary ranges")


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nms-iou", type=unit_interval, default=DEFAULT_NMS_IOU)
    p.add_argument("--conf", type=unit_interval, default=DEFAULT_CONF, help="detection confidence cut (applied before NMS)")
    p.add_argument("--pad", type=non_negative, default=DEFAULT_PAD, help="patch padding per side, fraction of box size")
    p.add_argument("--min-pixels", type=positive_int, default=30, help="baseline detector: smallest stroke skeleton kept")
    p.add_argument("--aux-min-count", type=positive_int, default=10, help="baseline classifier: auxiliary pixels for 'present'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inscan", description="Insulation-area detection and classification toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic blueprint dataset")
    _add_common(p)
    p.add_argument("--count", type=positive_int, required=True)
    p.add_argument("--width", type=positive_int, default=SynthSpec.width)
    p.add_argument("--height", type=positive_int, default=SynthSpec.height)
    p.add_argument("--regions", type=positive_int, nargs=2, metavar=("MIN", "MAX"), default=list(SynthSpec.regions_per_image))
    p.add_argument("--cell", type=positive_int, nargs=2, metavar=("MIN", "MAX"), default=list(SynthSpec.cell_px),
                   help="wall grid cell size range in pixels")
    p.add_argument("--mix", type=float, nargs=3, metavar=("PRESENT", "MISSING", "PARTIAL"), default=list(SynthSpec.condition_mix))
    _add_band_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prep", help="crop, augment and split a detection dataset")
    _add_common(p)
    p.add_argument("--input", required=True, help="dataset root with images/ and labels/")
    p.add_argument("--crop", type=float, nargs=4, metavar=("LEFT", "RIGHT", "TOP", "BOTTOM"),
                   default=[CropSpec.left_frac, CropSpec.right_frac, CropSpec.top_frac, CropSpec.bottom_frac])
    p.add_argument("--no-crop", action="store_true")
    p.add_argument("--min-retained", type=non_negative, default=MIN_RETAINED_AREA,
                   help="drop boxes keeping less than this fraction of their area after cropping")
    p.add_argument("--ops", type=augment_op, nargs="+", default=[op.name for op in DETECTION_OPS])
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"), default=list(dio.DEFAULT_RATIOS))
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("bridge", help="cut region patches into a balanced classification dataset")
    _add_common(p)
    p.add_argument("--input", required=True, help="detection dataset root (synth pool or prep output)")
    p.add_argument("--mode", choices=["train", "infer"], default="train")
    p.add_argument("--detections", help="infer mode: directory of <stem>.txt detection files")
    p.add_argument("--pad", type=non_negative, default=DEFAULT_PAD)
    p.add_argument("--conf", type=unit_interval, default=DEFAULT_CONF)
    p.add_argument("--nms-iou", type=unit_interval, default=DEFAULT_NMS_IOU)
    p.add_argument("--aux-min-count", type=positive_int, default=10)
    p.add_argument("--augment", action="store_true", help="add flipped/rotated/contrast variants after balancing")
    p.add_argument("--ops", type=augment_op, nargs="+", default=[op.name for op in CLASSIFICATION_OPS])
    p.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"), default=list(dio.DEFAULT_RATIOS))
    _add_band_flags(p)
    p.set_defaults(func=cmd_bridge)

    p = sub.add_parser("run", help="two-phase inference over a directory of images")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--detector", default="baseline", help="detector backend (only 'baseline' is built in)")
    p.add_argument("--detections-file", help="directory of external <stem>.txt detections; replaces the detector")
    p.add_argument("--overlays", action="store_true", help="also write boxes coloured by status")
    _add_pipeline_flags(p)
    _add_band_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred", help="directory of *.report.json or <stem>.txt detection files")
    p.add_argument("--gt", help="directory of *.regions.json sidecars or <stem>.txt label files")
    p.add_argument("--images", help="image directory, needed when mixing pixel and normalized boxes")
    p.add_argument("--iou", type=unit_interval, default=DEFAULT_MATCH_IOU)
    p.add_argument("--conf", type=float, default=DEFAULT_CONF, help="confidence cut for confusion matrix and accuracy")
    p.add_argument("--ap-method", choices=["all_points", "interp_101"], default="all_points")
    p.add_argument("--cls-labels", help="CSV with 'true' and 'pred' columns of patch labels")
    p.set_defaults(func=cmd_eval)
    return parser


def _load_config(path: str) -> dict:
    text = Path(path).read_text()
    data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise CommandError(f"config {path} must be a mapping of flag names to values")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install config-file values as subcommand defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((tok for tok in argv if tok in subparsers.choices), None)
    if command is None:
        return
    sub = subparsers.choices[command]
    try:
        cfg = _load_config(known.config)
    except (OSError, ValueError, yaml.YAMLError, CommandError) as exc:
        sub.error(f"cannot read config {known.config}: {exc}")
    actions = {a.dest: a for a in sub._actions}
    unknown = sorted(set(cfg) - set(actions) - {"help", "config"})
    if unknown:
        sub.error(f"unknown keys in {known.config}: {', '.join(unknown)}")
    for key in cfg:
        actions[key].required = False
    sub.set_defaults(**cfg)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, ValueError, OSError, RuntimeError) as exc:
        print(f"inscan {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

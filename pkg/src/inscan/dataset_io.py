"""On-disk formats for both phases: YOLO labels, descriptors, manifests, layouts."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
import yaml
from PIL import Image

from inscan.geometry import (
    BoundingBox,
    Detection,
    ImageGrid,
    NormalizedBox,
    check_grid,
    to_normalized,
    to_pixels,
)

Condition = Literal["present", "missing", "partially_missing"]
Label = Literal["present", "missing"]
Split = Literal["train", "val", "test"]
Phase = Literal["detection", "classification"]

CONDITIONS: tuple[str, ...] = ("present", "missing", "partially_missing")
LABELS: tuple[str, ...] = ("present", "missing")
SPLITS: tuple[str, ...] = ("train", "val", "test")
PHASES: tuple[str, ...] = ("detection", "classification")
CLASS_NAMES: tuple[str, ...] = ("insulation_area",)
DEFAULT_RATIOS = (0.8, 0.1, 0.1)


class LabelParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Lineage:
    parent: str
    transform: str


@dataclass
class AnnotatedImage:
    """A blueprint raster with its insulation-area boxes.

    ``region_flags`` is only known for synthetic ground truth: one boolean per
    box saying whether auxiliary insulation was drawn in that region.
    """

    image_id: str
    image: ImageGrid
    boxes: list[NormalizedBox]
    condition: Condition | None = None
    lineage: Lineage | None = None
    region_flags: list[bool] | None = None

    def __post_init__(self):
        if self.region_flags is not None:
            if len(self.region_flags) != len(self.boxes):
                raise ValueError("region_flags must align with boxes")
            derived = condition_from_flags(self.region_flags)
            if self.condition is not None and derived is not None and derived != self.condition:
                raise ValueError(f"condition {self.condition!r} disagrees with region flags ({derived!r})")
        if self.condition is not None and self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    def pixel_boxes(self) -> list[BoundingBox]:
        return [to_pixels(b, self.width, self.height) for b in self.boxes]


@dataclass
class PatchSample:
    """A cropped region for the binary classifier."""

    patch_id: str
    patch: ImageGrid
    label: Label
    source_id: str
    source_box: BoundingBox
    lineage: Lineage | None = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"patch label must be one of {LABELS}, got {self.label!r}")

    @property
    def image_id(self) -> str:
        return self.patch_id


@dataclass
class ManifestEntry:
    image_id: str
    split: Split | None
    phase: Phase
    lineage: Lineage | None = None
    label: str | None = None
    source_id: str | None = None

    def to_dict(self) -> dict:
        d = {
            "image_id": self.image_id,
            "split": self.split,
            "phase": self.phase,
            "lineage": None if self.lineage is None else {"parent": self.lineage.parent, "transform": self.lineage.transform},
            "label": self.label,
        }
        if self.source_id is not None:
            d["source_id"] = self.source_id
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ManifestEntry:
        lin = d.get("lineage")
        return cls(
            image_id=d["image_id"],
            split=d.get("split"),
            phase=d["phase"],
            lineage=None if lin is None else Lineage(lin["parent"], lin["transform"]),
            label=d.get("label"),
            source_id=d.get("source_id"),
        )


@dataclass
class DatasetManifest:
    """Split membership and augmentation lineage for one dataset.

    Entries with ``split=None`` describe an unsplit pool (raw generator
    output); every other manifest must partition its ids across splits.
    """

    entries: list[ManifestEntry] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [e.image_id for e in self.entries]

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.image_id: e for e in self.entries}

    def split_of(self, image_id: str) -> str | None:
        return self.by_id()[image_id].split

    def counts(self) -> dict[str, dict[str, int]]:
        """Counts per split, broken down by label/condition ("total" included)."""
        out: dict[str, dict[str, int]] = {}
        for e in self.entries:
            key = e.split or "pool"
            bucket = out.setdefault(key, {"total": 0})
            bucket["total"] += 1
            if e.label is not None:
                bucket[e.label] = bucket.get(e.label, 0) + 1
        return {k: dict(sorted(v.items())) for k, v in sorted(out.items())}

    def check(self) -> None:
        """Raise if ids repeat or an augmented child sits in another split than its parent."""
        seen = Counter(self.ids())
        dupes = sorted(k for k, n in seen.items() if n > 1)
        if dupes:
            raise LayoutError(f"image ids appear more than once: {dupes[:5]}")
        index = self.by_id()
        for e in self.entries:
            if e.split is not None and e.split not in SPLITS:
                raise LayoutError(f"{e.image_id}: unknown split {e.split!r}")
            if e.lineage is not None and e.lineage.parent in index:
                parent = index[e.lineage.parent]
                if parent.split != e.split:
                    raise LayoutError(
                        f"{e.image_id} is in {e.split!r} but its parent {parent.image_id} is in {parent.split!r}"
                    )

    def to_json(self) -> str:
        doc = {"entries": [e.to_dict() for e in self.entries], "counts": self.counts()}
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> DatasetManifest:
        doc = json.loads(text)
        return cls([ManifestEntry.from_dict(d) for d in doc["entries"]])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        return cls.from_json(Path(path).read_text())


def condition_from_flags(flags: Sequence[bool]) -> Condition | None:
    """Image-level condition implied by per-region auxiliary flags."""
    if not flags:
        return None
    if all(flags):
        return "present"
    if not any(flags):
        return "missing"
    return "partially_missing"


# --- YOLO label files -------------------------------------------------------


def write_detection_label(boxes: Iterable[NormalizedBox]) -> str:
    return "".join(f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n" for b in boxes)


def _parse_rows(text: str, n_fields: int) -> list[tuple[int, list[float], int]]:
    rows = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) != n_fields:
            raise LabelParseError(line_no, f"expected {n_fields} fields, got {len(parts)}")
        try:
            class_id = int(parts[0])
            values = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise LabelParseError(line_no, f"non-numeric field ({exc})") from None
        if class_id < 0:
            raise LabelParseError(line_no, f"negative class id {class_id}")
        if any(not math.isfinite(v) for v in values):
            raise LabelParseError(line_no, "non-finite value")
        rows.append((class_id, values, line_no))
    return rows


def _row_box(class_id: int, vals: Sequence[float], line_no: int) -> NormalizedBox:
    try:
        return NormalizedBox(class_id, *vals[:4])
    except ValueError as exc:
        raise LabelParseError(line_no, str(exc)) from None


def parse_detection_label(text: str) -> list[NormalizedBox]:
    """Parse a ``class cx cy w h`` label file; errors name the offending line."""
    return [_row_box(c, v, n) for c, v, n in _parse_rows(text, 5)]


def write_detection_file(dets: Iterable[Detection], width: int, height: int) -> str:
    """External-detection format: label columns plus a trailing confidence."""
    lines = []
    for d in dets:
        n = to_normalized(d.box, width, height, d.class_id)
        lines.append(f"{n.class_id} {n.cx:.6f} {n.cy:.6f} {n.w:.6f} {n.h:.6f} {d.confidence:.6f}\n")
    return "".join(lines)


def parse_detection_file(text: str, width: int, height: int) -> list[Detection]:
    dets = []
    for class_id, vals, line_no in _parse_rows(text, 6):
        box = _row_box(class_id, vals, line_no)
        conf = vals[4]
        if not (0.0 <= conf <= 1.0):
            raise LabelParseError(line_no, f"confidence {conf} outside [0, 1]")
        dets.append(Detection(to_pixels(box, width, height), conf, class_id))
    return dets


def parse_detection_file_normalized(text: str) -> list[tuple[NormalizedBox, float]]:
    out = []
    for class_id, vals, line_no in _parse_rows(text, 6):
        conf = vals[4]
        if not (0.0 <= conf <= 1.0):
            raise LabelParseError(line_no, f"confidence {conf} outside [0, 1]")
        out.append((_row_box(class_id, vals, line_no), conf))
    return out


# --- sidecars, descriptors, rasters -----------------------------------------


def write_regions_sidecar(boxes: Sequence[BoundingBox], flags: Sequence[bool]) -> str:
    rows = [{**b.to_dict(), "has_auxiliary": bool(f)} for b, f in zip(boxes, flags, strict=True)]
    return json.dumps(rows, indent=2) + "\n"


def parse_regions_sidecar(text: str) -> list[tuple[BoundingBox, bool]]:
    return [(BoundingBox.from_dict(r), bool(r["has_auxiliary"])) for r in json.loads(text)]


def write_descriptor(root: str | Path, splits: dict[str, str]) -> str:
    """Dataset descriptor in the key/value form detection trainers consume."""
    lines = [f"path: {Path(root).as_posix()}"]
    for split in SPLITS:
        lines.append(f"{split}: {splits.get(split, '')}")
    lines.append(f"nc: {len(CLASS_NAMES)}")
    lines.append(f"names: [{', '.join(CLASS_NAMES)}]")
    return "\n".join(lines) + "\n"


def read_descriptor(path: str | Path) -> dict:
    return yaml.safe_load(Path(path).read_text())


def save_png(img: ImageGrid, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(check_grid(img), mode="L").save(path, format="PNG")


def load_png(path: str | Path) -> ImageGrid:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()


def image_size(path: str | Path) -> tuple[int, int]:
    with Image.open(path) as im:
        return im.size


# --- splitting ----------------------------------------------------------------


@dataclass(frozen=True)
class ItemRef:
    """Id-only stand-in for an image or patch, enough to plan a split before loading pixels."""

    image_id: str
    lineage: Lineage | None = None
    label: str | None = None
    source_id: str | None = None


def _group_key(item, ids: dict[str, object]) -> str:
    source = getattr(item, "source_id", None)
    if source is not None and item.lineage is None:
        return source
    cur = item
    seen = set()
    while cur.lineage is not None:
        parent = cur.lineage.parent
        if parent in seen:
            raise LayoutError(f"lineage cycle through {parent}")
        seen.add(parent)
        if parent not in ids:
            return parent
        cur = ids[parent]
    return cur.image_id


def _item_label(item) -> str | None:
    if isinstance(item, AnnotatedImage):
        return item.condition
    return getattr(item, "label", None)


def split_dataset(
    items: Sequence[AnnotatedImage | PatchSample | ItemRef],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    phase: Phase | None = None,
) -> DatasetManifest:
    """Assign items to train/val/test, keeping lineage groups together.

    Groups are original images together with all of their augmented
    descendants (patches group by source image). val and test receive
    ``floor(ratio * n_groups)`` groups; the remainder goes to train.
    """
    if not items:
        raise ValueError("cannot split an empty dataset")
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive fractions summing to 1, got {tuple(ratios)}")
    ids = {it.image_id: it for it in items}
    if len(ids) != len(items):
        raise LayoutError("duplicate image ids in split input")

    keys = [_group_key(it, ids) for it in items]
    groups = sorted(set(keys))
    n = len(groups)
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    assignment = {}
    for rank, gi in enumerate(order):
        split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        assignment[groups[gi]] = split

    if phase is None:
        phase = "classification" if isinstance(items[0], PatchSample) else "detection"
    entries = [
        ManifestEntry(
            image_id=it.image_id,
            split=assignment[key],
            phase=phase,
            lineage=getattr(it, "lineage", None),
            label=_item_label(it),
            source_id=getattr(it, "source_id", None),
        )
        for it, key in zip(items, keys)
    ]
    manifest = DatasetManifest(entries)
    manifest.check()
    return manifest


# --- layouts --------------------------------------------------------------------


def _check_stems(ids: Iterable[str]) -> None:
    seen: dict[str, str] = {}
    for image_id in ids:
        if not image_id or "/" in image_id or "\\" in image_id:
            raise LayoutError(f"invalid file stem {image_id!r}")
        key = image_id.casefold()
        if key in seen:
            raise LayoutError(f"file stem collision: {seen[key]!r} and {image_id!r}")
        seen[key] = image_id


def write_detection_item(item: AnnotatedImage, split: str, root: str | Path) -> list[Path]:
    """Write one image, its label file and (if known) its region sidecar into ``split``."""
    root = Path(root)
    img_path = root / "images" / split / f"{item.image_id}.png"
    save_png(item.image, img_path)
    lbl_path = root / "labels" / split / f"{item.image_id}.txt"
    lbl_path.parent.mkdir(parents=True, exist_ok=True)
    lbl_path.write_text(write_detection_label(item.boxes))
    written = [img_path, lbl_path]
    if item.region_flags is not None:
        reg_path = root / "regions" / split / f"{item.image_id}.regions.json"
        reg_path.parent.mkdir(parents=True, exist_ok=True)
        reg_path.write_text(write_regions_sidecar(item.pixel_boxes(), item.region_flags))
        written.append(reg_path)
    return written


def write_patch_item(item: PatchSample, split: str, root: str | Path) -> Path:
    path = Path(root) / split / item.label / f"{item.patch_id}.png"
    save_png(item.patch, path)
    return path


def prepare_layout(root: str | Path, phase: Phase) -> None:
    """Create the empty split/class directory skeleton for a phase."""
    root = Path(root)
    for split in SPLITS:
        if phase == "detection":
            (root / "images" / split).mkdir(parents=True, exist_ok=True)
            (root / "labels" / split).mkdir(parents=True, exist_ok=True)
        else:
            for label in LABELS:
                (root / split / label).mkdir(parents=True, exist_ok=True)


def finish_layout(manifest: DatasetManifest, root: str | Path, phase: Phase) -> list[Path]:
    """Write the descriptor (detection only) and the manifest."""
    root = Path(root)
    written = []
    if phase == "detection":
        desc = root / "data.yaml"
        desc.write_text(write_descriptor(root, {s: f"images/{s}" for s in SPLITS}))
        written.append(desc)
    man_path = root / "manifest.json"
    manifest.save(man_path)
    written.append(man_path)
    return written


def emit_dataset_layout(
    manifest: DatasetManifest,
    items: Sequence[AnnotatedImage | PatchSample],
    root: str | Path,
    phase: Phase | None = None,
) -> list[Path]:
    """Write a split dataset to disk and return the files written.

    Detection: ``images/<split>/``, ``labels/<split>/`` (plus ``regions/<split>/``
    sidecars when region flags are known) and ``data.yaml``.
    Classification: ``<split>/<present|missing>/<id>.png``.
    """
    manifest.check()
    index = manifest.by_id()
    _check_stems(it.image_id for it in items)
    missing = [it.image_id for it in items if it.image_id not in index]
    if missing:
        raise LayoutError(f"items not in manifest: {missing[:5]}")
    if phase is None:
        phases = {index[it.image_id].phase for it in items} or {e.phase for e in manifest.entries[:1]} or {"detection"}
        if len(phases) > 1:
            raise LayoutError("cannot mix detection and classification items in one layout")
        phase = phases.pop()

    prepare_layout(root, phase)
    written: list[Path] = []
    for it in items:
        split = index[it.image_id].split
        if split is None:
            raise LayoutError(f"{it.image_id} has no split")
        if phase == "detection":
            written += write_detection_item(it, split, root)
        else:
            written.append(write_patch_item(it, split, root))
    return written + finish_layout(manifest, root, phase)

"""Deterministic schematic blueprints with thickness-coded line classes.

Each image is a grid of structural walls. A random subset of wall segments
gets a primary-insulation stroke running parallel to it; every such stroke
defines one insulation-area box. Depending on the image condition, an
auxiliary-insulation stroke is drawn next to the primary stroke inside the
box. Everything is derived from ``(seed, image_index)`` alone, so images can
be generated in any order or in parallel with identical bytes.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from inscan.dataset_io import (
    CONDITIONS,
    AnnotatedImage,
    DatasetManifest,
    ManifestEntry,
    save_png,
    write_descriptor,
    write_detection_label,
    write_regions_sidecar,
)
from inscan.geometry import BoundingBox, ImageGrid, to_normalized

# Stroke classes in the rendered class map.
BACKGROUND, STRUCTURE, PRIMARY, AUXILIARY = 0, 1, 2, 3

TOUCHING_PRIMARY_MM = (0.05, 0.09)
TOUCHING_AUXILIARY_MM = (0.09, 0.13)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
INK = 0
BLANK = 255


def mm_to_px(mm: float, dpi: float) -> int:
    """Stroke width in whole pixels (round half up, at least 1)."""
    if mm <= 0 or dpi <= 0:
        raise ValueError(f"mm and dpi must be positive, got mm={mm}, dpi={dpi}")
    return max(1, math.floor(mm / 25.4 * dpi + 0.5))


@dataclass(frozen=True)
class SynthSpec:
    width: int = 2400
    height: int = 2400
    dpi: float = 1200.0
    structure_mm: tuple[float, float] = (0.18, 0.25)
    primary_mm: tuple[float, float] = (0.05, 0.08)
    auxiliary_mm: tuple[float, float] = (0.10, 0.13)
    regions_per_image: tuple[int, int] = (2, 5)
    condition_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    cell_px: tuple[int, int] = (520, 820)
    seed: int = 0
    # Use the touching 0.05-0.09 / 0.09-0.13 mm ranges instead of the disjoint defaults.
    touching_ranges: bool = False

    def __post_init__(self):
        for name in ("structure_mm", "primary_mm", "auxiliary_mm"):
            lo, hi = getattr(self, name)
            if lo <= 0 or lo > hi:
                raise ValueError(f"{name} must be a positive range with min <= max, got {(lo, hi)}")
        if len(self.condition_mix) != 3 or any(p < 0 for p in self.condition_mix):
            raise ValueError("condition_mix needs three non-negative probabilities")
        if abs(sum(self.condition_mix) - 1.0) > 1e-9:
            raise ValueError(f"condition_mix must sum to 1, got {sum(self.condition_mix)}")
        lo, hi = self.regions_per_image
        if lo < 1 or lo > hi:
            raise ValueError(f"regions_per_image must satisfy 1 <= min <= max, got {(lo, hi)}")
        if self.condition_mix[2] > 0 and hi < 2:
            raise ValueError("partially_missing images need at least two regions")
        if self.width < 1 or self.height < 1 or self.dpi <= 0:
            raise ValueError("canvas and dpi must be positive")
        if self.cell_px[0] < 1 or self.cell_px[0] > self.cell_px[1]:
            raise ValueError(f"bad cell_px range {self.cell_px}")

    @property
    def primary_range(self) -> tuple[float, float]:
        return TOUCHING_PRIMARY_MM if self.touching_ranges else self.primary_mm

    @property
    def auxiliary_range(self) -> tuple[float, float]:
        return TOUCHING_AUXILIARY_MM if self.touching_ranges else self.auxiliary_mm

    def px_range(self, which: str) -> tuple[int, int]:
        mm = {
            "structure": self.structure_mm,
            "primary": self.primary_range,
            "auxiliary": self.auxiliary_range,
        }[which]
        return mm_to_px(mm[0], self.dpi), mm_to_px(mm[1], self.dpi)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SynthSpec:
        kw = dict(d)
        for key in ("structure_mm", "primary_mm", "auxiliary_mm", "regions_per_image", "condition_mix", "cell_px"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class GroundTruthRegion:
    box: BoundingBox
    has_auxiliary: bool


@dataclass
class Blueprint:
    """Full render output; ``class_map`` labels every pixel by stroke class."""

    image_id: str
    image: ImageGrid
    class_map: np.ndarray
    regions: list[GroundTruthRegion]
    condition: str
    structure_px: int
    walls: list[tuple[int, int, int, int]] = field(default_factory=list)


def image_condition(spec: SynthSpec, image_index: int) -> str:
    """Condition for one image from a golden-ratio sequence over the mix.

    Low discrepancy keeps realized frequencies close to ``condition_mix``
    even for a few hundred images, while still depending only on the index.
    """
    offset = np.random.default_rng([spec.seed, 0x5EED]).random()
    u = (offset + image_index * GOLDEN) % 1.0
    cum = 0.0
    for cond, p in zip(CONDITIONS, spec.condition_mix):
        cum += p
        if u < cum:
            return cond
    return next(c for c, p in zip(reversed(CONDITIONS), reversed(spec.condition_mix)) if p > 0)


def _grid_lines(rng: np.random.Generator, length: int, margin: int, cell: tuple[int, int]) -> list[int]:
    span = length - 2 * margin
    if span <= 0:
        return []
    mean_cell = (cell[0] + cell[1]) / 2
    n_cells = max(1, round(span / mean_cell))
    base = np.linspace(margin, length - margin, n_cells + 1)
    jitter = span / n_cells / 8
    lines = [int(round(base[0]))]
    for v in base[1:-1]:
        lines.append(int(round(v + rng.uniform(-jitter, jitter))))
    lines.append(int(round(base[-1])))
    return lines


def _stroke(center: int, thickness: int) -> tuple[int, int]:
    start = center - thickness // 2
    return start, start + thickness


def _paint(class_map: np.ndarray, cls: int, x0: int, y0: int, x1: int, y1: int) -> None:
    h, w = class_map.shape
    class_map[max(y0, 0) : min(y1, h), max(x0, 0) : min(x1, w)] = cls


def render_wall_grid(spec: SynthSpec, rng: np.random.Generator, structure_px: int):
    """Paint the jittered wall grid; returns (class_map, xs, ys, wall rectangles)."""
    class_map = np.zeros((spec.height, spec.width), dtype=np.uint8)
    margin = 40 + structure_px
    xs = _grid_lines(rng, spec.width, margin, spec.cell_px)
    ys = _grid_lines(rng, spec.height, margin, spec.cell_px)
    walls = []
    if len(xs) < 2 or len(ys) < 2:
        return class_map, xs, ys, walls
    y_lo, y_hi = _stroke(ys[0], structure_px)[0], _stroke(ys[-1], structure_px)[1]
    x_lo, x_hi = _stroke(xs[0], structure_px)[0], _stroke(xs[-1], structure_px)[1]
    for x in xs:
        a, b = _stroke(x, structure_px)
        walls.append((a, y_lo, b, y_hi))
    for y in ys:
        a, b = _stroke(y, structure_px)
        walls.append((x_lo, a, x_hi, b))
    for r in walls:
        _paint(class_map, STRUCTURE, *r)
    return class_map, xs, ys, walls


@dataclass
class _Candidate:
    horizontal: bool
    wall: int  # wall centre coordinate (y for horizontal walls)
    side: int  # +1: room below/right of the wall, -1: above/left
    lo: int  # segment span between perpendicular wall centres
    hi: int


def _candidates(xs: list[int], ys: list[int]) -> list[_Candidate]:
    out = []
    for j, y in enumerate(ys):
        for i in range(len(xs) - 1):
            for side in (-1, 1):
                if (side < 0 and j == 0) or (side > 0 and j == len(ys) - 1):
                    continue
                out.append(_Candidate(True, y, side, xs[i], xs[i + 1]))
    for i, x in enumerate(xs):
        for j in range(len(ys) - 1):
            for side in (-1, 1):
                if (side < 0 and i == 0) or (side > 0 and i == len(xs) - 1):
                    continue
                out.append(_Candidate(False, x, side, ys[j], ys[j + 1]))
    return out


def _keepout(box: BoundingBox) -> BoundingBox:
    return box.dilate(0.1 * box.width + 20, 0.1 * box.height + 20)


def _place_region(
    rng: np.random.Generator,
    cand: _Candidate,
    spec: SynthSpec,
    structure_px: int,
) -> tuple[tuple[int, int, int, int], int, int] | None:
    """Primary stroke rectangle for a candidate wall segment, or None if it cannot fit."""
    det_dilation = 3 * spec.px_range("structure")[1]
    tp = mm_to_px(rng.uniform(*spec.primary_range), spec.dpi)
    half = structure_px - structure_px // 2
    seg = cand.hi - cand.lo - 2 * half
    along = det_dilation + int(0.06 * seg) + 20 + int(rng.integers(0, 41))
    length = seg - 2 * along
    if length < 120:
        return None
    gap = det_dilation + 30 + int(rng.integers(0, 41))
    start = cand.lo + half + along
    wall_a, wall_b = _stroke(cand.wall, structure_px)
    if cand.side > 0:
        p0 = wall_b + gap
    else:
        p0 = wall_a - gap - tp
    if cand.horizontal:
        rect = (start, p0, start + length, p0 + tp)
    else:
        rect = (p0, start, p0 + tp, start + length)
    return rect, tp, length


def _aux_rect(rng: np.random.Generator, primary: tuple[int, int, int, int], horizontal: bool, ta: int, length: int):
    frac = rng.uniform(0.5, 0.9)
    a_len = max(20, int(length * frac))
    shift = int(rng.integers(0, length - a_len + 1))
    gap = int(rng.integers(4, 9))
    side = 1 if rng.random() < 0.5 else -1
    x0, y0, x1, y1 = primary
    if horizontal:
        ya = y1 + gap if side > 0 else y0 - gap - ta
        return (x0 + shift, ya, x0 + shift + a_len, ya + ta)
    xa = x1 + gap if side > 0 else x0 - gap - ta
    return (xa, y0 + shift, xa + ta, y0 + shift + a_len)


def _flags_for(rng: np.random.Generator, condition: str, n: int) -> list[bool]:
    if condition == "present":
        return [True] * n
    if condition == "missing":
        return [False] * n
    mask = int(rng.integers(1, 2**n - 1))
    return [bool(mask >> k & 1) for k in range(n)]


def render_blueprint(spec: SynthSpec, image_index: int) -> Blueprint:
    rng = np.random.default_rng([spec.seed, image_index])
    condition = image_condition(spec, image_index)
    structure_px = mm_to_px(rng.uniform(*spec.structure_mm), spec.dpi)
    class_map, xs, ys, walls = render_wall_grid(spec, rng, structure_px)

    lo, hi = spec.regions_per_image
    wanted = int(rng.integers(lo, hi + 1))
    if condition == "partially_missing":
        wanted = max(wanted, 2)

    cands = _candidates(xs, ys)
    order = rng.permutation(len(cands)) if cands else []
    placed: list[tuple[tuple[int, int, int, int], int, bool, BoundingBox]] = []
    keepouts: list[BoundingBox] = []
    for ci in order:
        if len(placed) == wanted:
            break
        cand = cands[ci]
        fit = _place_region(rng, cand, spec, structure_px)
        if fit is None:
            continue
        rect, _, length = fit
        box = BoundingBox(*map(float, rect)).dilate(3 * structure_px)
        if box.x_min < 0 or box.y_min < 0 or box.x_max > spec.width or box.y_max > spec.height:
            continue
        ko = _keepout(box)
        if any(ko.intersection(other) > 0 for other in keepouts):
            continue
        placed.append((rect, length, cand.horizontal, box))
        keepouts.append(ko)

    if not placed:
        raise ValueError(f"canvas {spec.width}x{spec.height} is too small to fit an insulation region")
    if condition == "partially_missing" and len(placed) < 2:
        raise ValueError("canvas too small to fit the two regions a partially_missing image needs")

    flags = _flags_for(rng, condition, len(placed))
    regions = []
    for (rect, length, horizontal, box), flag in zip(placed, flags):
        _paint(class_map, PRIMARY, *rect)
        if flag:
            ta = mm_to_px(rng.uniform(*spec.auxiliary_range), spec.dpi)
            _paint(class_map, AUXILIARY, *_aux_rect(rng, rect, horizontal, ta, length))
        regions.append(GroundTruthRegion(box, flag))

    image = np.where(class_map > 0, INK, BLANK).astype(np.uint8)
    return Blueprint(f"bp_{image_index:05d}", image, class_map, regions, condition, structure_px, walls)


def generate_blueprint(spec: SynthSpec, image_index: int) -> tuple[AnnotatedImage, list[GroundTruthRegion]]:
    bp = render_blueprint(spec, image_index)
    boxes = [to_normalized(r.box, spec.width, spec.height) for r in bp.regions]
    flags = [r.has_auxiliary for r in bp.regions]
    return AnnotatedImage(bp.image_id, bp.image, boxes, bp.condition, None, flags), bp.regions


def _write_one(args: tuple[SynthSpec, int, str]) -> tuple[str, str]:
    spec, index, root = args
    out = Path(root)
    img, regions = generate_blueprint(spec, index)
    try:
        save_png(img.image, out / "images" / f"{img.image_id}.png")
        (out / "labels" / f"{img.image_id}.txt").write_text(write_detection_label(img.boxes))
        (out / "regions" / f"{img.image_id}.regions.json").write_text(
            write_regions_sidecar([r.box for r in regions], [r.has_auxiliary for r in regions])
        )
    except OSError as exc:
        raise OSError(f"failed writing {img.image_id} under {out}: {exc}") from exc
    return img.image_id, img.condition


def generate_dataset(spec: SynthSpec, count: int, root: str | Path, jobs: int = 1) -> DatasetManifest:
    """Write ``count`` blueprints as an unsplit detection pool.

    Layout: ``images/``, ``labels/``, ``regions/`` (ground-truth sidecars),
    ``data.yaml`` and ``manifest.json``. Output bytes do not depend on ``jobs``.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    root = Path(root)
    for sub in ("images", "labels", "regions"):
        try:
            (root / sub).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create {root / sub}: {exc}") from exc
    work = [(spec, i, str(root)) for i in range(count)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_write_one, work, chunksize=4))
    else:
        results = [_write_one(w) for w in work]

    manifest = DatasetManifest(
        [ManifestEntry(image_id, None, "detection", None, cond) for image_id, cond in results]
    )
    (root / "data.yaml").write_text(write_descriptor(root, {s: "images" for s in ("train", "val", "test")}))
    manifest.save(root / "manifest.json")
    (root / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return manifest

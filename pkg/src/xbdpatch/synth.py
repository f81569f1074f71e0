"""Deterministic synthetic corpora in the xBD directory layout.

Scenes are blocky colour fields with axis-aligned rectangular buildings.
Every pixel that is not inside a planted black region has all channels
above the black level, so any empty pixel in a patch comes either from a
black region or from padding.

Besides ``train/`` and ``test/`` the output directory holds
``ground_truth.jsonl``: a ``summary`` line with planted class counts,
followed by one ``scene`` line (split, black regions) and one ``building``
line (damage, centroid, bbox) per planted item.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from .geom import PolygonRing
from .labels import BuildingAnnotation, DamageClass, SceneLabels, TRAINABLE_CLASSES, serialize_scene

GROUND_TRUTH_NAME = "ground_truth.jsonl"
# Label counts of the full xBD corpus, usable as class weights.
XBD_CLASS_COUNTS = (313033, 36860, 29904, 31560)
XBD_UNCLASSIFIED_COUNT = 14011

CLASS_COLORS = {
    DamageClass.NO_DAMAGE: (60, 170, 60),
    DamageClass.MINOR_DAMAGE: (210, 200, 60),
    DamageClass.MAJOR_DAMAGE: (230, 120, 40),
    DamageClass.DESTROYED: (190, 30, 40),
    DamageClass.UNCLASSIFIED: (120, 120, 210),
}
_CLASS_ORDER = (*TRAINABLE_CLASSES, DamageClass.UNCLASSIFIED)


@dataclass(frozen=True)
class FixtureSpec:
    n_scenes: int = 20
    image_size: int = 512
    buildings_per_scene: Tuple[int, int] = (0, 6)
    class_weights: Tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    unclassified_weight: float = 0.0
    black_region_fraction: float = 0.0
    test_fraction: float = 0.25
    building_size: Tuple[int, int] = (12, 40)
    seed: int = 0

    def __post_init__(self):
        weights = (*self.class_weights, self.unclassified_weight)
        if len(self.class_weights) != 4 or any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValueError("class weights must be 4 non-negative values with a positive total")
        lo, hi = self.buildings_per_scene
        if lo < 0 or hi < lo:
            raise ValueError("buildings_per_scene must be a (lo, hi) range with 0 <= lo <= hi")
        if self.n_scenes < 0 or self.image_size < 1:
            raise ValueError("n_scenes must be >= 0 and image_size >= 1")
        if not 0.0 <= self.black_region_fraction <= 1.0:
            raise ValueError("black_region_fraction must lie in [0, 1]")
        if not 0.0 <= self.test_fraction <= 1.0:
            raise ValueError("test_fraction must lie in [0, 1]")


def apportion(total: int, weights: Sequence[float]) -> List[int]:
    """Largest-remainder split of ``total`` proportional to ``weights``."""
    fw = [Fraction(repr(float(w))) for w in weights]
    s = sum(fw)
    quotas = [total * w / s for w in fw]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(fw)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:total - sum(counts)]:
        counts[i] += 1
    return counts


def scene_name(index: int) -> str:
    return f"synthetic-event_{index:08d}_post_disaster"


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    cells = 8
    block = -(-size // cells)
    coarse = rng.integers(40, 221, size=(cells, cells, 3), dtype=np.uint8)
    img = np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)
    return np.ascontiguousarray(img[:size, :size])


def generate(spec: FixtureSpec, out_dir) -> dict:
    """Write a corpus plus ground-truth sidecar; returns the summary record."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed & 0xFFFFFFFFFFFFFFFF, 0x51])))
    lo, hi = spec.buildings_per_scene
    per_scene = master.integers(lo, hi + 1, size=spec.n_scenes) if spec.n_scenes else np.zeros(0, dtype=np.int64)
    total = int(per_scene.sum())
    class_counts = apportion(total, (*spec.class_weights, spec.unclassified_weight))
    labels = np.repeat(np.arange(len(_CLASS_ORDER)), class_counts)
    labels = master.permutation(labels)
    n_test = math.floor(spec.n_scenes * Fraction(repr(float(spec.test_fraction))))
    test_scenes = set(master.permutation(spec.n_scenes)[:n_test].tolist())

    for split in ("train", "test"):
        (out_dir / split / "images").mkdir(parents=True, exist_ok=True)
        (out_dir / split / "labels").mkdir(parents=True, exist_ok=True)

    size = spec.image_size
    bmin = max(1, min(spec.building_size[0], size))
    bmax = max(bmin, min(spec.building_size[1], size))
    strip = round(spec.black_region_fraction * size)
    sidecar = []
    cursor = 0
    for i in range(spec.n_scenes):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed & 0xFFFFFFFFFFFFFFFF, 0x5CE, i])))
        sid = scene_name(i)
        split = "test" if i in test_scenes else "train"
        img = _background(rng, size)
        black = []
        if strip:
            img[:, :strip] = 0
            black.append([0, 0, strip, size])
        annotations, buildings = [], []
        for j in range(int(per_scene[i])):
            damage = _CLASS_ORDER[int(labels[cursor])]
            cursor += 1
            w, h = (int(v) for v in rng.integers(bmin, bmax + 1, size=2))
            x0 = int(rng.integers(0, size - w + 1))
            y0 = int(rng.integers(0, size - h + 1))
            img[y0:y0 + h, x0:x0 + w] = CLASS_COLORS[damage]
            bid = f"bldg-{j:04d}"
            ring = PolygonRing(((x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)))
            annotations.append(BuildingAnnotation(bid, ring, damage))
            buildings.append({"kind": "building", "scene_id": sid, "building_id": bid,
                              "damage": damage.subtype, "centroid": [x0 + w / 2, y0 + h / 2],
                              "bbox": [x0, y0, x0 + w, y0 + h]})
        base = out_dir / split
        Image.fromarray(img).save(base / "images" / f"{sid}.png", format="PNG")
        scene = SceneLabels(sid, base / "images" / f"{sid}.png", annotations, split)
        with open(base / "labels" / f"{sid}.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(serialize_scene(scene), fh, indent=1)
            fh.write("\n")
        sidecar.append({"kind": "scene", "scene_id": sid, "split": split, "black_regions": black})
        sidecar.extend(buildings)

    summary = {
        "kind": "summary",
        "spec": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()},
        "n_scenes": spec.n_scenes,
        "n_test_scenes": n_test,
        "class_counts": {c.subtype: n for c, n in zip(_CLASS_ORDER, class_counts)},
        "total": total,
    }
    with open(out_dir / GROUND_TRUTH_NAME, "w", encoding="utf-8", newline="\n") as fh:
        for rec in [summary, *sidecar]:
            fh.write(json.dumps(rec) + "\n")
    return summary


def read_ground_truth(path) -> List[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / GROUND_TRUTH_NAME
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]

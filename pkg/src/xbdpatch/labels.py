"""xBD-style label ingestion and the four-class damage label space.

Corpus layout::

    <root>/[<split>/]images/<scene_id>.png
    <root>/[<split>/]labels/<scene_id>.json

``<split>`` is ``train`` or ``test`` (any other directory name is treated as
training data, e.g. ``tier3``). Scene ids ending in ``_pre_disaster`` are
indexed but flagged so the sampler can skip them.

Each label file is a JSON document of the form::

    {"metadata": {"img_name": "<scene_id>.png", ...},
     "features": {"lng_lat": [...],
                  "xy": [{"wkt": "POLYGON ((...))",
                          "properties": {"feature_type": "building",
                                         "subtype": "minor-damage",
                                         "uid": "..."}}]}}

Only the pixel-space ``xy`` list is read.
"""

from __future__ import annotations

import enum
import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from .errors import DataError, LabelParseError
from .geom import PolygonRing, parse_wkt_polygon, to_wkt

log = logging.getLogger(__name__)


class DamageClass(enum.IntEnum):
    NO_DAMAGE = 0
    MINOR_DAMAGE = 1
    MAJOR_DAMAGE = 2
    DESTROYED = 3
    UNCLASSIFIED = -1

    @property
    def trainable(self) -> bool:
        return self is not DamageClass.UNCLASSIFIED

    @property
    def subtype(self) -> str:
        return _SUBTYPE_NAMES[self]


TRAINABLE_CLASSES = (
    DamageClass.NO_DAMAGE,
    DamageClass.MINOR_DAMAGE,
    DamageClass.MAJOR_DAMAGE,
    DamageClass.DESTROYED,
)
NUM_CLASSES = len(TRAINABLE_CLASSES)

_SUBTYPE_NAMES = {
    DamageClass.NO_DAMAGE: "no-damage",
    DamageClass.MINOR_DAMAGE: "minor-damage",
    DamageClass.MAJOR_DAMAGE: "major-damage",
    DamageClass.DESTROYED: "destroyed",
    DamageClass.UNCLASSIFIED: "un-classified",
}
_SUBTYPE_LOOKUP = {
    "no-damage": DamageClass.NO_DAMAGE,
    "minor-damage": DamageClass.MINOR_DAMAGE,
    "major-damage": DamageClass.MAJOR_DAMAGE,
    "destroyed": DamageClass.DESTROYED,
    "un-classified": DamageClass.UNCLASSIFIED,
    "unclassified": DamageClass.UNCLASSIFIED,
}


def normalize_subtype(text: str) -> str:
    return "-".join(text.strip().lower().replace("_", " ").replace("-", " ").split())


def damage_from_subtype(subtype: Optional[str]) -> DamageClass:
    """Map a subtype string to a class; missing or unknown means unclassified."""
    if subtype is None:
        return DamageClass.UNCLASSIFIED
    return _SUBTYPE_LOOKUP.get(normalize_subtype(subtype), DamageClass.UNCLASSIFIED)


@dataclass(frozen=True)
class BuildingAnnotation:
    building_id: str
    ring: PolygonRing
    damage: DamageClass


@dataclass
class SceneLabels:
    scene_id: str
    image_path: Path
    annotations: List[BuildingAnnotation]
    split_tag: str = "train"
    is_pre_disaster: bool = False
    skipped_features: int = 0


def _split_tag_for(label_path: Path) -> str:
    parent = label_path.parent.parent.name.lower()
    return "test" if parent == "test" else "train"


def parse_label_file(path, split_tag: Optional[str] = None) -> SceneLabels:
    path = Path(path)
    try:
        doc = json.loads(path.read_bytes())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LabelParseError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise LabelParseError(f"{path}: top level must be an object")

    feats = doc.get("features", [])
    if isinstance(feats, dict):
        feats = feats.get("xy", [])
    if not isinstance(feats, list):
        raise LabelParseError(f"{path}: 'features' must be a list or hold an 'xy' list")

    scene_id = path.stem
    annotations: List[BuildingAnnotation] = []
    seen = set()
    skipped = 0
    for idx, feat in enumerate(feats):
        if not isinstance(feat, dict):
            raise LabelParseError(f"{path}: feature {idx} is not an object")
        props = feat.get("properties") or {}
        building_id = str(props.get("uid", f"b{idx:05d}"))
        if building_id in seen:
            raise LabelParseError(f"{path}: duplicate building id {building_id!r}")
        seen.add(building_id)
        try:
            ring = parse_wkt_polygon(feat.get("wkt", ""))
        except DataError as exc:
            log.warning("%s: skipping feature %s: %s", path.name, building_id, exc)
            skipped += 1
            continue
        annotations.append(BuildingAnnotation(building_id, ring, damage_from_subtype(props.get("subtype"))))

    image_dir = path.parent.parent / "images"
    return SceneLabels(
        scene_id=scene_id,
        image_path=image_dir / f"{scene_id}.png",
        annotations=annotations,
        split_tag=split_tag or _split_tag_for(path),
        is_pre_disaster=scene_id.endswith("_pre_disaster"),
        skipped_features=skipped,
    )


def discover_label_files(root) -> List[Path]:
    """All ``labels/*.json`` files under ``root``, sorted by scene id."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    found = [p for d in root.rglob("labels") if d.is_dir() for p in d.glob("*.json")]
    return sorted(found, key=lambda p: (p.stem, str(p)))


def scan_corpus(root, include_pre: bool = False, threads: Optional[int] = None) -> List[SceneLabels]:
    files = discover_label_files(root)
    if not include_pre:
        files = [p for p in files if not p.stem.endswith("_pre_disaster")]
    if threads == 1 or len(files) < 64:
        return [parse_label_file(p) for p in files]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(parse_label_file, files))


def trainable_buildings(scene: SceneLabels) -> List[BuildingAnnotation]:
    return [a for a in scene.annotations if a.damage.trainable]


def class_histogram(scenes: Iterable[SceneLabels]) -> Dict[DamageClass, int]:
    counts = Counter({cls: 0 for cls in DamageClass})
    for scene in scenes:
        counts.update(a.damage for a in scene.annotations)
    return {cls: counts[cls] for cls in (*TRAINABLE_CLASSES, DamageClass.UNCLASSIFIED)}


def histogram_total(hist: Dict[DamageClass, int]) -> int:
    return sum(hist.values())


def empty_scene_fraction(scenes: List[SceneLabels]) -> float:
    """Fraction of scenes with no trainable building (they yield a skip)."""
    if not scenes:
        return 0.0
    return sum(1 for s in scenes if not trainable_buildings(s)) / len(scenes)


def format_histogram(hist: Dict[DamageClass, int]) -> str:
    total = histogram_total(hist)
    lines = [f"{'Class':<16}{'Count':>12}"]
    for cls, n in hist.items():
        name = "Unclassified" if cls is DamageClass.UNCLASSIFIED else cls.subtype.replace("-", " ").title()
        lines.append(f"{name:<16}{n:>12,}")
    lines.append(f"{'Total':<16}{total:>12,}")
    return "\n".join(lines)


def serialize_scene(scene: SceneLabels) -> dict:
    """Inverse of :func:`parse_label_file` for the fields it reads."""
    xy = []
    for a in scene.annotations:
        props = {"feature_type": "building", "subtype": a.damage.subtype, "uid": a.building_id}
        xy.append({"properties": props, "wkt": to_wkt(a.ring)})
    return {
        "metadata": {"img_name": f"{scene.scene_id}.png"},
        "features": {"lng_lat": [], "xy": xy},
    }

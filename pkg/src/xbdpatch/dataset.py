"""Corpus-to-patch dataset building: sampling, batching, splits and manifests.

Manifest format (``manifest.jsonl``, UTF-8, LF line endings). One JSON object
per line, keys in this order::

    {"kind": "patch", "sample_id", "path", "scene_id", "building_id",
     "label", "empty_ratio", "fallback", "split", "x1", "y1", "size",
     "attempts"}

``path`` is relative to the manifest's directory. Entries are sorted by
``(scene_id, building_id, sample_id)``. The last line is a single
``{"kind": "stats", ...}`` footer with the class histogram, fallback rate and
mean empty ratio of the entries above it.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import SchemaError
from .labels import NUM_CLASSES, BuildingAnnotation, SceneLabels, trainable_buildings
from .patcher import PatchConfig, PatchRecord, building_rng, extract_patch, stable_hash
from .raster import EmptyIndex, load_image

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
PATCH_DIR = "patches"
SPLITS = ("train", "val", "test")
_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0


@dataclass(frozen=True)
class SampleManifestEntry:
    sample_id: str
    path: str
    scene_id: str
    building_id: str
    label: int
    empty_ratio: float
    fallback: bool
    split: str
    x1: int = 0
    y1: int = 0
    size: int = 0
    attempts: int = 0

    def to_json(self) -> str:
        return json.dumps({"kind": "patch", **asdict(self)})

    @property
    def sort_key(self):
        return self.scene_id, self.building_id, self.sample_id


def _scene_rng(seed: int, scene_id: str, pass_index: int) -> np.random.Generator:
    entropy = [seed & 0xFFFFFFFFFFFFFFFF, stable_hash(scene_id), stable_hash("building-choice"), pass_index]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def sample_building(scene: SceneLabels, rng: np.random.Generator) -> Optional[BuildingAnnotation]:
    """Uniform pick among trainable buildings, or ``None`` when there are none."""
    candidates = trainable_buildings(scene)
    if not candidates:
        return None
    return candidates[int(rng.integers(len(candidates)))]


def assemble_batches(records: Iterable, batch_size: int) -> Iterator[list]:
    """Drop ``None`` entries, then group into lists of ``batch_size``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    batch = []
    for rec in records:
        if rec is None:
            continue
        batch.append(rec)
        if len(batch) == batch_size:
            yield batch
            batch = []
    if batch:
        yield batch


def split_count(n: int, train_fraction: float) -> int:
    return math.floor(n * Fraction(repr(float(train_fraction))))


def split_scenes(scenes: Sequence, spec: SplitSpec = SplitSpec()) -> Tuple[list, list]:
    """Seeded shuffle, first ``floor(n * train_fraction)`` go to train."""
    if not scenes:
        raise ValueError("cannot split an empty scene list")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed & 0xFFFFFFFFFFFFFFFF, 0x5B117])))
    order = rng.permutation(len(scenes))
    n_train = split_count(len(scenes), spec.train_fraction)
    return [scenes[i] for i in order[:n_train]], [scenes[i] for i in order[n_train:]]


def _safe(text: str) -> str:
    return _UNSAFE.sub("_", text)


def make_sample_id(scene_id: str, building_id: str, pass_index: Optional[int] = None) -> str:
    sid = f"{_safe(scene_id)}__{_safe(building_id)}"
    return sid if pass_index is None else f"{sid}__p{pass_index}"


def extract_scene(
    scene: SceneLabels,
    cfg: PatchConfig,
    per_building: bool = False,
    passes: int = 1,
    fixed_building: bool = False,
) -> List[Tuple[Optional[PatchRecord], int]]:
    """Patch records for one scene as ``(record_or_None, pass_index)`` pairs."""
    if per_building:
        chosen = [(b, 0) for b in trainable_buildings(scene)]
    else:
        chosen = []
        for p in range(passes):
            rng = _scene_rng(cfg.seed, scene.scene_id, 0 if fixed_building else p)
            chosen.append((sample_building(scene, rng), p))
    if not chosen:
        return [(None, 0)]
    if all(b is None for b, _ in chosen):
        return [(None, p) for _, p in chosen]

    raster = load_image(scene.image_path)
    index = EmptyIndex(raster)
    out = []
    for building, p in chosen:
        if building is None:
            out.append((None, p))
            continue
        rng = building_rng(cfg.seed, scene.scene_id, building.building_id)
        out.append((extract_patch(raster, building, cfg, rng, scene_id=scene.scene_id, index=index), p))
    return out


def extract_records(
    scenes: Sequence[SceneLabels],
    cfg: PatchConfig,
    per_building: bool = False,
    passes: int = 1,
    fixed_building: bool = False,
    threads: Optional[int] = None,
    include_pre: bool = False,
) -> Iterator[Tuple[SceneLabels, Optional[PatchRecord], int]]:
    """Stream records for every scene in input order; skipped scenes yield ``None``."""
    def work(scene):
        return scene, extract_scene(scene, cfg, per_building, passes, fixed_building)

    if not include_pre:
        scenes = [s for s in scenes if not s.is_pre_disaster]
    if threads == 1:
        results = map(work, scenes)
        for scene, recs in results:
            for rec, p in recs:
                yield scene, rec, p
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for scene, recs in pool.map(work, scenes):
            for rec, p in recs:
                yield scene, rec, p


def stats_footer(entries: Sequence[SampleManifestEntry]) -> dict:
    n = len(entries)
    counts = [0] * NUM_CLASSES
    split_counts = {s: 0 for s in SPLITS}
    for e in entries:
        counts[e.label] += 1
        split_counts[e.split] = split_counts.get(e.split, 0) + 1
    return {
        "kind": "stats",
        "n_patches": n,
        "class_counts": counts,
        "class_fractions": [c / n if n else 0.0 for c in counts],
        "split_counts": split_counts,
        "fallback_rate": sum(e.fallback for e in entries) / n if n else 0.0,
        "mean_empty_ratio": math.fsum(e.empty_ratio for e in entries) / n if n else 0.0,
    }


def write_manifest(entries: Iterable[SampleManifestEntry], path) -> dict:
    entries = sorted(entries, key=lambda e: e.sort_key)
    footer = stats_footer(entries)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(e.to_json() + "\n")
        fh.write(json.dumps(footer) + "\n")
    os.replace(tmp, path)
    return footer


def read_manifest(path) -> Tuple[List[SampleManifestEntry], Optional[dict]]:
    path = Path(path)
    entries, footer = [], None
    fields = list(SampleManifestEntry.__dataclass_fields__)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: invalid JSON ({exc.msg})", line=lineno) from None
            kind = obj.pop("kind", None) if isinstance(obj, dict) else None
            if kind == "stats":
                footer = obj
            elif kind == "patch":
                missing = [f for f in fields if f not in obj]
                if missing:
                    raise SchemaError(f"{path}: missing fields {missing}", line=lineno)
                entry = SampleManifestEntry(**{f: obj[f] for f in fields})
                if entry.label not in range(NUM_CLASSES) or entry.split not in SPLITS:
                    raise SchemaError(f"{path}: bad label or split in {entry.sample_id}", line=lineno)
                entries.append(entry)
            else:
                raise SchemaError(f"{path}: unknown record kind {kind!r}", line=lineno)
    return entries, footer


def emit_shards(
    stream: Iterable[Tuple[SceneLabels, Optional[PatchRecord], int]],
    out_dir,
    multi_pass: bool = False,
) -> Tuple[Path, dict]:
    """Write every record's pixels as PNG and the sorted manifest.

    PNGs go to disk under a temporary name as records arrive and are renamed
    once the manifest is committed.
    """
    out_dir = Path(out_dir)
    patch_dir = out_dir / PATCH_DIR
    patch_dir.mkdir(parents=True, exist_ok=True)
    entries, pending = [], []
    for scene, rec, p in stream:
        if rec is None:
            continue
        sid = make_sample_id(scene.scene_id, rec.building_id, p if multi_pass else None)
        rel = f"{PATCH_DIR}/{sid}.png"
        tmp = patch_dir / f".{sid}.png.part"
        Image.fromarray(rec.pixels).save(tmp, format="PNG")
        pending.append((tmp, out_dir / rel))
        entries.append(SampleManifestEntry(
            sample_id=sid,
            path=rel,
            scene_id=scene.scene_id,
            building_id=rec.building_id,
            label=int(rec.label),
            empty_ratio=rec.empty_ratio,
            fallback=rec.fallback_used,
            split="test" if scene.split_tag == "test" else "train",
            x1=rec.window.x1,
            y1=rec.window.y1,
            size=rec.window.size,
            attempts=rec.attempts_used,
        ))
    ids = [e.sample_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate sample ids; use multi_pass for repeated passes")
    for tmp, final in pending:
        os.replace(tmp, final)
    manifest = out_dir / MANIFEST_NAME
    footer = write_manifest(entries, manifest)
    return manifest, footer


def assign_validation(entries: Sequence[SampleManifestEntry], spec: SplitSpec) -> List[SampleManifestEntry]:
    """Re-partition the non-test entries into train/val at scene granularity."""
    scene_ids = sorted({e.scene_id for e in entries if e.split != "test"})
    if not scene_ids:
        return list(entries)
    train, _ = split_scenes(scene_ids, spec)
    train = set(train)
    out = []
    for e in entries:
        if e.split == "test":
            out.append(e)
        else:
            out.append(replace(e, split="train" if e.scene_id in train else "val"))
    return out


def load_patch(manifest_dir, entry: SampleManifestEntry) -> np.ndarray:
    with Image.open(Path(manifest_dir) / entry.path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def split_counts(entries: Sequence[SampleManifestEntry]) -> Dict[str, int]:
    out = {s: 0 for s in SPLITS}
    for e in entries:
        out[e.split] += 1
    return out

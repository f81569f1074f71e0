import json

import pytest

from xbdpatch import synth
from xbdpatch.errors import LabelParseError
from xbdpatch.labels import (
    DamageClass, class_histogram, damage_from_subtype, discover_label_files, empty_scene_fraction,
    histogram_total, parse_label_file, scan_corpus, serialize_scene, trainable_buildings,
)


def write_label(path, features, as_xy=True):
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"metadata": {"img_name": path.stem + ".png"},
           "features": {"lng_lat": [], "xy": features} if as_xy else features}
    path.write_text(json.dumps(doc))
    return path


def feat(uid, subtype=None, wkt="POLYGON ((0 0, 10 0, 10 10, 0 10, 0 0))"):
    props = {"feature_type": "building", "uid": uid}
    if subtype is not None:
        props["subtype"] = subtype
    return {"properties": props, "wkt": wkt}


def test_three_features_two_trainable(tmp_path):
    p = write_label(tmp_path / "train" / "labels" / "x_00000001_post_disaster.json",
                    [feat("a", "no-damage"), feat("b", "destroyed"), feat("c", "un-classified")])
    scene = parse_label_file(p)
    assert [a.damage for a in scene.annotations] == [
        DamageClass.NO_DAMAGE, DamageClass.DESTROYED, DamageClass.UNCLASSIFIED]
    assert len(trainable_buildings(scene)) == 2
    assert scene.split_tag == "train"
    assert scene.image_path == tmp_path / "train" / "images" / "x_00000001_post_disaster.png"


def test_zero_features(tmp_path):
    scene = parse_label_file(write_label(tmp_path / "labels" / "s.json", []))
    assert scene.annotations == []
    assert trainable_buildings(scene) == []


def test_missing_subtype_is_unclassified(tmp_path):
    scene = parse_label_file(write_label(tmp_path / "labels" / "s.json", [feat("a")]))
    assert scene.annotations[0].damage is DamageClass.UNCLASSIFIED


@pytest.mark.parametrize("text,expected", [
    ("minor-damage", DamageClass.MINOR_DAMAGE),
    ("Minor Damage", DamageClass.MINOR_DAMAGE),
    ("MAJOR_damage", DamageClass.MAJOR_DAMAGE),
    ("destroyed", DamageClass.DESTROYED),
    (" no-damage ", DamageClass.NO_DAMAGE),
    ("un-classified", DamageClass.UNCLASSIFIED),
    ("something-else", DamageClass.UNCLASSIFIED),
    (None, DamageClass.UNCLASSIFIED),
])
def test_subtype_normalisation(text, expected):
    assert damage_from_subtype(text) is expected


def test_bad_polygon_skipped_not_fatal(tmp_path):
    scene = parse_label_file(write_label(tmp_path / "labels" / "s.json", [
        feat("a", "no-damage"), feat("b", "destroyed", wkt="POLYGON ((0 0, 1 1))"),
        feat("c", "destroyed", wkt="MULTIPOLYGON (((0 0, 1 0, 1 1, 0 0)))")]))
    assert [a.building_id for a in scene.annotations] == ["a"]
    assert scene.skipped_features == 2


def test_malformed_document(tmp_path):
    p = tmp_path / "labels" / "bad.json"
    p.parent.mkdir()
    p.write_text("{not json")
    with pytest.raises(LabelParseError):
        parse_label_file(p)
    p.write_text(json.dumps({"features": {"xy": "nope"}}))
    with pytest.raises(LabelParseError):
        parse_label_file(p)


def test_duplicate_building_ids_rejected(tmp_path):
    with pytest.raises(LabelParseError):
        parse_label_file(write_label(tmp_path / "labels" / "s.json", [feat("a", "no-damage"), feat("a")]))


def test_trainable_preserves_order(tmp_path):
    subtypes = ["destroyed", "un-classified", "no-damage", "major-damage", "minor-damage"]
    scene = parse_label_file(write_label(tmp_path / "labels" / "s.json",
                                         [feat(str(i), s) for i, s in enumerate(subtypes)]))
    kept = trainable_buildings(scene)
    assert [a.building_id for a in kept] == ["0", "2", "3", "4"]
    unclassified = sum(not a.damage.trainable for a in scene.annotations)
    assert len(kept) + unclassified == len(scene.annotations)


def test_histogram_empty():
    hist = class_histogram([])
    assert all(v == 0 for v in hist.values())
    assert histogram_total(hist) == 0
    assert list(hist) == [DamageClass.NO_DAMAGE, DamageClass.MINOR_DAMAGE, DamageClass.MAJOR_DAMAGE,
                          DamageClass.DESTROYED, DamageClass.UNCLASSIFIED]


def test_histogram_matches_planted_counts(small_corpus):
    truth = synth.read_ground_truth(small_corpus)[0]
    hist = class_histogram(scan_corpus(small_corpus))
    assert {c.subtype: n for c, n in hist.items()} == truth["class_counts"]
    assert histogram_total(hist) == truth["total"]


def test_synth_label_files_round_trip(small_corpus):
    for path in discover_label_files(small_corpus):
        scene = parse_label_file(path)
        assert json.loads(path.read_text()) == serialize_scene(scene)
        assert parse_label_file(path) == scene


def test_split_tags_and_pre_disaster_indexing(tmp_path):
    write_label(tmp_path / "test" / "labels" / "e_00000001_post_disaster.json", [feat("a", "no-damage")])
    write_label(tmp_path / "train" / "labels" / "e_00000002_pre_disaster.json", [feat("a")])
    write_label(tmp_path / "tier3" / "labels" / "e_00000002_post_disaster.json", [feat("a", "destroyed")])
    default = scan_corpus(tmp_path)
    assert [(s.scene_id, s.split_tag) for s in default] == [
        ("e_00000001_post_disaster", "test"), ("e_00000002_post_disaster", "train")]
    everything = scan_corpus(tmp_path, include_pre=True)
    assert len(everything) == 3
    assert sum(s.is_pre_disaster for s in everything) == 1
    assert empty_scene_fraction(everything) == pytest.approx(1 / 3)


def test_parallel_scan_equals_serial(tmp_path):
    for i in range(80):
        write_label(tmp_path / "train" / "labels" / f"e_{i:08d}_post_disaster.json",
                    [feat("a", "no-damage"), feat("b", "minor damage")])
    assert scan_corpus(tmp_path, threads=4) == scan_corpus(tmp_path, threads=1)

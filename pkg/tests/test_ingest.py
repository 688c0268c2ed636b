import json

import pytest

from ltrkit.data import FULL_FRAME, LabelMap, ValidationError
from ltrkit.ingest import (
    DetectionParseError,
    SchemaError,
    merge,
    parse_detection_shards,
    parse_detections,
    parse_detections_obj,
    read_metadata,
)

LABELS = LabelMap(("domestic cow", "red deer", "horse"))


def md_file(images, cats=None):
    return {"images": images, "detection_categories": cats or {"1": "animal", "2": "person", "3": "vehicle"}}


def det(conf, bbox=(0.1, 0.1, 0.2, 0.2), cat="1"):
    return {"category": cat, "conf": conf, "bbox": list(bbox)}


def meta(ref, species, **kw):
    from ltrkit.ingest import MetadataEntry

    return MetadataEntry(ref, species, kw.get("site"), kw.get("timestamp"))


class TestParseDetections:
    def test_two_images_one_detection_each(self):
        df = parse_detections_obj(md_file([{"file": "a.jpg", "detections": [det(0.9)]},
                                           {"file": "b.jpg", "detections": [det(0.5)]}]))
        assert len(df.entries) == 2
        assert df.entries[0].detections[0].category == "animal"

    def test_empty_detections_kept(self):
        df = parse_detections_obj(md_file([{"file": "a.jpg", "detections": []}]))
        assert df.entries[0].detections == ()

    def test_failure_entry_kept(self):
        df = parse_detections_obj(md_file([{"file": "a.jpg", "failure": "Failure image access"}]))
        assert df.entries[0].detections == ()

    def test_absolute_bbox_converted(self):
        df = parse_detections_obj(md_file([{"file": "a.jpg", "width": 512, "height": 512,
                                            "detections": [det(0.9, (128, 128, 256, 256))]}]))
        assert df.entries[0].detections[0].bbox == (0.25, 0.25, 0.5, 0.5)

    def test_flat_layout(self):
        df = parse_detections_obj({"entries": [{"image_ref": "x", "detections": [det(0.3)]}]})
        assert df.by_image()["x"].detections[0].conf == 0.3

    @pytest.mark.parametrize("obj,field", [
        ({"foo": []}, "images"),
        (md_file([{"detections": []}]), "file"),
        (md_file([{"file": "a", "detections": [{"conf": 0.5, "bbox": [0, 0, 1, 1]}]}]), "category"),
        (md_file([{"file": "a"}]), "detections"),
    ])
    def test_missing_fields_named(self, obj, field):
        with pytest.raises(SchemaError, match=field):
            parse_detections_obj(obj)

    def test_duplicate_image(self):
        with pytest.raises(SchemaError, match="duplicate"):
            parse_detections_obj(md_file([{"file": "a", "detections": []}, {"file": "a", "detections": []}]))

    def test_malformed_json_reports_offset(self, tmp_path):
        p = tmp_path / "d.json"
        p.write_text('{"images": [ {"file": "a", ]}')
        with pytest.raises(DetectionParseError) as ei:
            parse_detections(p)
        assert ei.value.byte_offset == 27

    def test_shards_in_order(self, tmp_path):
        paths = []
        for i in range(4):
            p = tmp_path / f"s{i}.json"
            p.write_text(json.dumps(md_file([{"file": f"img{i}.jpg", "detections": [det(0.5)]}])))
            paths.append(p)
        refs = [e.image_ref for e in parse_detection_shards(paths, threads=4).entries]
        assert refs == ["img0.jpg", "img1.jpg", "img2.jpg", "img3.jpg"]
        assert refs == [e.image_ref for e in parse_detection_shards(paths, threads=1).entries]

    def test_shard_duplicate(self, tmp_path):
        for n in ("a", "b"):
            (tmp_path / f"{n}.json").write_text(json.dumps(md_file([{"file": "x", "detections": []}])))
        with pytest.raises(SchemaError, match="more than one shard"):
            parse_detection_shards([tmp_path / "a.json", tmp_path / "b.json"])


class TestMetadata:
    def test_csv_and_jsonl_agree(self, tmp_path):
        (tmp_path / "m.csv").write_text("image_ref,species_name,site,timestamp\na.jpg,horse,s1,2020-01-01 00:00:00\n")
        (tmp_path / "m.jsonl").write_text(json.dumps({"image_ref": "a.jpg", "species_name": "horse", "site": "s1",
                                                      "timestamp": "2020-01-01 00:00:00"}) + "\n")
        assert read_metadata(tmp_path / "m.csv") == read_metadata(tmp_path / "m.jsonl")

    def test_headerless_csv(self, tmp_path):
        (tmp_path / "m.csv").write_text("a.jpg,horse\n")
        assert read_metadata(tmp_path / "m.csv")[0].species_name == "horse"

    def test_missing_species_named(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"image_ref": "a.jpg"}\n')
        with pytest.raises(ValidationError, match="species_name"):
            read_metadata(tmp_path / "m.jsonl")


class TestMerge:
    def test_highest_confidence_detection(self):
        df = parse_detections_obj(md_file([{"file": "a", "detections": [det(0.4, (0, 0, 0.1, 0.1)),
                                                                          det(0.9, (0.2, 0.2, 0.3, 0.3))]}]))
        res = merge(df, [meta("a", "horse")], LABELS)
        assert res.records[0].conf == 0.9 and res.records[0].bbox == (0.2, 0.2, 0.3, 0.3)

    def test_conf_tie_keeps_first(self):
        df = parse_detections_obj(md_file([{"file": "a", "detections": [det(0.7, (0, 0, 0.1, 0.1)),
                                                                          det(0.7, (0.5, 0.5, 0.1, 0.1))]}]))
        assert merge(df, [meta("a", "horse")], LABELS).records[0].bbox == (0, 0, 0.1, 0.1)

    def test_vehicle_excluded_and_summarized(self):
        res = merge(parse_detections_obj(md_file([])), [meta("a", "vehicle"), meta("b", "Empty"),
                                                        meta("c", "horse")], LABELS)
        assert len(res.records) == 1
        assert res.excluded == {"vehicle": 1, "Empty": 1}
        assert "excluded vehicle: 1" in res.summary_lines()

    def test_metadata_only_full_frame(self):
        res = merge(parse_detections_obj(md_file([])), [meta("a", "red deer")], LABELS)
        assert res.records[0].bbox == FULL_FRAME and res.records[0].conf == 0.0

    def test_species_from_metadata_not_detector(self):
        df = parse_detections_obj(md_file([{"file": "a", "detections": [det(0.9, cat="2")]}]))
        assert merge(df, [meta("a", "horse")], LABELS).records[0].label == 2

    def test_unknown_species_rejected(self):
        res = merge(parse_detections_obj(md_file([])), [meta("a", "unicorn"), meta("b", "horse")], LABELS)
        assert res.rejects[0]["species_name"] == "unicorn"
        assert res.reject_ratio() == pytest.approx(0.5)

    def test_invalid_bbox_rejected(self):
        df = parse_detections_obj(md_file([{"file": "a", "detections": [det(0.9, (0.8, 0.8, 0.5, 0.5))]}]))
        res = merge(df, [meta("a", "horse")], LABELS)
        assert not res.records and "bbox exceeds frame" in res.rejects[0]["reason"]

    def test_min_conf_filters(self):
        df = parse_detections_obj(md_file([{"file": "a", "detections": [det(0.05)]}]))
        res = merge(df, [meta("a", "horse")], LABELS, min_conf=0.1)
        assert res.records[0].bbox == FULL_FRAME

    def test_metadata_order(self):
        df = parse_detections_obj(md_file([{"file": r, "detections": [det(0.5)]} for r in "abc"]))
        res = merge(df, [meta(r, "horse") for r in "cab"], LABELS)
        assert [r.image_ref for r in res.records] == ["c", "a", "b"]

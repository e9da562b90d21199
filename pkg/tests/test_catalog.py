import json
import struct

import numpy as np
import pytest

from vectorwatch.catalog import (CorruptContainer, DatasetManifest, ImageRef,
                                 LoadResult, ManifestEntry, Partition,
                                 Prediction, ReviewDecision,
                                 ReviewDecisionKind, SpecimenRecord,
                                 TooFewSpecimens, append_record,
                                 checkpoint_read, checkpoint_write, fmap_read,
                                 fmap_write, load_records, manifest_read_csv,
                                 manifest_read_json, manifest_write_csv,
                                 manifest_write_json, split,
                                 validate_partitions)
from vectorwatch.taxonomy import Genus, TaxonLabel


class TestFmap:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        entries = {
            "a/W": rng.standard_normal((2, 2)).astype(np.float32),
            "a/b": rng.standard_normal(7).astype(np.float32),
            "blob": rng.integers(0, 256, 33).astype(np.uint8),
        }
        path = tmp_path / "t.fmap"
        fmap_write(entries, path)
        back = fmap_read(path)
        assert set(back) == set(entries)
        for k in entries:
            assert back[k].dtype == entries[k].dtype
            assert np.array_equal(back[k], entries[k])
        # writing the same entries twice produces identical bytes
        path2 = tmp_path / "t2.fmap"
        fmap_write(entries, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_float64_stored_as_f32(self, tmp_path):
        path = tmp_path / "f.fmap"
        fmap_write({"x": np.array([1.5, 2.5])}, path)
        assert fmap_read(path)["x"].dtype == np.dtype("<f4")

    def test_empty_container(self, tmp_path):
        path = tmp_path / "e.fmap"
        fmap_write({}, path)
        assert fmap_read(path) == {}

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.fmap"
        fmap_write({"x": np.ones((4, 4), np.float32)}, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(CorruptContainer):
            fmap_read(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "b.fmap"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(CorruptContainer):
            fmap_read(path)

    def test_overlapping_entries_rejected(self, tmp_path):
        # hand-built container whose two entries share payload bytes
        def entry(name, offset):
            nb = name.encode()
            return (struct.pack("<H", len(nb)) + nb
                    + struct.pack("<BB", 0, 1) + struct.pack("<I", 2)
                    + struct.pack("<Q", offset))

        payload = struct.pack("<4f", 1, 2, 3, 4)[:16]
        raw = (b"FMAP" + struct.pack("<HI", 1, 2)
               + entry("a", 0) + entry("b", 4)
               + struct.pack("<Q", 16) + payload)
        path = tmp_path / "o.fmap"
        path.write_bytes(raw)
        with pytest.raises(CorruptContainer):
            fmap_read(path)

    def test_rejects_bad_names_and_dtypes(self, tmp_path):
        with pytest.raises(ValueError):
            fmap_write({"": np.ones(2, np.float32)}, tmp_path / "x.fmap")
        with pytest.raises(ValueError):
            fmap_write({"x": np.ones(2, np.int32)}, tmp_path / "x.fmap")

    def test_checkpoint_metadata(self, tmp_path):
        path = tmp_path / "c.fmap"
        params = {"w": np.ones((2, 3), np.float32)}
        checkpoint_write(path, params, {"head_name": "genus", "epoch": 4, "seed": 9})
        back, meta = checkpoint_read(path)
        assert meta == {"head_name": "genus", "epoch": 4, "seed": 9}
        assert np.array_equal(back["w"], params["w"])


def _record(sid="s1", n_images=1):
    return SpecimenRecord(
        specimen_id=sid,
        trap_id="trap-9",
        capture_date="2026-06-01",
        location=(27.95, -82.46),
        images=tuple(ImageRef(f"{sid}-img{i}", f"/x/{sid}-{i}.png", "pixel-3",
                              "white", f"o{i}") for i in range(n_images)),
        label=TaxonLabel(Genus.AEDES, "aegypti"),
    )


class TestRecordStore:
    def test_append_then_load(self, tmp_path):
        store = tmp_path / "records.jsonl"
        rec = _record()
        append_record(store, rec)
        result = load_records(store)
        assert result.malformed == []
        assert result.records["s1"] == rec

    def test_later_decision_supersedes_history_retained(self, tmp_path):
        store = tmp_path / "records.jsonl"
        rec = _record()
        d1 = ReviewDecision(ReviewDecisionKind.CONFIRM, "alice", "2026-06-02T10:00:00")
        d2 = ReviewDecision(ReviewDecisionKind.OVERRIDE, "bob", "2026-06-03T09:00:00",
                            TaxonLabel(Genus.ANOPHELES, "quadrimaculatus"))
        append_record(store, rec.with_decision(d1))
        append_record(store, rec.with_decision(d1).with_decision(d2))
        loaded = load_records(store).records["s1"]
        assert len(loaded.review_history) == 2
        assert loaded.active_review == d2
        assert loaded.effective_label == TaxonLabel(Genus.ANOPHELES, "quadrimaculatus")

    def test_malformed_middle_line_isolated(self, tmp_path):
        store = tmp_path / "records.jsonl"
        append_record(store, _record("s1"))
        with open(store, "ab") as fh:
            fh.write(b"{this is not json}\n")
        append_record(store, _record("s2"))
        result = load_records(store)
        assert {r for r in result.records} == {"s1", "s2"}
        assert len(result.malformed) == 1
        assert result.malformed[0].line_number == 2

    def test_torn_final_line_reported(self, tmp_path):
        store = tmp_path / "records.jsonl"
        append_record(store, _record("s1"))
        line = json.dumps(_record("s2").as_dict()).encode()
        with open(store, "ab") as fh:
            fh.write(line[: len(line) // 2])  # simulated crash mid-write
        result = load_records(store)
        assert list(result.records) == ["s1"]
        assert result.malformed[0].line_number == 2

    def test_append_only_prefix_stability(self, tmp_path):
        store = tmp_path / "records.jsonl"
        append_record(store, _record("s1"))
        before = store.read_bytes()
        append_record(store, _record("s2"))
        after = store.read_bytes()
        assert after[: len(before)] == before

    def test_missing_store_loads_empty(self, tmp_path):
        result = load_records(tmp_path / "absent.jsonl")
        assert result == LoadResult({}, [])

    def test_duplicate_image_ids_rejected(self):
        with pytest.raises(ValueError):
            SpecimenRecord("s", images=(ImageRef("i", "p"), ImageRef("i", "q")))

    def test_override_requires_label(self):
        with pytest.raises(ValueError):
            ReviewDecision(ReviewDecisionKind.OVERRIDE, "x", "2026-01-01")


def _entries(n_specimens=20, images_each=5, labels=("a", "b")):
    out = []
    for s in range(n_specimens):
        label = labels[s % len(labels)]
        for i in range(images_each):
            out.append(ManifestEntry(
                image_id=f"im-{s}-{i}", specimen_id=f"sp-{s}", label=label))
    return out


class TestSplit:
    def test_no_specimen_straddles(self):
        manifest = split(_entries(), val_fraction=0.30, seed=1)
        by_spec = {}
        for e in manifest.entries:
            by_spec.setdefault(e.specimen_id, set()).add(e.partition)
        assert all(len(parts) == 1 for parts in by_spec.values())

    def test_val_fraction_zero_all_train(self):
        manifest = split(_entries(), val_fraction=0.0, seed=1)
        assert all(e.partition is Partition.TRAIN for e in manifest.entries)

    def test_fraction_within_tolerance_when_sizes_permit(self):
        manifest = split(_entries(n_specimens=40, images_each=5),
                         val_fraction=0.30, seed=3)
        for label in ("a", "b"):
            rows = [e for e in manifest.entries if e.label == label]
            val = sum(e.partition is Partition.VALIDATION for e in rows)
            assert abs(val / len(rows) - 0.30) <= 0.02

    def test_deterministic_per_seed(self):
        a = split(_entries(), 0.3, seed=7)
        b = split(_entries(), 0.3, seed=7)
        c = split(_entries(), 0.3, seed=8)
        assert a == b
        assert a != c

    def test_too_few_specimens(self):
        entries = [ManifestEntry("i1", "sp-only", "a"),
                   ManifestEntry("i2", "sp-only", "a")]
        with pytest.raises(TooFewSpecimens):
            split(entries, 0.3, seed=0)

    def test_rejects_augmented_input(self):
        entries = [ManifestEntry("i1", "s1", "a", augmented_from="i0")]
        with pytest.raises(ValueError):
            split(entries, 0.3, seed=0)


class TestManifest:
    def test_augmented_only_in_train(self):
        with pytest.raises(ValueError):
            DatasetManifest((ManifestEntry("i1", "s1", "a",
                                           Partition.VALIDATION,
                                           augmented_from="i0"),))

    def test_straddle_rejected(self):
        with pytest.raises(ValueError):
            validate_partitions([
                ManifestEntry("i1", "s1", "a", Partition.TRAIN),
                ManifestEntry("i2", "s1", "a", Partition.VALIDATION),
            ])

    def test_test_partition_may_share_specimen_with_train(self):
        validate_partitions([
            ManifestEntry("i1", "s1", "a", Partition.TRAIN),
            ManifestEntry("i2", "s1", "a", Partition.TEST),
        ])

    def test_csv_round_trip(self, tmp_path):
        manifest = split(_entries(), 0.3, seed=2)
        path = tmp_path / "m.csv"
        manifest_write_csv(manifest, path)
        assert manifest_read_csv(path) == manifest

    def test_json_round_trip(self, tmp_path):
        manifest = split(_entries(), 0.3, seed=2)
        path = tmp_path / "m.json"
        manifest_write_json(manifest, path)
        assert manifest_read_json(path) == manifest


class TestPrediction:
    def test_record_round_trip_with_predictions(self, tmp_path):
        rec = _record().with_prediction(Prediction(
            "m1", (0.1, 0.2, 0.7), TaxonLabel(Genus.CULEX, "coronator"),
            "2026-06-02T00:00:00"))
        store = tmp_path / "r.jsonl"
        append_record(store, rec)
        assert load_records(store).records["s1"] == rec

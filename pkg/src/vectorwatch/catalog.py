"""Persistence: the FMAP tensor container, specimen record log, manifests.

Three storage formats, each fit to its payload:

* FMAP — a small binary container for named tensors (checkpoints, feature
  archives). Fixed little-endian layout, bit-exact round trips.
* Record log — append-only JSON lines, one specimen record snapshot per
  line. Crash-tolerant: a torn final line never corrupts earlier ones.
* Manifest — CSV or JSON listing of images with partition labels.
"""

from __future__ import annotations

import csv
import fcntl
import io
import json
import os
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .taxonomy import TaxonLabel

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_FOR_KIND = {"f": 0, "u": 1}

META_ENTRY = "__meta__"


class CorruptContainer(ValueError):
    """FMAP payload failed structural validation."""


class TooFewSpecimens(ValueError):
    """A class has fewer than two specimens; grouping cannot split it."""


# ---------------------------------------------------------------------------
# FMAP container


def fmap_write(entries: dict[str, np.ndarray], path: str | os.PathLike) -> None:
    """Write named tensors. float inputs are stored as f32, uint8 as u8.

    Layout: magic, version u16, count u32, then per entry
    (name_len u16, name, dtype u8, ndim u8, dims u32 x ndim, offset u64),
    then payload_len u64 and the raw little-endian payload.
    """
    blobs: list[bytes] = []
    table = io.BytesIO()
    offset = 0
    seen: set[str] = set()
    for name, arr in entries.items():
        if not name or name in seen:
            raise ValueError(f"entry names must be unique and non-empty: {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f4")
        elif arr.dtype == np.uint8:
            arr = arr.astype("u1")
        else:
            raise ValueError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        if arr.ndim == 0 or any(d <= 0 for d in arr.shape):
            raise ValueError(f"dims must be positive for entry {name!r}")
        raw = arr.tobytes()
        name_b = name.encode("utf-8")
        table.write(struct.pack("<H", len(name_b)))
        table.write(name_b)
        table.write(struct.pack("<BB", _CODE_FOR_KIND[arr.dtype.kind], arr.ndim))
        table.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        table.write(struct.pack("<Q", offset))
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    out = io.BytesIO()
    out.write(FMAP_MAGIC)
    out.write(struct.pack("<HI", FMAP_VERSION, len(entries)))
    out.write(table.getvalue())
    out.write(struct.pack("<Q", len(payload)))
    out.write(payload)
    tmp = Path(path).with_name(Path(path).name + ".tmp")
    tmp.write_bytes(out.getvalue())
    os.replace(tmp, path)


def fmap_read(path: str | os.PathLike) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    return fmap_parse(raw)


def fmap_parse(raw: bytes) -> dict[str, np.ndarray]:
    view = memoryview(raw)
    if len(raw) < 10 or bytes(view[:4]) != FMAP_MAGIC:
        raise CorruptContainer("bad magic")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != FMAP_VERSION:
        raise CorruptContainer(f"unsupported container version {version}")
    pos = 10
    entries: list[tuple[str, np.dtype, tuple[int, ...], int, int]] = []
    names: set[str] = set()
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = bytes(view[pos : pos + name_len]).decode("utf-8")
            pos += name_len
            code, ndim = struct.unpack_from("<BB", raw, pos)
            pos += 2
            dims = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            (off,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            if code not in _DTYPE_CODES:
                raise CorruptContainer(f"unknown dtype code {code}")
            if any(d <= 0 for d in dims):
                raise CorruptContainer(f"non-positive dim in entry {name!r}")
            if name in names:
                raise CorruptContainer(f"duplicate entry name {name!r}")
            names.add(name)
            dtype = _DTYPE_CODES[code]
            nbytes = int(np.prod(dims)) * dtype.itemsize
            entries.append((name, dtype, tuple(dims), off, nbytes))
        (payload_len,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
    except struct.error as exc:
        raise CorruptContainer(f"truncated entry table: {exc}") from exc
    payload = view[pos : pos + payload_len]
    if len(payload) != payload_len:
        raise CorruptContainer("truncated payload")
    if sum(e[4] for e in entries) != payload_len:
        raise CorruptContainer("payload length does not match entry table")
    spans = sorted((e[3], e[3] + e[4]) for e in entries)
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise CorruptContainer("overlapping entries")
    if spans and (spans[0][0] != 0 or spans[-1][1] != payload_len):
        raise CorruptContainer("entries do not tile the payload")
    out: dict[str, np.ndarray] = {}
    for name, dtype, dims, off, nbytes in entries:
        if off + nbytes > payload_len:
            raise CorruptContainer(f"entry {name!r} exceeds payload")
        arr = np.frombuffer(payload[off : off + nbytes], dtype=dtype).reshape(dims)
        out[name] = arr.copy()
    return out


def checkpoint_write(path: str | os.PathLike, params: dict[str, np.ndarray],
                     meta: dict) -> None:
    """FMAP plus a JSON metadata block stored as the reserved u8 entry."""
    entries = dict(params)
    if META_ENTRY in entries:
        raise ValueError(f"{META_ENTRY!r} is reserved for metadata")
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    entries[META_ENTRY] = blob
    fmap_write(entries, path)


def checkpoint_read(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    entries = fmap_read(path)
    meta_arr = entries.pop(META_ENTRY, None)
    meta = json.loads(bytes(meta_arr).decode()) if meta_arr is not None else {}
    return entries, meta


# ---------------------------------------------------------------------------
# Specimen records


class ReviewDecisionKind(Enum):
    CONFIRM = "confirm"
    OVERRIDE = "override"


@dataclass(frozen=True)
class ReviewDecision:
    decision: ReviewDecisionKind
    reviewer: str
    timestamp: str
    override_label: TaxonLabel | None = None

    def __post_init__(self) -> None:
        if self.decision is ReviewDecisionKind.OVERRIDE and self.override_label is None:
            raise ValueError("override decisions require a label")

    def as_dict(self) -> dict:
        d = {"decision": self.decision.value, "reviewer": self.reviewer,
             "timestamp": self.timestamp}
        if self.override_label is not None:
            d["override_label"] = self.override_label.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewDecision":
        label = d.get("override_label")
        return cls(ReviewDecisionKind(d["decision"]), d["reviewer"], d["timestamp"],
                   TaxonLabel.from_dict(label) if label else None)


@dataclass(frozen=True)
class ImageRef:
    image_id: str
    path: str
    phone: str = ""
    background: str = ""
    orientation: str = ""

    def as_dict(self) -> dict:
        return {"image_id": self.image_id, "path": self.path, "phone": self.phone,
                "background": self.background, "orientation": self.orientation}

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        return cls(d["image_id"], d["path"], d.get("phone", ""),
                   d.get("background", ""), d.get("orientation", ""))


@dataclass(frozen=True)
class Prediction:
    model_id: str
    probabilities: tuple[float, ...]
    label: TaxonLabel
    timestamp: str

    def as_dict(self) -> dict:
        return {"model_id": self.model_id, "probabilities": list(self.probabilities),
                "label": self.label.as_dict(), "timestamp": self.timestamp}

    @classmethod
    def from_dict(cls, d: dict) -> "Prediction":
        return cls(d["model_id"], tuple(d["probabilities"]),
                   TaxonLabel.from_dict(d["label"]), d["timestamp"])


@dataclass(frozen=True)
class SpecimenRecord:
    specimen_id: str
    trap_id: str = ""
    capture_date: str = ""
    location: tuple[float, float] | None = None
    images: tuple[ImageRef, ...] = ()
    label: TaxonLabel | None = None
    predictions: tuple[Prediction, ...] = ()
    review_history: tuple[ReviewDecision, ...] = ()

    def __post_init__(self) -> None:
        ids = [im.image_id for im in self.images]
        if len(set(ids)) != len(ids):
            raise ValueError("image ids within a record must be unique")

    @property
    def active_review(self) -> ReviewDecision | None:
        """Latest decision wins; earlier ones remain as history."""
        if not self.review_history:
            return None
        return max(enumerate(self.review_history),
                   key=lambda p: (p[1].timestamp, p[0]))[1]

    @property
    def effective_label(self) -> TaxonLabel | None:
        """Reviewed label if present, else the stored ground-truth label."""
        active = self.active_review
        if active is not None:
            if active.decision is ReviewDecisionKind.OVERRIDE:
                return active.override_label
            if self.predictions:
                return self.predictions[-1].label
        return self.label

    def with_prediction(self, p: Prediction) -> "SpecimenRecord":
        return replace(self, predictions=self.predictions + (p,))

    def with_decision(self, d: ReviewDecision) -> "SpecimenRecord":
        return replace(self, review_history=self.review_history + (d,))

    def as_dict(self) -> dict:
        return {
            "v": 1,
            "specimen_id": self.specimen_id,
            "trap_id": self.trap_id,
            "capture_date": self.capture_date,
            "location": list(self.location) if self.location else None,
            "images": [im.as_dict() for im in self.images],
            "label": self.label.as_dict() if self.label else None,
            "predictions": [p.as_dict() for p in self.predictions],
            "review_history": [r.as_dict() for r in self.review_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpecimenRecord":
        return cls(
            specimen_id=d["specimen_id"],
            trap_id=d.get("trap_id", ""),
            capture_date=d.get("capture_date", ""),
            location=tuple(d["location"]) if d.get("location") else None,
            images=tuple(ImageRef.from_dict(i) for i in d.get("images", [])),
            label=TaxonLabel.from_dict(d["label"]) if d.get("label") else None,
            predictions=tuple(Prediction.from_dict(p) for p in d.get("predictions", [])),
            review_history=tuple(ReviewDecision.from_dict(r)
                                 for r in d.get("review_history", [])),
        )


@dataclass(frozen=True)
class MalformedLine:
    line_number: int
    message: str


@dataclass
class LoadResult:
    records: dict[str, SpecimenRecord]
    malformed: list[MalformedLine]


def append_record(store_path: str | os.PathLike, record: SpecimenRecord) -> None:
    """Append one record snapshot under an exclusive lock; fsync before return."""
    line = json.dumps(record.as_dict(), sort_keys=True).encode() + b"\n"
    path = Path(store_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "ab") as fh:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        try:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
        finally:
            fcntl.flock(fh.fileno(), fcntl.LOCK_UN)


def load_records(store_path: str | os.PathLike) -> LoadResult:
    """Replay the log. Later snapshots of a specimen supersede earlier ones;
    review histories and predictions are merged append-only. Malformed lines
    are reported with their line number and skipped."""
    path = Path(store_path)
    records: dict[str, SpecimenRecord] = {}
    malformed: list[MalformedLine] = []
    if not path.exists():
        return LoadResult(records, malformed)
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            stripped = raw.strip()
            if not stripped:
                continue
            try:
                rec = SpecimenRecord.from_dict(json.loads(stripped.decode()))
            except (ValueError, KeyError, TypeError) as exc:
                malformed.append(MalformedLine(lineno, str(exc)))
                continue
            prior = records.get(rec.specimen_id)
            records[rec.specimen_id] = _merge(prior, rec) if prior else rec
    return LoadResult(records, malformed)


def _merge(old: SpecimenRecord, new: SpecimenRecord) -> SpecimenRecord:
    preds = list(old.predictions)
    for p in new.predictions:
        if p not in preds:
            preds.append(p)
    history = list(old.review_history)
    for r in new.review_history:
        if r not in history:
            history.append(r)
    return replace(new, predictions=tuple(preds), review_history=tuple(history))


# ---------------------------------------------------------------------------
# Dataset manifests


class Partition(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    specimen_id: str
    label: str
    partition: Partition = Partition.TRAIN
    augmented_from: str | None = None
    path: str = ""


_MANIFEST_COLUMNS = ["image_id", "specimen_id", "label", "partition",
                     "augmented_from", "path"]


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        validate_partitions(self.entries)

    def partition(self, part: Partition) -> list[ManifestEntry]:
        return [e for e in self.entries if e.partition is part]


def validate_partitions(entries: Sequence[ManifestEntry]) -> None:
    """Augmented images only in Train; specimens never straddle Train/Val."""
    parts_by_specimen: dict[str, set[Partition]] = {}
    for e in entries:
        if e.augmented_from and e.partition is not Partition.TRAIN:
            raise ValueError(
                f"augmented image {e.image_id} outside the Train partition")
        parts_by_specimen.setdefault(e.specimen_id, set()).add(e.partition)
    for sid, parts in parts_by_specimen.items():
        if Partition.TRAIN in parts and Partition.VALIDATION in parts:
            raise ValueError(f"specimen {sid} straddles Train and Validation")


def split(entries: Sequence[ManifestEntry], val_fraction: float = 0.30,
          seed: int = 0) -> DatasetManifest:
    """Specimen-grouped, class-stratified Train/Validation split.

    Whole specimens move to Validation until each class reaches its image
    quota (approached within +-2% where group sizes permit). Deterministic
    per seed.
    """
    if not 0 <= val_fraction < 1:
        raise ValueError("val_fraction must be in [0, 1)")
    for e in entries:
        if not e.specimen_id or not e.label:
            raise ValueError("split requires specimen_id and label on every entry")
        if e.augmented_from:
            raise ValueError("split operates on unaugmented manifests")
    if val_fraction == 0:
        return DatasetManifest(tuple(
            replace(e, partition=Partition.TRAIN) for e in entries))

    by_label: dict[str, dict[str, list[ManifestEntry]]] = {}
    for e in entries:
        by_label.setdefault(e.label, {}).setdefault(e.specimen_id, []).append(e)

    rng = np.random.default_rng(seed)
    val_specimens: set[str] = set()
    for label in sorted(by_label):
        groups = by_label[label]
        if len(groups) < 2:
            raise TooFewSpecimens(
                f"class {label!r} has {len(groups)} specimen(s); need >= 2")
        total = sum(len(v) for v in groups.values())
        target = val_fraction * total
        order = sorted(groups)
        rng.shuffle(order)
        count = 0
        for sid in order:
            if count >= target or len(val_specimens & set(groups)) == len(groups) - 1:
                break
            size = len(groups[sid])
            # take the specimen unless stopping now lands closer to target
            if abs(count - target) <= abs(count + size - target):
                break
            val_specimens.add(sid)
            count += size
    out = tuple(
        replace(e, partition=Partition.VALIDATION if e.specimen_id in val_specimens
                else Partition.TRAIN)
        for e in entries)
    return DatasetManifest(out)


def manifest_write_csv(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_COLUMNS)
        for e in manifest.entries:
            writer.writerow([e.image_id, e.specimen_id, e.label, e.partition.value,
                             e.augmented_from or "", e.path])


def manifest_read_csv(path: str | os.PathLike) -> DatasetManifest:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        entries = []
        for row in reader:
            entries.append(ManifestEntry(
                image_id=row["image_id"],
                specimen_id=row["specimen_id"],
                label=row["label"],
                partition=Partition(row["partition"]),
                augmented_from=row["augmented_from"] or None,
                path=row.get("path", ""),
            ))
    return DatasetManifest(tuple(entries))


def manifest_write_json(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    rows = [{"image_id": e.image_id, "specimen_id": e.specimen_id, "label": e.label,
             "partition": e.partition.value, "augmented_from": e.augmented_from,
             "path": e.path} for e in manifest.entries]
    Path(path).write_text(json.dumps(rows, indent=2))


def manifest_read_json(path: str | os.PathLike) -> DatasetManifest:
    rows = json.loads(Path(path).read_text())
    return DatasetManifest(tuple(
        ManifestEntry(r["image_id"], r["specimen_id"], r["label"],
                      Partition(r["partition"]), r.get("augmented_from"),
                      r.get("path", "")) for r in rows))

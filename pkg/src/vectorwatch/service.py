"""HTTP surveillance service.

Ingests specimen images, classifies them, raises vector alerts, and serves
the taxonomist review queue. All state lives in the store directory:

    records.jsonl       specimen records (append-only log)
    alerts.jsonl        fired alerts (append-only log)
    review_queue.jsonl  queue membership events
    images/             uploaded originals (PNG)
    cams/               activation-map overlays for alerted predictions

A restart reconstructs every view from these files. Review decisions follow
Pending -> Confirmed | Overridden; re-deciding requires the force flag and
keeps the full history.
"""

from __future__ import annotations

import base64
import json
import os
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np
from fastapi import (Depends, FastAPI, File, Form, HTTPException, Request,
                     UploadFile)
from pydantic import BaseModel, ValidationError

from .catalog import (ImageRef, Prediction, ReviewDecision, ReviewDecisionKind,
                      SpecimenRecord, append_record, checkpoint_read,
                      load_records)
from .denoise import DenoiseConfig
from .explain import cam
from .heads import (Backbone, HeadModel, HeadName, build_head,
                    imported_backbone, standin_backbone)
from .imagecore import DecodeError, ImageTensor, decode_image, encode_png
from .pipeline import preprocess_image
from .taxonomy import SPECIES_ORDER, TaxonLabel, genus_of

ENV_BIND = "VECTORWATCH_BIND"
ENV_STORE = "VECTORWATCH_STORE"

CRITICAL_SPECIES = frozenset({"aegypti", "stephensi"})


@dataclass(frozen=True)
class AlertPolicy:
    watchlist: frozenset[str] = frozenset(SPECIES_ORDER)
    critical: frozenset[str] = CRITICAL_SPECIES
    min_confidence: float = 0.5

    def __post_init__(self) -> None:
        unknown = self.watchlist - set(SPECIES_ORDER)
        if unknown:
            raise ValueError(f"watchlist species not recognized: {sorted(unknown)}")
        if not 0 < self.min_confidence <= 1:
            raise ValueError("min_confidence must be in (0, 1]")

    def severity_for(self, species: str) -> str:
        return "critical" if species in self.critical else "warning"


@dataclass(frozen=True)
class ServiceConfig:
    store_dir: Path
    bind_host: str = "127.0.0.1"
    bind_port: int = 8000
    api_token: str | None = None
    classification_mode: str = "direct"  # or "hierarchical"
    alert_policy: AlertPolicy = field(default_factory=AlertPolicy)
    review_threshold: float = 0.6
    backbone_kind: str = "standin"       # or "archive"
    backbone_seed: int = 0
    backbone_archive: str | None = None
    model_paths: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text())
        policy_raw = raw.get("alert_policy", {})
        policy = AlertPolicy(
            watchlist=frozenset(policy_raw.get("watchlist", SPECIES_ORDER)),
            critical=frozenset(policy_raw.get("critical", CRITICAL_SPECIES)),
            min_confidence=policy_raw.get("min_confidence", 0.5),
        )
        cfg = cls(
            store_dir=Path(raw["store_dir"]),
            bind_host=raw.get("bind_host", "127.0.0.1"),
            bind_port=raw.get("bind_port", 8000),
            api_token=raw.get("api_token"),
            classification_mode=raw.get("classification_mode", "direct"),
            alert_policy=policy,
            review_threshold=raw.get("review_threshold", 0.6),
            backbone_kind=raw.get("backbone", {}).get("kind", "standin"),
            backbone_seed=raw.get("backbone", {}).get("seed", 0),
            backbone_archive=raw.get("backbone", {}).get("archive"),
            model_paths=raw.get("models", {}),
        )
        return cfg.with_env_overrides()

    def with_env_overrides(self) -> "ServiceConfig":
        cfg = self
        bind = os.environ.get(ENV_BIND)
        if bind:
            host, _, port = bind.partition(":")
            cfg = replace(cfg, bind_host=host or cfg.bind_host,
                          bind_port=int(port) if port else cfg.bind_port)
        store = os.environ.get(ENV_STORE)
        if store:
            cfg = replace(cfg, store_dir=Path(store))
        return cfg


class ServiceClassifier(Protocol):
    """What the service needs from a model stack."""

    @property
    def class_labels(self) -> tuple[str, ...]: ...

    def predict(self, images: list[ImageTensor]) -> tuple[np.ndarray, TaxonLabel]: ...

    def cam_overlay_png(self, img: ImageTensor, species: str) -> bytes: ...


class ModelBundle:
    """Backbone plus trained heads behind the ServiceClassifier protocol.

    Multi-image ingests use the set rule: the mean of the per-image
    probability vectors, argmax with lowest-index ties.
    """

    def __init__(self, backbone: Backbone, mode: str,
                 direct: HeadModel | None = None,
                 genus: HeadModel | None = None,
                 species: dict | None = None,
                 denoise_cfg: DenoiseConfig = DenoiseConfig()) -> None:
        if mode not in ("direct", "hierarchical"):
            raise ValueError(f"unknown classification mode {mode!r}")
        if mode == "direct" and direct is None:
            raise ValueError("direct mode needs the species-only head")
        if mode == "hierarchical" and (genus is None or not species):
            raise ValueError("hierarchical mode needs genus and species heads")
        self.backbone = backbone
        self.mode = mode
        self.direct = direct
        self.genus = genus
        self.species = species or {}
        self.denoise_cfg = denoise_cfg

    @property
    def class_labels(self) -> tuple[str, ...]:
        return SPECIES_ORDER

    def _image_probs(self, pre: ImageTensor) -> np.ndarray:
        if self.mode == "direct":
            feat = self.backbone.extract(pre, self.direct.spec.endpoint.name)
            return np.asarray(self.direct.predict_probs(feat), np.float64)
        from .heads import classify_hierarchical

        result = classify_hierarchical(pre, self.genus, self.species,
                                       self.backbone)
        out = np.zeros(len(SPECIES_ORDER), np.float64)
        routed = self.species[result.label.genus]
        for p, name in zip(result.species_probs, routed.class_labels):
            out[SPECIES_ORDER.index(name)] = p
        return out

    def predict(self, images: list[ImageTensor]) -> tuple[np.ndarray, TaxonLabel]:
        vectors = [self._image_probs(preprocess_image(im, self.denoise_cfg))
                   for im in images]
        mean = np.mean(vectors, axis=0)
        species = SPECIES_ORDER[int(np.argmax(mean))]
        return mean, TaxonLabel.from_species(species)

    def cam_overlay_png(self, img: ImageTensor, species: str) -> bytes:
        pre = preprocess_image(img, self.denoise_cfg)
        if self.mode == "direct":
            model = self.direct
            class_index = SPECIES_ORDER.index(species)
        else:
            model = self.species[genus_of(species)]
            class_index = model.class_labels.index(species)
        result = cam(model, self.backbone, pre, class_index)
        return encode_png(result.overlay)


def _load_head(path: str) -> HeadModel:
    params, meta = checkpoint_read(path)
    model = build_head(HeadName(meta["head_name"]))
    model.load_state_dict(params)
    return model


def build_classifier(cfg: ServiceConfig) -> ServiceClassifier | None:
    """Assemble the model stack from config; None when no models are given."""
    backbone: Backbone
    if cfg.backbone_kind == "archive":
        if not cfg.backbone_archive:
            raise ValueError("archive backbone needs an archive path")
        backbone = imported_backbone(cfg.backbone_archive)
    else:
        backbone = standin_backbone(cfg.backbone_seed)
    paths = cfg.model_paths
    if cfg.classification_mode == "direct":
        if "direct" not in paths:
            return None
        return ModelBundle(backbone, "direct", direct=_load_head(paths["direct"]))
    if "genus" not in paths:
        return None
    from .taxonomy import Genus

    species = {Genus(g.capitalize()): _load_head(p)
               for g, p in paths.get("species", {}).items()}
    if len(species) != 3:
        return None
    return ModelBundle(backbone, "hierarchical",
                       genus=_load_head(paths["genus"]), species=species)


# ---------------------------------------------------------------------------
# Review queue state


class ReviewStatus(Enum):
    PENDING = "pending"
    CONFIRMED = "confirmed"
    OVERRIDDEN = "overridden"


@dataclass
class ReviewItem:
    specimen_id: str
    image_ids: list[str]
    probabilities: list[float]
    predicted_species: str
    severity: str | None
    reason: str
    cam_path: str | None
    created_at: str
    status: ReviewStatus
    trap_id: str = ""

    def to_json(self) -> dict:
        return {
            "specimen_id": self.specimen_id,
            "image_ids": self.image_ids,
            "probabilities": self.probabilities,
            "predicted_species": self.predicted_species,
            "severity": self.severity,
            "reason": self.reason,
            "has_cam": self.cam_path is not None,
            "created_at": self.created_at,
            "status": self.status.value,
            "trap_id": self.trap_id,
        }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Store:
    """Filesystem-backed state; every mutation appends to a log first."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.records_path = self.root / "records.jsonl"
        self.alerts_path = self.root / "alerts.jsonl"
        self.queue_path = self.root / "review_queue.jsonl"
        self.images_dir = self.root / "images"
        self.cams_dir = self.root / "cams"
        for d in (self.root, self.images_dir, self.cams_dir):
            d.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.records: dict[str, SpecimenRecord] = {}
        self.queue: dict[str, dict] = {}
        self.alerts: list[dict] = []
        self.reload()

    def reload(self) -> None:
        with self._lock:
            self.records = load_records(self.records_path).records
            self.queue = {}
            if self.queue_path.exists():
                for line in self.queue_path.read_text().splitlines():
                    if line.strip():
                        entry = json.loads(line)
                        self.queue[entry["specimen_id"]] = entry
            self.alerts = []
            if self.alerts_path.exists():
                for line in self.alerts_path.read_text().splitlines():
                    if line.strip():
                        self.alerts.append(json.loads(line))

    def put_record(self, rec: SpecimenRecord) -> None:
        with self._lock:
            append_record(self.records_path, rec)
            self.records[rec.specimen_id] = rec

    def add_alert(self, alert: dict) -> None:
        with self._lock:
            with open(self.alerts_path, "a") as fh:
                fh.write(json.dumps(alert, sort_keys=True) + "\n")
            self.alerts.append(alert)

    def enqueue_review(self, entry: dict) -> None:
        with self._lock:
            with open(self.queue_path, "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self.queue[entry["specimen_id"]] = entry

    def review_status(self, specimen_id: str) -> ReviewStatus:
        rec = self.records.get(specimen_id)
        if rec is None or rec.active_review is None:
            return ReviewStatus.PENDING
        if rec.active_review.decision is ReviewDecisionKind.CONFIRM:
            return ReviewStatus.CONFIRMED
        return ReviewStatus.OVERRIDDEN

    def review_item(self, specimen_id: str) -> ReviewItem | None:
        entry = self.queue.get(specimen_id)
        rec = self.records.get(specimen_id)
        if entry is None or rec is None:
            return None
        pred = rec.predictions[-1] if rec.predictions else None
        return ReviewItem(
            specimen_id=specimen_id,
            image_ids=[im.image_id for im in rec.images],
            probabilities=list(pred.probabilities) if pred else [],
            predicted_species=pred.label.species if pred else "",
            severity=entry.get("severity"),
            reason=entry["reason"],
            cam_path=entry.get("cam_path"),
            created_at=entry["created_at"],
            status=self.review_status(specimen_id),
            trap_id=rec.trap_id,
        )

    def pending_items(self) -> list[ReviewItem]:
        items = [self.review_item(sid) for sid in self.queue]
        pending = [i for i in items if i and i.status is ReviewStatus.PENDING]
        return sorted(pending, key=lambda i: i.created_at, reverse=True)


# ---------------------------------------------------------------------------
# HTTP app


class SpecimenMetadata(BaseModel):
    specimen_id: str | None = None
    trap_id: str = ""
    capture_date: str = ""
    location: tuple[float, float] | None = None
    phone: str = ""
    background: str = ""
    orientations: list[str] | None = None


class DecisionBody(BaseModel):
    action: str  # "confirm" | "override"
    label: str | None = None
    reviewer: str = ""
    force: bool = False


def create_app(cfg: ServiceConfig,
               classifier: ServiceClassifier | None = None) -> FastAPI:
    app = FastAPI(title="vectorwatch", version="0.1.0")
    store = Store(cfg.store_dir)
    if classifier is None:
        classifier = build_classifier(cfg)
    app.state.store = store
    app.state.classifier = classifier
    app.state.config = cfg

    def require_token(request: Request) -> None:
        if cfg.api_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {cfg.api_token}":
            raise HTTPException(401, "missing or invalid API token")

    guarded = Depends(require_token)

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "model_loaded": classifier is not None}

    @app.post("/specimens", dependencies=[guarded])
    def ingest(files: list[UploadFile] = File([]),
               metadata: str = Form("{}")) -> dict:
        if classifier is None:
            raise HTTPException(503, "model not loaded")
        if not 1 <= len(files) <= 12:
            raise HTTPException(400, "expected between 1 and 12 images")
        try:
            meta = SpecimenMetadata.model_validate_json(metadata)
        except ValidationError as exc:
            raise HTTPException(400, f"bad metadata: {exc}") from exc
        images: list[ImageTensor] = []
        for f in files:
            try:
                images.append(decode_image(f.file.read()))
            except DecodeError as exc:
                raise HTTPException(422, f"undecodable image {f.filename}: {exc}")

        probs, label = classifier.predict(images)
        confidence = float(probs.max())
        timestamp = _now()
        specimen_id = meta.specimen_id or f"sp-{images[0].content_digest()[:12]}"

        refs = []
        orientations = meta.orientations or [""] * len(images)
        for i, img in enumerate(images):
            digest = img.content_digest()
            path = store.images_dir / f"{digest}.png"
            if not path.exists():
                path.write_bytes(encode_png(img))
            refs.append(ImageRef(digest, str(path), meta.phone, meta.background,
                                 orientations[i] if i < len(orientations) else ""))
        record = SpecimenRecord(
            specimen_id=specimen_id,
            trap_id=meta.trap_id,
            capture_date=meta.capture_date,
            location=meta.location,
            images=tuple(refs),
            predictions=(Prediction("service", tuple(float(p) for p in probs),
                                    label, timestamp),),
        )

        policy = cfg.alert_policy
        alert = None
        cam_path: str | None = None
        if label.species in policy.watchlist and confidence >= policy.min_confidence:
            alert = {
                "specimen_id": specimen_id,
                "species": label.species,
                "genus": label.genus.value,
                "severity": policy.severity_for(label.species),
                "confidence": confidence,
                "timestamp": timestamp,
            }
        if alert is not None:
            overlay = classifier.cam_overlay_png(images[0], label.species)
            cam_file = store.cams_dir / f"{specimen_id}.png"
            cam_file.write_bytes(overlay)
            cam_path = str(cam_file)

        store.put_record(record)  # durable evidence before the alert fires
        if alert is not None:
            store.add_alert(alert)
        queued = alert is not None or confidence < cfg.review_threshold
        if queued:
            store.enqueue_review({
                "specimen_id": specimen_id,
                "reason": "alert" if alert else "low_confidence",
                "severity": alert["severity"] if alert else None,
                "cam_path": cam_path,
                "created_at": timestamp,
            })
        return {
            "specimen_id": specimen_id,
            "prediction": {
                "species": label.species,
                "genus": label.genus.value,
                "probabilities": [float(p) for p in probs],
                "confidence": confidence,
                "class_labels": list(classifier.class_labels),
            },
            "alert": alert,
            "review_queued": queued,
        }

    @app.get("/review/pending", dependencies=[guarded])
    def pending() -> list[dict]:
        return [item.to_json() for item in store.pending_items()]

    @app.get("/review/{specimen_id}", dependencies=[guarded])
    def review_detail(specimen_id: str) -> dict:
        item = store.review_item(specimen_id)
        if item is None:
            raise HTTPException(404, f"no review item for {specimen_id}")
        rec = store.records[specimen_id]
        images_b64 = []
        for ref in rec.images:
            p = Path(ref.path)
            if p.exists():
                images_b64.append({"image_id": ref.image_id,
                                   "png_base64": base64.b64encode(
                                       p.read_bytes()).decode()})
        cam_b64 = None
        if item.cam_path and Path(item.cam_path).exists():
            cam_b64 = base64.b64encode(Path(item.cam_path).read_bytes()).decode()
        payload = item.to_json()
        payload["images"] = images_b64
        payload["cam_png_base64"] = cam_b64
        payload["metadata"] = {
            "trap_id": rec.trap_id,
            "capture_date": rec.capture_date,
            "location": list(rec.location) if rec.location else None,
            "phone": rec.images[0].phone if rec.images else "",
            "background": rec.images[0].background if rec.images else "",
        }
        return payload

    @app.post("/review/{specimen_id}/decision", dependencies=[guarded])
    def decide(specimen_id: str, body: DecisionBody) -> dict:
        rec = store.records.get(specimen_id)
        if rec is None or specimen_id not in store.queue:
            raise HTTPException(404, f"no review item for {specimen_id}")
        status = store.review_status(specimen_id)
        if status is not ReviewStatus.PENDING and not body.force:
            raise HTTPException(409, f"already {status.value}; pass force to override")
        if body.action == "confirm":
            decision = ReviewDecision(ReviewDecisionKind.CONFIRM, body.reviewer,
                                      _now())
        elif body.action == "override":
            if body.label not in SPECIES_ORDER:
                raise HTTPException(400, f"override label must be one of "
                                         f"{list(SPECIES_ORDER)}")
            decision = ReviewDecision(
                ReviewDecisionKind.OVERRIDE, body.reviewer, _now(),
                TaxonLabel.from_species(body.label))
        else:
            raise HTTPException(400, "action must be 'confirm' or 'override'")
        updated = rec.with_decision(decision)
        store.put_record(updated)
        return {
            "specimen_id": specimen_id,
            "status": store.review_status(specimen_id).value,
            "review_history_length": len(updated.review_history),
            "effective_label": (updated.effective_label.as_dict()
                                if updated.effective_label else None),
        }

    @app.get("/summary", dependencies=[guarded])
    def summary(since: str = "") -> dict:
        if since:
            try:
                datetime.fromisoformat(since)
            except ValueError:
                raise HTTPException(400, f"bad date {since!r}")
        by_species: dict[str, int] = {s: 0 for s in SPECIES_ORDER}
        by_trap: dict[str, int] = {}
        counted = 0
        for rec in store.records.values():
            pred = rec.predictions[-1] if rec.predictions else None
            timestamp = pred.timestamp if pred else rec.capture_date
            if since and timestamp and timestamp < since:
                continue
            # reviewed label where present, else the model's prediction
            label = rec.effective_label
            if label is None and pred is not None:
                label = pred.label
            if label is None:
                continue
            by_species[label.species] += 1
            counted += 1
            if rec.trap_id:
                by_trap[rec.trap_id] = by_trap.get(rec.trap_id, 0) + 1
        alerts = [a for a in store.alerts if not since or a["timestamp"] >= since]
        return {
            "since": since or None,
            "specimens": counted,
            "by_species": by_species,
            "by_trap": by_trap,
            "alerts": len(alerts),
            "alerts_by_severity": {
                sev: sum(1 for a in alerts if a["severity"] == sev)
                for sev in ("critical", "warning")
            },
        }

    @app.get("/export/training-corpus", dependencies=[guarded])
    def export_corpus() -> list[dict]:
        rows = []
        for rec in store.records.values():
            if rec.active_review is None:
                continue
            label = rec.effective_label
            if label is None:
                continue
            for ref in rec.images:
                rows.append({
                    "image_id": ref.image_id,
                    "path": ref.path,
                    "specimen_id": rec.specimen_id,
                    "label": label.species,
                    "genus": label.genus.value,
                    "source": "review",
                })
        return rows

    return app

"""Seeded service instance for dashboard integration tests.

Starts the real HTTP service over a fresh store, ingesting a few specimens
through a classifier stub so the review queue is deterministically
populated:

    sp 0: stephensi @ 0.93  -> critical alert + CAM overlay
    sp 1: coronator @ 0.20  -> low-confidence queue entry, no CAM
    sp 2: aegypti   @ 0.90  -> critical alert + CAM overlay

Usage: python fixture_server.py --port 18111 --store /tmp/store
"""

import argparse
import json

import numpy as np
import uvicorn
from fastapi.testclient import TestClient

from vectorwatch.imagecore import ImageTensor, encode_png
from vectorwatch.service import ServiceConfig, create_app
from vectorwatch.taxonomy import SPECIES_ORDER, TaxonLabel


class ScriptedClassifier:
    """Returns a scripted (species, confidence) per ingest call."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = 0

    @property
    def class_labels(self):
        return SPECIES_ORDER

    def predict(self, images):
        species, confidence = self.script[self.calls % len(self.script)]
        self.calls += 1
        k = len(SPECIES_ORDER)
        probs = np.full(k, (1 - confidence) / (k - 1))
        probs[SPECIES_ORDER.index(species)] = confidence
        return probs, TaxonLabel.from_species(species)

    def cam_overlay_png(self, img, species):
        # a visually distinct overlay tile, clearly not the original image
        tile = np.zeros((32, 32, 3), np.float32)
        tile[:, :, 0] = 255
        return encode_png(ImageTensor(tile))


def seed_image(seed: int) -> bytes:
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 256, (24, 24, 3)).astype(np.float32)
    return encode_png(ImageTensor(data))


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, required=True)
    parser.add_argument("--store", required=True)
    parser.add_argument("--token", default=None)
    args = parser.parse_args()

    cfg = ServiceConfig(store_dir=args.store, api_token=args.token,
                        review_threshold=0.6)
    classifier = ScriptedClassifier([
        ("stephensi", 0.93),
        ("coronator", 0.20),
        ("aegypti", 0.90),
    ])
    app = create_app(cfg, classifier=classifier)

    seeder = TestClient(app)
    headers = {"Authorization": f"Bearer {args.token}"} if args.token else {}
    for i, trap in enumerate(["trap-7", "trap-7", "trap-9"]):
        files = [("files", (f"img{i}-{j}.png", seed_image(i * 10 + j), "image/png"))
                 for j in range(3)]
        resp = seeder.post(
            "/specimens", files=files, headers=headers,
            data={"metadata": json.dumps({
                "specimen_id": f"seed-sp-{i}",
                "trap_id": trap,
                "phone": "pixel-3",
                "background": "white",
                "capture_date": "2026-08-01",
            })})
        resp.raise_for_status()

    print(f"fixture server ready on 127.0.0.1:{args.port}", flush=True)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")


if __name__ == "__main__":
    main()

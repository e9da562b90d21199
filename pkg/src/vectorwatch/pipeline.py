"""Preprocessing and dataset assembly shared by training, eval and serving.

Every image follows the same path before touching a model:
resize to 299x299, denoise (byte scale), normalize to [0, 1]. Training
additionally expands each train-partition image into its x5 augmented set
between denoising and normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .augment import AugmentationSpec, augment_image
from .catalog import DatasetManifest, ManifestEntry, Partition
from .denoise import DenoiseConfig, denoise
from .heads import Backbone, HeadModel
from .imagecore import ImageTensor, ResizePolicy, normalize, resize
from .train import FeatureDataset


def resize_denoise(img: ImageTensor,
                   denoise_cfg: DenoiseConfig = DenoiseConfig()) -> ImageTensor:
    """Byte-scale stages: resize to the network input size, then denoise."""
    return denoise(resize(img, ResizePolicy()), denoise_cfg)


def preprocess_image(img: ImageTensor,
                     denoise_cfg: DenoiseConfig = DenoiseConfig()) -> ImageTensor:
    """Full input pipeline: resize -> denoise -> normalize."""
    return normalize(resize_denoise(img, denoise_cfg))


def pooled_feature(backbone: Backbone, endpoint: str,
                   preprocessed: ImageTensor) -> np.ndarray:
    """Extract one image's endpoint features and average-pool them to (C,)."""
    feat = backbone.extract(preprocessed, endpoint)
    return feat.mean(axis=(0, 1)).astype(np.float32)


def build_feature_dataset(
    manifest: DatasetManifest,
    load: Callable[[ManifestEntry], ImageTensor],
    backbone: Backbone,
    endpoint: str,
    class_labels: tuple[str, ...],
    label_of: Callable[[ManifestEntry], str] | None = None,
    augment_spec: AugmentationSpec | None = None,
    denoise_cfg: DenoiseConfig = DenoiseConfig(),
) -> FeatureDataset:
    """Stream manifest images into pooled feature rows.

    Train-partition images are augmented (x5) when ``augment_spec`` is
    given; validation images never are. Images are processed one at a time
    so only the pooled vectors stay in memory.
    """
    label_of = label_of or (lambda e: e.label)
    index = {c: i for i, c in enumerate(class_labels)}

    def rows(entries: Iterable[ManifestEntry], augmented: bool):
        xs: list[np.ndarray] = []
        ys: list[int] = []
        for entry in entries:
            label = label_of(entry)
            if label not in index:
                raise KeyError(f"label {label!r} not in {class_labels}")
            img = resize_denoise(load(entry), denoise_cfg)
            variants = (augment_image(img, entry.image_id, augment_spec).images()
                        if augmented else [img])
            for var in variants:
                xs.append(pooled_feature(backbone, endpoint, normalize(var)))
                ys.append(index[label])
        x = np.stack(xs) if xs else np.zeros((0, 0), np.float32)
        return x, np.asarray(ys, dtype=np.int64)

    train_x, train_y = rows(manifest.partition(Partition.TRAIN),
                            augment_spec is not None)
    val_x, val_y = rows(manifest.partition(Partition.VALIDATION), False)
    return FeatureDataset(train_x, train_y, val_x, val_y, class_labels)


# ---------------------------------------------------------------------------
# Image-level classifiers (preprocess + backbone + head)


@dataclass
class DirectClassifier:
    """Raw image in, 9-way species probabilities out."""

    backbone: Backbone
    model: HeadModel
    denoise_cfg: DenoiseConfig = DenoiseConfig()

    @property
    def class_labels(self) -> tuple[str, ...]:
        return self.model.class_labels

    def probs(self, img: ImageTensor) -> np.ndarray:
        pre = preprocess_image(img, self.denoise_cfg)
        feat = self.backbone.extract(pre, self.model.spec.endpoint.name)
        return self.model.predict_probs(feat)


@dataclass
class HierarchicalClassifier:
    """Genus head routes to a per-genus species head; probabilities reported
    at species grain by scattering the routed head's 3-vector."""

    backbone: Backbone
    genus_model: HeadModel
    species_models: dict
    denoise_cfg: DenoiseConfig = DenoiseConfig()

    @property
    def class_labels(self) -> tuple[str, ...]:
        from .taxonomy import GENUS_ORDER

        out: list[str] = []
        for genus in GENUS_ORDER:
            if genus in self.species_models:
                out.extend(self.species_models[genus].class_labels)
        return tuple(out)

    def probs(self, img: ImageTensor) -> np.ndarray:
        from .heads import classify_hierarchical

        pre = preprocess_image(img, self.denoise_cfg)
        result = classify_hierarchical(pre, self.genus_model,
                                       self.species_models, self.backbone)
        labels = self.class_labels
        out = np.zeros(len(labels), np.float64)
        routed = result.label.genus
        routed_labels = self.species_models[routed].class_labels
        for p, name in zip(result.species_probs, routed_labels):
            out[labels.index(name)] = p
        return out

"""Backbone feature extraction and the five classifier heads.

A backbone maps a preprocessed 299x299 RGB image to a 17x17xC feature
tensor at a named endpoint; the heads are small GAP/dense/concat/softmax
networks trained on those features:

* genus head          block17_10_conv -> 512/256/128/256, concat 1152 -> 3
* Aedes species       conv2d_93       -> 512/512/256/128, concat 640  -> 3
* Anopheles species   block17_8_conv  -> 512/512/256/256/256          -> 3
* Culex species       conv2d_111      -> 512/128/256/512/256, concat 1664 -> 3
* direct species      genus topology                                  -> 9

The published Culex table is arithmetically inconsistent (a 256-wide input
into dense_5 after a 512-wide dense_4, and a 2484 concat); this
implementation chains dense_5 from dense_4's output, giving concat width
512+128+256+512+256 = 1664. The audit reports the correction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from . import nn
from .catalog import fmap_read, fmap_write
from .imagecore import ImageTensor, Scale
from .nn.autodiff import Var
from .taxonomy import (GENUS_ORDER, SPECIES_BY_GENUS, SPECIES_ORDER, Genus,
                       TaxonLabel, genus_of)


class UnknownSpec(KeyError):
    """Head spec name not in the registry."""


class MissingFeature(KeyError):
    """Feature archive has no entry for the requested image/endpoint."""


class ModelNotLoaded(RuntimeError):
    """Classification was requested before models were supplied."""


# ---------------------------------------------------------------------------
# Backbone


@dataclass(frozen=True)
class BackboneEndpoint:
    name: str
    out_shape: tuple[int, int, int]


ENDPOINTS: dict[str, BackboneEndpoint] = {
    "block17_10_conv": BackboneEndpoint("block17_10_conv", (17, 17, 1088)),
    "conv2d_93": BackboneEndpoint("conv2d_93", (17, 17, 192)),
    "block17_8_conv": BackboneEndpoint("block17_8_conv", (17, 17, 1088)),
    "conv2d_111": BackboneEndpoint("conv2d_111", (17, 17, 160)),
}

INPUT_SIDE = 299
FEATURE_SIDE = 17


@runtime_checkable
class Backbone(Protocol):
    trainable: bool

    def extract(self, img: ImageTensor, endpoint: str) -> np.ndarray: ...

    def endpoints(self) -> list[str]: ...


def _check_input(img: ImageTensor) -> np.ndarray:
    if (img.height, img.width) != (INPUT_SIDE, INPUT_SIDE):
        raise ValueError(f"backbone expects {INPUT_SIDE}x{INPUT_SIDE} input, "
                         f"got {img.height}x{img.width}")
    if img.scale is not Scale.UNIT:
        raise ValueError("backbone expects a normalized (Unit-scale) image")
    return img.data


_POOL_EDGES = np.floor(np.arange(FEATURE_SIDE + 1) * INPUT_SIDE / FEATURE_SIDE
                       ).astype(int)


class StandinBackbone:
    """Deterministic desk-scale substitute for a pretrained feature extractor.

    Average-pools the image to 17x17x3, then applies a fixed seeded
    pointwise projection 3 -> C (Glorot-scaled, no bias) and ReLU per
    endpoint. Not trainable.
    """

    trainable = False

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self._projections: dict[str, np.ndarray] = {}
        for name, ep in ENDPOINTS.items():
            words = np.frombuffer(
                hashlib.sha256(name.encode()).digest()[:16], dtype="<u4")
            rng = np.random.default_rng(
                np.random.SeedSequence([np.uint64(seed & (2**64 - 1)), *words]))
            c = ep.out_shape[2]
            limit = np.sqrt(6.0 / (3 + c))
            self._projections[name] = rng.uniform(
                -limit, limit, size=(3, c)).astype(np.float32)

    def endpoints(self) -> list[str]:
        return list(ENDPOINTS)

    def extract(self, img: ImageTensor, endpoint: str) -> np.ndarray:
        if endpoint not in ENDPOINTS:
            raise KeyError(f"unknown endpoint {endpoint!r}")
        data = _check_input(img)
        pooled = np.empty((FEATURE_SIDE, FEATURE_SIDE, 3), np.float32)
        for i in range(FEATURE_SIDE):
            for j in range(FEATURE_SIDE):
                cell = data[_POOL_EDGES[i]:_POOL_EDGES[i + 1],
                            _POOL_EDGES[j]:_POOL_EDGES[j + 1], :]
                pooled[i, j] = cell.mean(axis=(0, 1))
        feat = pooled @ self._projections[endpoint]
        return np.maximum(feat, 0.0).astype(np.float32)


def standin_backbone(seed: int = 0) -> StandinBackbone:
    return StandinBackbone(seed)


def _archive_key(digest: str, endpoint: str) -> str:
    return f"{digest}/{endpoint}"


class ImportedBackbone:
    """Backbone backed by an offline feature archive.

    Entries are keyed by the content digest of the exact (preprocessed)
    image handed to ``extract``, so lookups are independent of file paths.
    """

    trainable = False

    def __init__(self, entries: dict[str, np.ndarray]) -> None:
        self._entries = entries

    @classmethod
    def from_archive(cls, path: str | Path) -> "ImportedBackbone":
        return cls(fmap_read(path))

    def endpoints(self) -> list[str]:
        return list(ENDPOINTS)

    def extract(self, img: ImageTensor, endpoint: str) -> np.ndarray:
        key = _archive_key(img.content_digest(), endpoint)
        try:
            feat = self._entries[key]
        except KeyError:
            raise MissingFeature(
                f"no archived features for {key!r}") from None
        return np.asarray(feat, dtype=np.float32)


def imported_backbone(path: str | Path) -> ImportedBackbone:
    return ImportedBackbone.from_archive(path)


def export_features(images: list[ImageTensor], backbone: Backbone,
                    endpoints: list[str], path: str | Path) -> int:
    """Materialize backbone features into an FMAP archive; returns entry count."""
    entries: dict[str, np.ndarray] = {}
    for img in images:
        digest = img.content_digest()
        for ep in endpoints:
            entries[_archive_key(digest, ep)] = backbone.extract(img, ep)
    fmap_write(entries, path)
    return len(entries)


# ---------------------------------------------------------------------------
# Head specifications


class HeadName(Enum):
    GENUS = "genus"
    AEDES = "aedes"
    ANOPHELES = "anopheles"
    CULEX = "culex"
    SPECIES_ONLY = "species_only"


@dataclass(frozen=True)
class HeadSpec:
    name: HeadName
    endpoint: BackboneEndpoint
    layer_dims: tuple[int, ...]       # hidden dense output widths, in order
    concat_sources: tuple[str, ...]   # dense layer names feeding the classifier
    num_classes: int
    class_labels: tuple[str, ...]

    @property
    def classifier_in(self) -> int:
        if not self.concat_sources:
            return self.layer_dims[-1]
        by_name = {f"dense_{i + 1}": d for i, d in enumerate(self.layer_dims)}
        return sum(by_name[s] for s in self.concat_sources)


HEAD_SPECS: dict[HeadName, HeadSpec] = {
    HeadName.GENUS: HeadSpec(
        HeadName.GENUS, ENDPOINTS["block17_10_conv"], (512, 256, 128, 256),
        ("dense_1", "dense_2", "dense_3", "dense_4"), 3,
        tuple(g.value for g in GENUS_ORDER)),
    HeadName.AEDES: HeadSpec(
        HeadName.AEDES, ENDPOINTS["conv2d_93"], (512, 512, 256, 128),
        ("dense_1", "dense_4"), 3, SPECIES_BY_GENUS[Genus.AEDES]),
    HeadName.ANOPHELES: HeadSpec(
        HeadName.ANOPHELES, ENDPOINTS["block17_8_conv"], (512, 512, 256, 256, 256),
        (), 3, SPECIES_BY_GENUS[Genus.ANOPHELES]),
    HeadName.CULEX: HeadSpec(
        HeadName.CULEX, ENDPOINTS["conv2d_111"], (512, 128, 256, 512, 256),
        ("dense_1", "dense_2", "dense_3", "dense_4", "dense_5"), 3,
        SPECIES_BY_GENUS[Genus.CULEX]),
    HeadName.SPECIES_ONLY: HeadSpec(
        HeadName.SPECIES_ONLY, ENDPOINTS["block17_10_conv"], (512, 256, 128, 256),
        ("dense_1", "dense_2", "dense_3", "dense_4"), 9, SPECIES_ORDER),
}

CULEX_TABLE_NOTE = (
    "culex head: published concat width 2484 and dense_5 input 256 are "
    "mutually inconsistent with the listed layer widths; corrected to "
    "dense_5 = 512->256 and concat width 1664")


# ---------------------------------------------------------------------------
# Head model


class HeadModel:
    """GAP -> dense blocks (+ optional batch norm, dropout) -> concat -> classifier."""

    def __init__(self, spec: HeadSpec, seed: int = 0, dropout_rate: float = 0.3,
                 use_batchnorm: bool = True,
                 dtype: np.dtype | type = np.float32) -> None:
        self.spec = spec
        self.seed = seed
        self.dropout_rate = dropout_rate
        self.use_batchnorm = use_batchnorm
        self.dtype = dtype
        children = np.random.SeedSequence(seed).spawn(len(spec.layer_dims) + 1)
        self.dense: list[nn.DenseLayer] = []
        self.bn: list[nn.BatchNormLayer | None] = []
        self.drop: list[nn.DropoutLayer | None] = []
        in_dim = spec.endpoint.out_shape[2]
        for i, out_dim in enumerate(spec.layer_dims):
            self.dense.append(nn.DenseLayer(
                in_dim, out_dim, activation="none",
                rng=np.random.default_rng(children[i]), dtype=dtype))
            self.bn.append(nn.BatchNormLayer(out_dim, dtype=dtype)
                           if use_batchnorm else None)
            self.drop.append(nn.DropoutLayer(dropout_rate)
                             if dropout_rate > 0 else None)
            in_dim = out_dim
        self.classifier = nn.DenseLayer(
            spec.classifier_in, spec.num_classes, activation="none",
            rng=np.random.default_rng(children[-1]), dtype=dtype)

    @property
    def class_labels(self) -> tuple[str, ...]:
        return self.spec.class_labels

    def pool(self, features: np.ndarray) -> np.ndarray:
        """(17,17,C) or (B,17,17,C) feature maps -> (B,C) pooled vectors."""
        f = np.asarray(features, dtype=self.dtype)
        if f.ndim == 3:
            f = f[None]
        expected = self.spec.endpoint.out_shape
        if f.shape[1:] != expected:
            raise nn.ShapeMismatch(
                f"expected features {expected}, got {f.shape[1:]}")
        return f.mean(axis=(1, 2))

    def forward(self, x: Var | np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> Var:
        """Forward from a feature map (B,17,17,C) or pooled (B,C) input.

        Pass a Var to keep the input on the gradient tape (used by the
        activation-map computation).
        """
        if not isinstance(x, Var):
            x = Var(np.asarray(x, dtype=self.dtype))
        if x.value.ndim == 4:
            x = nn.gap_op(x)
        elif x.value.ndim != 2:
            raise nn.ShapeMismatch(f"expected (B,17,17,C) or (B,C), got {x.shape}")
        dense_outputs: dict[str, Var] = {}
        h = x
        for i, layer in enumerate(self.dense):
            h = layer(h)
            if self.bn[i] is not None:
                h = self.bn[i](h, training)
            h = nn.relu(h)
            dense_outputs[f"dense_{i + 1}"] = h
            if self.drop[i] is not None:
                h = self.drop[i](h, training, rng)
        if self.spec.concat_sources:
            h = nn.concat([dense_outputs[s] for s in self.spec.concat_sources])
        return self.classifier(h)

    def predict_probs(self, features: np.ndarray) -> np.ndarray:
        """Eval-mode class probabilities for one feature map or a batch."""
        single = np.asarray(features).ndim == 3
        logits = self.forward(self.pool(features), training=False)
        probs = nn.softmax(logits.value)
        return probs[0] if single else probs

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> dict[str, Var]:
        out: dict[str, Var] = {}
        for i, layer in enumerate(self.dense):
            for k, v in layer.parameters().items():
                out[f"dense_{i + 1}/{k}"] = v
            if self.bn[i] is not None:
                for k, v in self.bn[i].parameters().items():
                    out[f"bn_{i + 1}/{k}"] = v
        for k, v in self.classifier.parameters().items():
            out[f"classifier/{k}"] = v
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: var.value.copy() for name, var in self.parameters().items()}
        for i, bn in enumerate(self.bn):
            if bn is not None:
                for k, buf in bn.buffers().items():
                    out[f"bn_{i + 1}/{k}"] = buf.astype(np.float32)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        for name, var in params.items():
            if name not in state:
                raise KeyError(f"checkpoint missing parameter {name!r}")
            arr = np.asarray(state[name], dtype=self.dtype)
            if arr.shape != var.value.shape:
                raise nn.ShapeMismatch(
                    f"{name}: checkpoint shape {arr.shape} vs model {var.value.shape}")
            var.value = arr.copy()
        for i, bn in enumerate(self.bn):
            if bn is not None:
                bn.running_mean[:] = state[f"bn_{i + 1}/running_mean"]
                bn.running_var[:] = state[f"bn_{i + 1}/running_var"]

    def audit(self) -> tuple[list[tuple[str, object, object]], list[str]]:
        """Layer-by-layer (name, size_in, size_out) plus correction notes."""
        ep = self.spec.endpoint
        rows: list[tuple[str, object, object]] = [
            ("GlobalAveragePooling", ep.out_shape, ep.out_shape[2]),
        ]
        for i, layer in enumerate(self.dense):
            rows.append((f"dense_{i + 1}", layer.in_dim, layer.out_dim))
        if self.spec.concat_sources:
            rows.append(("concat_1", tuple(self.spec.concat_sources),
                         self.classifier.in_dim))
        rows.append(("softmax", self.classifier.in_dim, self.classifier.out_dim))
        notes = [CULEX_TABLE_NOTE] if self.spec.name is HeadName.CULEX else []
        return rows, notes


def build_head(spec: HeadSpec | HeadName, seed: int = 0,
               dropout_rate: float = 0.3, use_batchnorm: bool = True,
               dtype: np.dtype | type = np.float32) -> HeadModel:
    """Instantiate one of the five registered heads, Glorot-initialized."""
    if isinstance(spec, HeadName):
        spec = HEAD_SPECS[spec]
    if spec.name not in HEAD_SPECS or HEAD_SPECS[spec.name] != spec:
        raise UnknownSpec(f"unregistered head spec {spec.name!r}")
    return HeadModel(spec, seed=seed, dropout_rate=dropout_rate,
                     use_batchnorm=use_batchnorm, dtype=dtype)


# ---------------------------------------------------------------------------
# Classification


@dataclass(frozen=True)
class HierarchicalResult:
    genus_probs: np.ndarray
    species_probs: np.ndarray
    label: TaxonLabel


@dataclass(frozen=True)
class DirectResult:
    probs: np.ndarray
    label: TaxonLabel


def classify_hierarchical(img: ImageTensor, genus_model: HeadModel | None,
                          species_models: dict[Genus, HeadModel] | None,
                          backbone: Backbone | None) -> HierarchicalResult:
    """Genus head first, then the species head of the argmax genus.

    Ties route to the lowest class index. The reported species vector is the
    within-genus head's 3-vector; the two probability vectors are not
    multiplied together.
    """
    if genus_model is None or not species_models or backbone is None:
        raise ModelNotLoaded("hierarchical classification needs all models")
    genus_feat = backbone.extract(img, genus_model.spec.endpoint.name)
    genus_probs = genus_model.predict_probs(genus_feat)
    genus = GENUS_ORDER[int(np.argmax(genus_probs))]
    species_model = species_models.get(genus)
    if species_model is None:
        raise ModelNotLoaded(f"no species model for genus {genus.value}")
    sp_feat = backbone.extract(img, species_model.spec.endpoint.name)
    sp_probs = species_model.predict_probs(sp_feat)
    species = species_model.class_labels[int(np.argmax(sp_probs))]
    return HierarchicalResult(genus_probs, sp_probs, TaxonLabel(genus, species))


def classify_direct(img: ImageTensor, species_model: HeadModel | None,
                    backbone: Backbone | None) -> DirectResult:
    """Single pass through the 9-way species head; genus implied by species."""
    if species_model is None or backbone is None:
        raise ModelNotLoaded("direct classification needs a model and backbone")
    feat = backbone.extract(img, species_model.spec.endpoint.name)
    probs = species_model.predict_probs(feat)
    species = species_model.class_labels[int(np.argmax(probs))]
    return DirectResult(probs, TaxonLabel(genus_of(species), species))

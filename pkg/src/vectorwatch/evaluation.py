"""Per-class recall, confusion matrices and the 3-image set protocol.

A specimen "set" is three images of one specimen (same phone, same
background, three orientations). Set prediction averages the three
per-image probability vectors and takes the argmax, ties to the lowest
class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol, Sequence

import numpy as np

from .imagecore import ImageTensor
from .taxonomy import TaxonLabel


class WrongSetSize(ValueError):
    """A specimen set must contain exactly three images."""


class UnknownLabel(KeyError):
    """A true label is outside the classifier's class set."""


class Protocol_(Enum):
    PER_IMAGE = "per-image"
    PER_SET = "per-set"


class ImageClassifier(Protocol):
    """Anything that turns a raw image into class probabilities."""

    @property
    def class_labels(self) -> tuple[str, ...]: ...

    def probs(self, img: ImageTensor) -> np.ndarray: ...


@dataclass(frozen=True)
class SpecimenSet:
    specimen_id: str
    images: tuple[ImageTensor, ImageTensor, ImageTensor]
    phone: str
    background: str
    true_label: TaxonLabel | str

    def __post_init__(self) -> None:
        if len(self.images) != 3:
            raise WrongSetSize(f"set has {len(self.images)} images, expected 3")


@dataclass(frozen=True)
class LabeledImage:
    image: ImageTensor
    true_label: TaxonLabel | str


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # rows true, columns predicted

    def __post_init__(self) -> None:
        k = len(self.classes)
        if self.counts.shape != (k, k) or (self.counts < 0).any():
            raise ValueError("counts must be a non-negative KxK grid")

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_csv(self) -> str:
        header = "true\\predicted," + ",".join(self.classes)
        rows = [f"{c}," + ",".join(str(int(v)) for v in self.counts[i])
                for i, c in enumerate(self.classes)]
        return "\n".join([header] + rows) + "\n"


@dataclass(frozen=True)
class EvalReport:
    per_class_recall: dict[str, float]
    confusion: ConfusionMatrix
    n_items: int
    protocol: Protocol_

    def to_json(self) -> str:
        return json.dumps({
            "protocol": self.protocol.value,
            "n_items": self.n_items,
            "per_class_recall": self.per_class_recall,
            "classes": list(self.confusion.classes),
            "confusion": self.confusion.counts.tolist(),
        }, indent=2)

    def to_text(self) -> str:
        width = max(len(c) for c in self.confusion.classes) + 2
        lines = [f"protocol: {self.protocol.value}   items: {self.n_items}",
                 "per-class recall:"]
        for c in self.confusion.classes:
            lines.append(f"  {c:<{width}} {self.per_class_recall[c]:.4f}")
        lines.append("confusion (rows true, columns predicted):")
        head = " " * width + " ".join(f"{c[:8]:>8}" for c in self.confusion.classes)
        lines.append(head)
        for i, c in enumerate(self.confusion.classes):
            row = " ".join(f"{int(v):>8}" for v in self.confusion.counts[i])
            lines.append(f"{c:<{width}}{row}")
        return "\n".join(lines) + "\n"


def predict_set(s: SpecimenSet,
                probs_fn: Callable[[ImageTensor], np.ndarray]) -> tuple[np.ndarray, int]:
    """Mean of the three per-image probability vectors, then argmax."""
    vectors = [np.asarray(probs_fn(img), dtype=np.float64) for img in s.images]
    if len({v.shape for v in vectors}) != 1:
        raise WrongSetSize("per-image probability vectors disagree in length")
    mean = np.mean(vectors, axis=0)
    return mean, int(np.argmax(mean))


def _class_of(label: TaxonLabel | str, classes: Sequence[str]) -> int:
    """Map a truth label to a class index at either species or genus grain."""
    if isinstance(label, TaxonLabel):
        if label.species in classes:
            return classes.index(label.species)
        if label.genus.value in classes:
            return classes.index(label.genus.value)
        raise UnknownLabel(f"label {label.species!r} not in class set {classes}")
    if label in classes:
        return classes.index(label)
    raise UnknownLabel(f"label {label!r} not in class set {classes}")


def evaluate(dataset: Sequence[LabeledImage] | Sequence[SpecimenSet],
             classifier: ImageClassifier,
             protocol: Protocol_ = Protocol_.PER_IMAGE) -> EvalReport:
    """Confusion matrix and per-class recall over images or specimen sets."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    classes = tuple(classifier.class_labels)
    k = len(classes)
    counts = np.zeros((k, k), dtype=np.int64)
    for item in dataset:
        if protocol is Protocol_.PER_SET:
            if not isinstance(item, SpecimenSet):
                raise WrongSetSize("per-set protocol requires SpecimenSet items")
            _, predicted = predict_set(item, classifier.probs)
        else:
            if not isinstance(item, LabeledImage):
                raise ValueError("per-image protocol requires LabeledImage items")
            predicted = int(np.argmax(classifier.probs(item.image)))
        true_idx = _class_of(item.true_label, classes)
        counts[true_idx, predicted] += 1
    recall: dict[str, float] = {}
    for i, c in enumerate(classes):
        row = counts[i].sum()
        recall[c] = float(counts[i, i] / row) if row else 0.0
    return EvalReport(
        per_class_recall=recall,
        confusion=ConfusionMatrix(classes, counts),
        n_items=len(dataset),
        protocol=protocol,
    )

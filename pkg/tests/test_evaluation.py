import numpy as np
import pytest

from vectorwatch.evaluation import (ConfusionMatrix, LabeledImage, Protocol_,
                                    SpecimenSet, UnknownLabel, WrongSetSize,
                                    evaluate, predict_set)
from vectorwatch.imagecore import ImageTensor
from vectorwatch.taxonomy import Genus, TaxonLabel

from conftest import random_byte_image


def _img(rng, tag=0):
    data = np.full((4, 4, 3), tag % 256, np.float32)
    return ImageTensor(data)


class ScriptedClassifier:
    """Maps an image's first pixel value to a scripted probability vector."""

    def __init__(self, table, classes):
        self.table = table
        self._classes = classes

    @property
    def class_labels(self):
        return self._classes

    def probs(self, img):
        return np.asarray(self.table[int(img.data[0, 0, 0])], np.float64)


class TestPredictSet:
    def test_hand_average_oracle(self):
        rng = np.random.default_rng(0)
        table = {0: (0.6, 0.3, 0.1), 1: (0.2, 0.7, 0.1), 2: (0.5, 0.4, 0.1)}
        clf = ScriptedClassifier(table, ("a", "b", "c"))
        s = SpecimenSet("sp", (_img(rng, 0), _img(rng, 1), _img(rng, 2)),
                        "phone", "bg", "b")
        mean, idx = predict_set(s, clf.probs)
        assert np.allclose(mean, [1.3 / 3, 1.4 / 3, 0.1], atol=1e-12)
        assert idx == 1  # the second class wins

    def test_identical_vectors_idempotent(self):
        rng = np.random.default_rng(1)
        table = {7: (0.2, 0.5, 0.3)}
        clf = ScriptedClassifier(table, ("a", "b", "c"))
        s = SpecimenSet("sp", (_img(rng, 7), _img(rng, 7), _img(rng, 7)),
                        "p", "bg", "b")
        mean, idx = predict_set(s, clf.probs)
        assert np.allclose(mean, [0.2, 0.5, 0.3])
        assert idx == 1

    def test_mean_stays_on_simplex(self):
        rng = np.random.default_rng(2)
        for trial in range(20):
            vecs = rng.dirichlet(np.ones(3), size=3)
            table = {i: vecs[i] for i in range(3)}
            clf = ScriptedClassifier(table, ("a", "b", "c"))
            s = SpecimenSet("sp", (_img(rng, 0), _img(rng, 1), _img(rng, 2)),
                            "p", "bg", "a")
            mean, _ = predict_set(s, clf.probs)
            assert abs(mean.sum() - 1.0) <= 1e-6

    def test_tie_breaks_to_lowest_index(self):
        rng = np.random.default_rng(3)
        table = {5: (0.4, 0.4, 0.2)}
        clf = ScriptedClassifier(table, ("a", "b", "c"))
        s = SpecimenSet("sp", (_img(rng, 5), _img(rng, 5), _img(rng, 5)),
                        "p", "bg", "a")
        _, idx = predict_set(s, clf.probs)
        assert idx == 0

    def test_wrong_set_size(self):
        rng = np.random.default_rng(4)
        with pytest.raises(WrongSetSize):
            SpecimenSet("sp", (_img(rng), _img(rng)), "p", "bg", "a")


class TestEvaluate:
    def test_recall_from_confusion_by_hand(self):
        # scripted to produce confusion [[8, 2], [1, 9]]
        table = {0: (1.0, 0.0), 1: (0.0, 1.0)}
        clf = ScriptedClassifier(table, ("x", "y"))
        items = ([LabeledImage(_img(np, 0), "x")] * 8
                 + [LabeledImage(_img(np, 1), "x")] * 2
                 + [LabeledImage(_img(np, 0), "y")] * 1
                 + [LabeledImage(_img(np, 1), "y")] * 9)
        report = evaluate(items, clf, Protocol_.PER_IMAGE)
        assert report.confusion.counts.tolist() == [[8, 2], [1, 9]]
        assert report.per_class_recall == {"x": 0.8, "y": 0.9}
        assert report.n_items == 20

    def test_perfect_classifier_diagonal(self):
        table = {0: (1.0, 0.0, 0.0), 1: (0.0, 1.0, 0.0), 2: (0.0, 0.0, 1.0)}
        clf = ScriptedClassifier(table, ("a", "b", "c"))
        items = [LabeledImage(_img(np, i), c)
                 for i, c in enumerate(("a", "b", "c")) for _ in range(4)]
        # regenerate images so pixel tag matches class index
        items = [LabeledImage(_img(np, i % 3), ("a", "b", "c")[i % 3])
                 for i in range(12)]
        report = evaluate(items, clf, Protocol_.PER_IMAGE)
        assert np.array_equal(report.confusion.counts, np.diag([4, 4, 4]))
        assert all(v == 1.0 for v in report.per_class_recall.values())

    def test_row_sums_and_integer_identity_vs_counting_oracle(self):
        rng = np.random.default_rng(5)
        classes = ("a", "b", "c", "d")
        k = len(classes)
        for _ in range(10):
            n = int(rng.integers(5, 40))
            truth = rng.integers(0, k, n)
            predicted = rng.integers(0, k, n)
            table = {i: np.eye(k)[predicted[i]] for i in range(n)}
            clf = ScriptedClassifier(table, classes)
            items = [LabeledImage(_img(np, i), classes[truth[i]])
                     for i in range(n)]
            report = evaluate(items, clf, Protocol_.PER_IMAGE)
            # brute-force counting oracle
            expected = np.zeros((k, k), np.int64)
            for t, p in zip(truth, predicted):
                expected[t, p] += 1
            assert np.array_equal(report.confusion.counts, expected)
            rows = report.confusion.row_sums()
            assert np.array_equal(rows, np.bincount(truth, minlength=k))
            for i, c in enumerate(classes):
                assert report.per_class_recall[c] * rows[i] == expected[i, i]

    def test_per_set_of_identical_images_matches_per_image(self):
        rng = np.random.default_rng(6)
        table = {9: (0.1, 0.6, 0.3)}
        clf = ScriptedClassifier(table, ("a", "b", "c"))
        img = _img(rng, 9)
        per_image = evaluate([LabeledImage(img, "b")], clf, Protocol_.PER_IMAGE)
        per_set = evaluate([SpecimenSet("s", (img, img, img), "p", "bg", "b")],
                           clf, Protocol_.PER_SET)
        assert np.array_equal(per_image.confusion.counts,
                              per_set.confusion.counts)

    def test_taxon_labels_resolve_at_both_grains(self):
        table = {0: (1.0, 0.0, 0.0)}
        label = TaxonLabel(Genus.AEDES, "aegypti")
        species_clf = ScriptedClassifier(table, ("aegypti", "infirmatus",
                                                 "taeniorhynchus"))
        genus_clf = ScriptedClassifier(table, ("Aedes", "Anopheles", "Culex"))
        items = [LabeledImage(_img(np, 0), label)]
        assert evaluate(items, species_clf).per_class_recall["aegypti"] == 1.0
        assert evaluate(items, genus_clf).per_class_recall["Aedes"] == 1.0

    def test_unknown_label(self):
        clf = ScriptedClassifier({0: (1.0, 0.0)}, ("x", "y"))
        with pytest.raises(UnknownLabel):
            evaluate([LabeledImage(_img(np, 0), "zzz")], clf)

    def test_empty_dataset(self):
        clf = ScriptedClassifier({}, ("x",))
        with pytest.raises(ValueError):
            evaluate([], clf)

    def test_report_serialization(self):
        table = {0: (1.0, 0.0), 1: (0.0, 1.0)}
        clf = ScriptedClassifier(table, ("x", "y"))
        items = [LabeledImage(_img(np, 0), "x"), LabeledImage(_img(np, 1), "y")]
        report = evaluate(items, clf)
        assert '"per_class_recall"' in report.to_json()
        assert "per-class recall" in report.to_text()
        csv_text = report.confusion.to_csv()
        assert csv_text.splitlines()[0] == "true\\predicted,x,y"

    def test_confusion_matrix_validation(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(("a",), np.array([[-1]]))

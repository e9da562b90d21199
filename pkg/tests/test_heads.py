import numpy as np
import pytest

from vectorwatch.catalog import checkpoint_read, checkpoint_write
from vectorwatch.heads import (CULEX_TABLE_NOTE, ENDPOINTS, HEAD_SPECS,
                               HeadName, HeadSpec, MissingFeature,
                               ModelNotLoaded, UnknownSpec, build_head,
                               classify_direct, classify_hierarchical,
                               export_features, imported_backbone,
                               standin_backbone)
from vectorwatch.imagecore import ImageTensor, Scale, normalize
from vectorwatch.taxonomy import GENUS_ORDER, SPECIES_ORDER, Genus, TaxonLabel

from conftest import random_byte_image


def unit_image(rng=None, value=None):
    if value is not None:
        data = np.full((299, 299, 3), value, np.float32)
        return ImageTensor(data, Scale.UNIT)
    return normalize(random_byte_image(rng, 299, 299))


class TestEndpointRegistry:
    def test_registered_shapes(self):
        assert ENDPOINTS["block17_10_conv"].out_shape == (17, 17, 1088)
        assert ENDPOINTS["conv2d_93"].out_shape == (17, 17, 192)
        assert ENDPOINTS["block17_8_conv"].out_shape == (17, 17, 1088)
        assert ENDPOINTS["conv2d_111"].out_shape == (17, 17, 160)


class TestStandinBackbone:
    def test_shapes_for_all_endpoints(self):
        bb = standin_backbone(seed=0)
        rng = np.random.default_rng(0)
        img = unit_image(rng)
        for name, ep in ENDPOINTS.items():
            assert bb.extract(img, name).shape == ep.out_shape

    def test_zero_image_yields_zero_features(self):
        bb = standin_backbone(seed=1)
        img = unit_image(value=0.0)
        feat = bb.extract(img, "block17_10_conv")
        assert np.array_equal(feat, np.zeros_like(feat))

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        img = unit_image(rng)
        a = standin_backbone(seed=3).extract(img, "conv2d_93")
        b = standin_backbone(seed=3).extract(img, "conv2d_93")
        c = standin_backbone(seed=4).extract(img, "conv2d_93")
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_rejects_wrong_input(self):
        bb = standin_backbone()
        with pytest.raises(ValueError):
            bb.extract(ImageTensor(np.zeros((10, 10, 3), np.float32),
                                   Scale.UNIT), "conv2d_93")
        with pytest.raises(ValueError):
            bb.extract(ImageTensor(np.zeros((299, 299, 3), np.float32),
                                   Scale.BYTE), "conv2d_93")
        with pytest.raises(KeyError):
            bb.extract(unit_image(value=0.5), "no_such_endpoint")


class TestImportedBackbone:
    def test_archive_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        img = unit_image(rng)
        source = standin_backbone(seed=9)
        path = tmp_path / "features.fmap"
        n = export_features([img], source, ["block17_10_conv", "conv2d_93"], path)
        assert n == 2
        imported = imported_backbone(path)
        assert not imported.trainable
        for ep in ("block17_10_conv", "conv2d_93"):
            assert np.array_equal(imported.extract(img, ep),
                                  source.extract(img, ep))

    def test_missing_feature(self, tmp_path):
        rng = np.random.default_rng(3)
        path = tmp_path / "features.fmap"
        export_features([unit_image(rng)], standin_backbone(), ["conv2d_93"], path)
        other = unit_image(rng)
        with pytest.raises(MissingFeature):
            imported_backbone(path).extract(other, "conv2d_93")


EXPECTED_AUDITS = {
    HeadName.GENUS: [
        ("GlobalAveragePooling", (17, 17, 1088), 1088),
        ("dense_1", 1088, 512), ("dense_2", 512, 256),
        ("dense_3", 256, 128), ("dense_4", 128, 256),
        ("concat_1", ("dense_1", "dense_2", "dense_3", "dense_4"), 1152),
        ("softmax", 1152, 3),
    ],
    HeadName.AEDES: [
        ("GlobalAveragePooling", (17, 17, 192), 192),
        ("dense_1", 192, 512), ("dense_2", 512, 512),
        ("dense_3", 512, 256), ("dense_4", 256, 128),
        ("concat_1", ("dense_1", "dense_4"), 640),
        ("softmax", 640, 3),
    ],
    HeadName.ANOPHELES: [
        ("GlobalAveragePooling", (17, 17, 1088), 1088),
        ("dense_1", 1088, 512), ("dense_2", 512, 512),
        ("dense_3", 512, 256), ("dense_4", 256, 256), ("dense_5", 256, 256),
        ("softmax", 256, 3),
    ],
    HeadName.CULEX: [
        ("GlobalAveragePooling", (17, 17, 160), 160),
        ("dense_1", 160, 512), ("dense_2", 512, 128),
        ("dense_3", 128, 256), ("dense_4", 256, 512), ("dense_5", 512, 256),
        ("concat_1", ("dense_1", "dense_2", "dense_3", "dense_4", "dense_5"),
         1664),
        ("softmax", 1664, 3),
    ],
    HeadName.SPECIES_ONLY: [
        ("GlobalAveragePooling", (17, 17, 1088), 1088),
        ("dense_1", 1088, 512), ("dense_2", 512, 256),
        ("dense_3", 256, 128), ("dense_4", 128, 256),
        ("concat_1", ("dense_1", "dense_2", "dense_3", "dense_4"), 1152),
        ("softmax", 1152, 9),
    ],
}


class TestHeadConstruction:
    @pytest.mark.parametrize("name", list(HeadName))
    def test_audit_matches_published_layout(self, name):
        rows, notes = build_head(name, seed=0).audit()
        assert rows == EXPECTED_AUDITS[name]
        if name is HeadName.CULEX:
            assert notes == [CULEX_TABLE_NOTE]
        else:
            assert notes == []

    def test_concat_widths(self):
        assert build_head(HeadName.GENUS).classifier.in_dim == 1152
        assert build_head(HeadName.AEDES).classifier.in_dim == 640
        assert build_head(HeadName.CULEX).classifier.in_dim == 1664
        assert build_head(HeadName.SPECIES_ONLY).classifier.out_dim == 9

    def test_unknown_spec_rejected(self):
        bogus = HeadSpec(HeadName.GENUS, ENDPOINTS["conv2d_93"], (8,), (), 3,
                         ("a", "b", "c"))
        with pytest.raises(UnknownSpec):
            build_head(bogus)

    def test_forward_and_probs(self):
        rng = np.random.default_rng(4)
        model = build_head(HeadName.GENUS, seed=1)
        feat = rng.random((17, 17, 1088)).astype(np.float32)
        probs = model.predict_probs(feat)
        assert probs.shape == (3,)
        assert abs(probs.sum() - 1) <= 1e-6
        batch = model.predict_probs(np.stack([feat, feat]))
        assert batch.shape == (2, 3)
        assert np.allclose(batch[0], probs)

    def test_checkpoint_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        model = build_head(HeadName.AEDES, seed=2)
        feat = rng.random((17, 17, 192)).astype(np.float32)
        before = model.predict_probs(feat)
        path = tmp_path / "head.fmap"
        checkpoint_write(path, model.state_dict(), {"head_name": "aedes"})
        params, meta = checkpoint_read(path)
        fresh = build_head(HeadName.AEDES, seed=99)
        fresh.load_state_dict(params)
        assert meta["head_name"] == "aedes"
        assert np.array_equal(fresh.predict_probs(feat), before)

    def test_seed_determinism(self):
        a = build_head(HeadName.GENUS, seed=7).state_dict()
        b = build_head(HeadName.GENUS, seed=7).state_dict()
        assert all(np.array_equal(a[k], b[k]) for k in a)


def _uniform_genus_model():
    """Genus head forced to emit exactly uniform probabilities."""
    model = build_head(HeadName.GENUS, seed=0, dropout_rate=0.0,
                       use_batchnorm=False)
    model.classifier.weights.value[:] = 0
    model.classifier.bias.value[:] = 0
    return model


def _biased_model(name, class_index):
    """Head whose classifier bias forces one class regardless of input."""
    model = build_head(name, seed=0, dropout_rate=0.0, use_batchnorm=False)
    model.classifier.weights.value[:] = 0
    model.classifier.bias.value[:] = 0
    model.classifier.bias.value[class_index] = 10.0
    return model


class TestClassification:
    def _species_models(self):
        return {
            Genus.AEDES: _biased_model(HeadName.AEDES, 0),
            Genus.ANOPHELES: _biased_model(HeadName.ANOPHELES, 2),
            Genus.CULEX: _biased_model(HeadName.CULEX, 1),
        }

    def test_tie_routes_to_lowest_index_genus(self):
        rng = np.random.default_rng(6)
        img = unit_image(rng)
        result = classify_hierarchical(img, _uniform_genus_model(),
                                       self._species_models(),
                                       standin_backbone(seed=0))
        assert np.allclose(result.genus_probs, [1 / 3] * 3, atol=1e-6)
        assert result.label.genus is Genus.AEDES
        assert result.label.species == "aegypti"

    def test_routing_follows_argmax_genus(self):
        rng = np.random.default_rng(7)
        img = unit_image(rng)
        genus = _biased_model(HeadName.GENUS, 1)  # Anopheles
        result = classify_hierarchical(img, genus, self._species_models(),
                                       standin_backbone(seed=0))
        assert result.label.genus is Genus.ANOPHELES
        assert result.label.species == "stephensi"
        assert result.species_probs.shape == (3,)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        img = unit_image(rng)
        args = (_uniform_genus_model(), self._species_models(),
                standin_backbone(seed=0))
        a = classify_hierarchical(img, *args)
        b = classify_hierarchical(img, *args)
        assert np.array_equal(a.genus_probs, b.genus_probs)
        assert a.label == b.label

    def test_direct_species_implies_genus(self):
        rng = np.random.default_rng(9)
        img = unit_image(rng)
        idx = SPECIES_ORDER.index("stephensi")
        model = _biased_model(HeadName.SPECIES_ONLY, idx)
        result = classify_direct(img, model, standin_backbone(seed=0))
        assert result.label.species == "stephensi"
        assert result.label.genus is Genus.ANOPHELES
        assert abs(result.probs.sum() - 1) <= 1e-6

    def test_models_required(self):
        rng = np.random.default_rng(10)
        img = unit_image(rng)
        with pytest.raises(ModelNotLoaded):
            classify_direct(img, None, standin_backbone())
        with pytest.raises(ModelNotLoaded):
            classify_hierarchical(img, None, {}, standin_backbone())

    def test_argmax_invariant_under_monotone_rescaling(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            logits = rng.standard_normal(3) * 5
            base = int(np.argmax(logits))
            for f in (lambda z: 3 * z + 1, np.tanh, lambda z: z ** 3):
                assert int(np.argmax(f(logits))) == base

    def test_taxon_grouping(self):
        assert TaxonLabel.from_species("stephensi").genus is Genus.ANOPHELES
        assert GENUS_ORDER[0] is Genus.AEDES
        with pytest.raises(ValueError):
            TaxonLabel(Genus.AEDES, "stephensi")

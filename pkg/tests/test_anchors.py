import numpy as np
import pytest

from kernelshot.anchors import (
    AnchorSet,
    class_mean_anchors,
    image_anchors_from_shots,
    image_anchors_from_support,
    text_anchors_from_bundle,
)
from kernelshot.core import FeatureBundle
from kernelshot.errors import (
    CountMismatch,
    EmptyClass,
    MissingLabels,
    UnbalancedSupport,
    WrongKind,
)


def labeled(data, labels, C, kind="image"):
    return FeatureBundle(
        np.asarray(data, dtype=float),
        labels=np.asarray(labels),
        kind=kind,
        class_count=C,
    )


class TestTextAnchors:
    def test_two_class_bundle(self):
        out = text_anchors_from_bundle(
            FeatureBundle(np.eye(2), kind="text", class_count=2)
        )
        assert out.n2 == 2
        assert out.n1 == 0

    def test_wrong_kind(self):
        with pytest.raises(WrongKind):
            text_anchors_from_bundle(FeatureBundle(np.eye(2), kind="image"))

    def test_row_count_mismatch(self):
        # can't build a mismatched text bundle directly, so drop class_count
        # and pass a 3-row "2-class" bundle through a relabeled image bundle
        bad = FeatureBundle(np.eye(3), kind="text")
        object.__setattr__(bad, "class_count", 2)
        with pytest.raises(CountMismatch):
            text_anchors_from_bundle(bad)

    def test_unnormalized_rows_get_normalized(self):
        out = text_anchors_from_bundle(
            FeatureBundle(np.array([[3.0, 4.0], [0.0, 2.0]]), kind="text")
        )
        assert out.text_anchors.l2_normalized
        np.testing.assert_allclose(out.text_anchors.data[0], [0.6, 0.8])


class TestImageAnchorsFromShots:
    def test_two_class_one_shot(self):
        ep = labeled(np.eye(2), [0, 1], 2)
        out = image_anchors_from_shots(ep)
        assert out.n1 == 2
        assert out.provenance == "LabeledShots"

    def test_missing_labels(self):
        with pytest.raises(MissingLabels):
            image_anchors_from_shots(FeatureBundle(np.eye(2), kind="image"))

    def test_reorders_to_class_major(self):
        ep = labeled(np.eye(4), [1, 0, 1, 0], 2)
        out = image_anchors_from_shots(ep)
        np.testing.assert_array_equal(out.image_anchors.labels, [0, 0, 1, 1])
        # stable reorder: class-0 rows keep their relative order (rows 1, 3)
        np.testing.assert_array_equal(out.image_anchors.data[0], np.eye(4)[1])
        np.testing.assert_array_equal(out.image_anchors.data[1], np.eye(4)[3])

    def test_rows_unit_norm(self):
        rng = np.random.default_rng(0)
        ep = labeled(rng.standard_normal((6, 4)), [0, 0, 1, 1, 2, 2], 3)
        out = image_anchors_from_shots(ep)
        norms = np.linalg.norm(out.image_anchors.data, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_does_not_mutate_input(self):
        data = np.array([[3.0, 4.0], [0.0, 2.0]])
        ep = labeled(data.copy(), [1, 0], 2)
        before = ep.data.copy()
        image_anchors_from_shots(ep)
        np.testing.assert_array_equal(ep.data, before)


class TestImageAnchorsFromSupport:
    def test_same_path_as_shots(self):
        ep = labeled(np.eye(4), [0, 0, 1, 1], 2)
        a = image_anchors_from_shots(ep)
        b = image_anchors_from_support(ep)
        np.testing.assert_array_equal(a.image_anchors.data, b.image_anchors.data)
        assert b.provenance == "ExternalSupport"

    def test_uniform_larger_count_accepted(self):
        rng = np.random.default_rng(1)
        sup = labeled(rng.standard_normal((6, 3)), [0, 0, 0, 1, 1, 1], 2)
        out = image_anchors_from_support(sup)
        assert out.n1 == 6

    def test_unbalanced_rejected(self):
        sup = labeled(np.eye(3), [0, 0, 1], 2)
        with pytest.raises(UnbalancedSupport):
            image_anchors_from_support(sup)

    def test_missing_labels(self):
        with pytest.raises(MissingLabels):
            image_anchors_from_support(FeatureBundle(np.eye(2), kind="image"))


class TestClassMeanAnchors:
    def test_single_row_per_class(self):
        ep = labeled([[3.0, 4.0], [0.0, 2.0]], [0, 1], 2)
        out = class_mean_anchors(ep)
        np.testing.assert_allclose(out.image_anchors.data[0], [0.6, 0.8])
        np.testing.assert_allclose(out.image_anchors.data[1], [0.0, 1.0])
        assert out.provenance == "ClassMeans"

    def test_hand_mean_then_normalize(self):
        # mean of [1,0] and [0,1] is [0.5,0.5]; normalized: [1,1]/sqrt(2)
        ep = labeled([[1.0, 0.0], [0.0, 1.0]], [0, 0], 1)
        out = class_mean_anchors(ep)
        np.testing.assert_allclose(
            out.image_anchors.data[0], np.ones(2) / np.sqrt(2), atol=1e-15
        )

    def test_empty_class(self):
        ep = labeled(np.eye(2), [0, 0], 2)
        with pytest.raises(EmptyClass):
            class_mean_anchors(ep)

    def test_permutation_invariant_within_class(self):
        rng = np.random.default_rng(2)
        data = rng.standard_normal((8, 5))
        labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        a = class_mean_anchors(labeled(data, labels, 2))
        perm = np.array([3, 1, 0, 2, 7, 5, 6, 4])
        b = class_mean_anchors(labeled(data[perm], labels[perm], 2))
        assert np.abs(a.image_anchors.data - b.image_anchors.data).max() <= 1e-12


class TestAnchorSet:
    def test_empty_rejected(self):
        with pytest.raises(CountMismatch):
            AnchorSet()

    def test_merge_fills_missing_block(self):
        text = text_anchors_from_bundle(FeatureBundle(np.eye(2), kind="text"))
        img = image_anchors_from_shots(labeled(np.eye(2), [0, 1], 2))
        merged = img.merge(text)
        assert merged.n1 == 2 and merged.n2 == 2
        assert merged.provenance == "LabeledShots"

    def test_class_major_invariant_all_constructors(self):
        rng = np.random.default_rng(3)
        data = rng.standard_normal((6, 4))
        labels = np.array([2, 0, 1, 2, 0, 1])
        for build in (image_anchors_from_shots, image_anchors_from_support):
            out = build(labeled(data, labels, 3))
            lab = out.image_anchors.labels
            assert (np.diff(lab) >= 0).all()

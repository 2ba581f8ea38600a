"""Augmentation policy and transform tests."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from modalfuse.augment import (
    AugmentationPolicy,
    apply_augmentation,
    draw_angle,
    h_flip,
    policy_for,
    rotate,
    v_flip,
)
from modalfuse.modality import MODALITIES, Modality

_images = hnp.arrays(
    dtype=np.float64,
    shape=st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3)),
    elements=st.floats(0.0, 1.0, width=64),
)


class TestPolicyTable:
    def test_clinical(self):
        p = policy_for(Modality.CLINICAL)
        assert p.horizontal_flip and p.vertical_flip
        assert p.rotation_deg == 11.0

    def test_radiological_h_flip_only(self):
        p = policy_for(Modality.RADIOLOGICAL)
        assert p.horizontal_flip
        assert not p.vertical_flip
        assert p.rotation_deg == 0.0

    def test_histopathological_flips_no_rotation(self):
        p = policy_for(Modality.HISTOPATHOLOGICAL)
        assert p.horizontal_flip and p.vertical_flip
        assert p.rotation_deg == 0.0

    def test_rotation_range_validated(self):
        with pytest.raises(ValueError):
            AugmentationPolicy(True, True, rotation_deg=11.5)
        with pytest.raises(ValueError):
            AugmentationPolicy(True, True, rotation_deg=-1.0)


class TestFlips:
    def test_h_flip_mirrors_columns(self):
        out = h_flip(np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out, [[2.0, 1.0], [4.0, 3.0]])

    def test_v_flip_mirrors_rows(self):
        out = v_flip(np.array([[1.0], [2.0]]))
        np.testing.assert_array_equal(out, [[2.0], [1.0]])

    @given(_images)
    def test_h_flip_involution(self, image):
        np.testing.assert_array_equal(h_flip(h_flip(image)), image)

    @given(_images)
    def test_v_flip_involution(self, image):
        np.testing.assert_array_equal(v_flip(v_flip(image)), image)

    @given(_images)
    def test_flips_commute(self, image):
        np.testing.assert_array_equal(h_flip(v_flip(image)), v_flip(h_flip(image)))

    def test_flip_returns_new_array(self):
        image = np.zeros((3, 3, 3))
        assert h_flip(image) is not image
        assert v_flip(image) is not image


class TestRotate:
    def test_zero_is_bit_exact_identity(self):
        rng = np.random.default_rng(42)
        image = rng.random((20, 20, 3))
        out = rotate(image, 0.0)
        np.testing.assert_array_equal(out, image)
        assert out is not image

    def test_shape_preserved(self):
        image = np.random.default_rng(1).random((30, 40, 3))
        assert rotate(image, 7.3).shape == (30, 40, 3)

    def test_constant_image_invariant(self):
        image = np.full((25, 25, 3), 0.6)
        np.testing.assert_allclose(rotate(image, 9.1), 0.6, atol=1e-12)

    def test_range_preserved(self):
        rng = np.random.default_rng(3)
        for deg in (-11.0, -4.2, 4.2, 11.0):
            out = rotate(rng.random((16, 16, 3)), deg)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_opposite_angles_mirror(self):
        # rotating a h-flipped image by -a equals h-flipping the +a rotation
        rng = np.random.default_rng(9)
        image = rng.random((21, 21, 3))
        np.testing.assert_allclose(
            h_flip(rotate(image, 8.0)), rotate(h_flip(image), -8.0), atol=1e-12
        )


class TestApply:
    def test_disabled_policy_identity(self):
        image = np.random.default_rng(5).random((8, 8, 3))
        policy = AugmentationPolicy(False, False, 0.0)
        out = apply_augmentation(image, policy, np.random.default_rng(0))
        np.testing.assert_array_equal(out, image)
        assert out is not image

    def test_both_flips_reverse_both_axes(self):
        # find a seed whose first two uniform draws both fall under 0.5,
        # so both flips fire
        def both_fire(seed):
            g = np.random.default_rng(seed)
            return g.random() < 0.5 and g.random() < 0.5

        seed = next(s for s in range(1000) if both_fire(s))
        image = np.array([[1.0, 2.0], [3.0, 4.0]])
        policy = AugmentationPolicy(True, True, 0.0)
        out = apply_augmentation(image, policy, np.random.default_rng(seed))
        np.testing.assert_array_equal(out, [[4.0, 3.0], [2.0, 1.0]])

    def test_angle_bounds_10k_draws(self):
        policy = policy_for(Modality.CLINICAL)
        rng = np.random.default_rng(42)
        angles = [draw_angle(policy, rng) for _ in range(10_000)]
        assert all(-11.0 <= a <= 11.0 for a in angles)
        # the draws should actually explore the range
        assert min(angles) < -10.0 and max(angles) > 10.0

    def test_no_rotation_draws_none(self):
        rng = np.random.default_rng(0)
        assert draw_angle(policy_for(Modality.RADIOLOGICAL), rng) is None

    @settings(max_examples=40, deadline=None)
    @given(_images, st.integers(0, 2**32 - 1), st.sampled_from(MODALITIES))
    def test_deterministic_under_seed(self, image, seed, modality):
        policy = policy_for(modality)
        a = apply_augmentation(image, policy, np.random.default_rng(seed))
        b = apply_augmentation(image, policy, np.random.default_rng(seed))
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=40, deadline=None)
    @given(_images, st.integers(0, 2**32 - 1), st.sampled_from(MODALITIES))
    def test_shape_and_range_preserved(self, image, seed, modality):
        policy = policy_for(modality)
        out = apply_augmentation(image, policy, np.random.default_rng(seed))
        assert out.shape == image.shape
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_input_never_mutated(self):
        rng = np.random.default_rng(11)
        image = rng.random((10, 10, 3))
        before = image.copy()
        for seed in range(8):
            apply_augmentation(
                image, policy_for(Modality.CLINICAL), np.random.default_rng(seed)
            )
        np.testing.assert_array_equal(image, before)

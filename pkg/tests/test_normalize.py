import numpy as np
import pytest

from gaborjet import (
    BankParams,
    GrayImage,
    build_bank,
    build_sat,
    image_jets,
    interior_safe_mask,
    jet_at,
    jets_field,
    local_stats,
    normalize,
    transform,
)
from gaborjet.errors import ConfigError, DataError, IncompatibilityError
from gaborjet.normalize import NormalizedStack, dataset_jets
from gaborjet.image import LabeledDataset

from conftest import rand_image


class TestLocalStats:
    def test_constant_image(self, small_bank):
        stats = local_stats(GrayImage(np.full((40, 40), 42.0)), small_bank)
        np.testing.assert_allclose(stats.alpha_b, 42.0)
        np.testing.assert_allclose(stats.alpha_c, 0.0, atol=1e-9)

    def test_balanced_step_brightness(self, small_bank):
        # Midline-column layout 0 | 100 | 200: every window centered on the
        # middle column is balanced even when clamped, so alpha_b = 100
        # down the whole column at every scale.
        data = np.zeros((12, 21))
        data[:, 10] = 100.0
        data[:, 11:] = 200.0
        stats = local_stats(GrayImage(data), small_bank)
        for v in range(small_bank.params.num_scales):
            np.testing.assert_allclose(stats.alpha_b[v][:, 10], 100.0)

    def test_matches_naive_loops(self, default_bank, rng):
        img = rand_image(rng, 32, 32)
        stats = local_stats(img, default_bank)
        v = 2
        r = default_bank.radius_at_scale(v)
        for cy in range(img.height):
            for cx in range(img.width):
                patch = img.pixels[
                    max(0, cy - r) : cy + r + 1, max(0, cx - r) : cx + r + 1
                ]
                assert stats.alpha_b[v, cy, cx] == pytest.approx(
                    patch.mean(), rel=1e-9
                )
                assert stats.alpha_c[v, cy, cx] == pytest.approx(
                    patch.std(), rel=1e-9, abs=1e-9
                )

    def test_one_plane_pair_per_scale(self, small_bank, rng):
        stats = local_stats(rand_image(rng, 20, 24), small_bank)
        assert stats.alpha_b.shape == (small_bank.params.num_scales, 20, 24)
        assert stats.alpha_c.shape == stats.alpha_b.shape
        assert np.all(stats.alpha_c >= 0.0)


class TestNormalize:
    def test_constant_image_yields_zero(self, small_bank):
        c = 180.0
        img = GrayImage(np.full((36, 36), c))
        stack = transform(img, small_bank)
        stats = local_stats(img, small_bank)
        out = normalize(stack, stats, small_bank)
        worst = max(k.abs_sum for k in small_bank.kernels)
        np.testing.assert_allclose(out.planes, 0.0, atol=1e-9 * c * worst)
        assert np.all(np.isfinite(out.planes.view(np.float64)))

    def test_reconstruction_identity(self, small_bank, rng):
        # alpha_b * phi_eff + alpha_c * G0 = G wherever the floor is idle.
        img = rand_image(rng, 30, 27)
        stack = transform(img, small_bank)
        stats = local_stats(img, small_bank)
        epsilon_c = 1.0
        out = normalize(stack, stats, small_bank, epsilon_c)
        for v in range(small_bank.params.num_scales):
            mask = stats.alpha_c[v] >= epsilon_c
            assert mask.any()
            for kern in small_bank.kernels_at_scale(v):
                j = kern.index
                lhs = (
                    stats.alpha_b[v] * stack.phi_eff[j]
                    + stats.alpha_c[v] * out.planes[j]
                )
                np.testing.assert_allclose(
                    lhs[mask],
                    stack.planes[j][mask],
                    rtol=1e-9,
                    atol=1e-9 * np.abs(stack.planes[j]).max(),
                )

    def test_global_affine_invariance(self, small_bank, rng):
        img = rand_image(rng, 48, 48, high=150.0)
        mapped = GrayImage(20.0 + 1.5 * img.pixels, in_range=False)
        jets = image_jets(img, small_bank)
        jets_mapped = image_jets(mapped, small_bank)
        stats = local_stats(img, small_bank)
        mask = interior_safe_mask(stats, 1.0)
        assert mask.any()
        np.testing.assert_allclose(
            jets_mapped[mask],
            jets[mask],
            rtol=1e-6,
            atol=1e-8 * jets.max(),
        )

    def test_per_half_affine_invariance(self, small_bank, rng):
        # Independent affine maps per half: pixels whose window sits fully
        # inside one half keep their scale's coefficients.
        img = rand_image(rng, 48, 48, high=120.0)
        left = 5.0 + 1.4 * img.pixels[:, :24]
        right = 30.0 + 0.8 * img.pixels[:, 24:]
        mapped = GrayImage(np.concatenate([left, right], axis=1), in_range=False)
        base = normalize(transform(img, small_bank), local_stats(img, small_bank), small_bank)
        moved = normalize(
            transform(mapped, small_bank), local_stats(mapped, small_bank), small_bank
        )
        stats = local_stats(img, small_bank)
        xs = np.arange(48)
        for v in range(small_bank.params.num_scales):
            r = small_bank.radius_at_scale(v)
            in_half = ((xs - r >= 0) & (xs + r <= 23)) | (
                (xs - r >= 24) & (xs + r <= 47)
            )
            mask = (stats.alpha_c[v] >= 2.0) & in_half[None, :]
            if not mask.any():
                continue
            for kern in small_bank.kernels_at_scale(v):
                j = kern.index
                np.testing.assert_allclose(
                    np.abs(moved.planes[j][mask]),
                    np.abs(base.planes[j][mask]),
                    rtol=1e-5,
                    atol=1e-8 * np.abs(base.planes[j]).max(),
                )

    def test_contrast_floor_keeps_values_finite(self, small_bank):
        # A nearly flat patch drives alpha_c to 0; the floor takes over.
        data = np.full((40, 40), 25.0)
        data[20, 20] = 26.0
        img = GrayImage(data)
        out = normalize(
            transform(img, small_bank), local_stats(img, small_bank), small_bank
        )
        assert np.all(np.isfinite(out.planes.view(np.float64)))

    def test_rejects_bad_epsilon(self, small_bank, rng):
        img = rand_image(rng, 16, 16)
        stack = transform(img, small_bank)
        stats = local_stats(img, small_bank)
        with pytest.raises(ConfigError):
            normalize(stack, stats, small_bank, 0.0)

    def test_rejects_mismatched_stats(self, small_bank, rng):
        stack = transform(rand_image(rng, 16, 16), small_bank)
        stats = local_stats(rand_image(rng, 20, 20), small_bank)
        with pytest.raises(IncompatibilityError):
            normalize(stack, stats, small_bank)

    def test_rejects_foreign_bank(self, small_bank, default_bank, rng):
        img = rand_image(rng, 16, 16)
        stack = transform(img, small_bank)
        stats = local_stats(img, small_bank)
        with pytest.raises(IncompatibilityError):
            normalize(stack, stats, default_bank)


class TestJets:
    def make_stack(self, planes, params):
        return NormalizedStack(planes=planes, epsilon_c=1.0, params=params)

    def test_zero_stack_zero_jet(self, small_bank):
        planes = np.zeros((small_bank.params.num_kernels, 4, 4), dtype=complex)
        jet = jet_at(self.make_stack(planes, small_bank.params), (2, 1))
        np.testing.assert_array_equal(jet.values, 0.0)

    def test_three_four_magnitude(self, small_bank):
        planes = np.full(
            (small_bank.params.num_kernels, 4, 4), 3.0 + 4.0j, dtype=complex
        )
        jet = jet_at(self.make_stack(planes, small_bank.params), (0, 3))
        np.testing.assert_allclose(jet.values, 5.0)

    def test_matches_recomputed_magnitudes(self, small_bank, rng):
        shape = (small_bank.params.num_kernels, 5, 6)
        planes = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        stack = self.make_stack(planes, small_bank.params)
        jet = jet_at(stack, (4, 2))
        np.testing.assert_allclose(jet.values, np.abs(planes[:, 2, 4]), rtol=1e-12)
        field = jets_field(stack)
        np.testing.assert_allclose(field[2, 4], jet.values, rtol=1e-12)

    def test_out_of_bounds(self, small_bank):
        planes = np.zeros((small_bank.params.num_kernels, 4, 4), dtype=complex)
        stack = self.make_stack(planes, small_bank.params)
        with pytest.raises(DataError):
            jet_at(stack, (4, 0))
        with pytest.raises(DataError):
            jet_at(stack, (0, -1))

    def test_image_jets_raw_skips_normalization(self, small_bank, rng):
        img = rand_image(rng, 24, 24)
        raw = image_jets(img, small_bank, raw=True)
        stack = transform(img, small_bank)
        np.testing.assert_allclose(
            raw, np.moveaxis(np.abs(stack.planes), 0, -1), rtol=1e-12
        )

    def test_dataset_jets_stacks_samples(self, small_bank, rng):
        images = [rand_image(rng, 16, 16) for _ in range(3)]
        ds = LabeledDataset(samples=tuple((im, f"s{i}") for i, im in enumerate(images)))
        jets = dataset_jets(ds, small_bank)
        assert jets.shape == (3, 16, 16, small_bank.params.num_kernels)
        np.testing.assert_allclose(jets[1], image_jets(images[1], small_bank))


class TestInteriorSafeMask:
    def test_matches_direct_computation(self, small_bank, rng):
        img = rand_image(rng, 32, 32)
        stats = local_stats(img, small_bank)
        mask = interior_safe_mask(stats, 1.0)
        expected = np.all(stats.alpha_c >= 2.0, axis=0)
        np.testing.assert_array_equal(mask, expected)

    def test_constant_image_all_unsafe(self, small_bank):
        stats = local_stats(GrayImage(np.full((20, 20), 9.0)), small_bank)
        assert not interior_safe_mask(stats, 1.0).any()

import math

import numpy as np
import pytest

from gaborjet import (
    BankParams,
    GrayImage,
    build_bank,
    convolve,
    transform,
)
from gaborjet.bank import check_compatible
from gaborjet.errors import ConfigError, IncompatibilityError

from conftest import rand_image


def kernel_value(params, scale, orientation, dx, dy):
    """Straight transcription of the sampling formula, one tap at a time."""
    k = params.frequency_scale * 2.0 ** (-(scale + 2) / 2.0)
    angle = math.pi * orientation / params.num_orientations
    kx, ky = k * math.cos(angle), k * math.sin(angle)
    sq = dx * dx + dy * dy
    envelope = (k * k / params.sigma**2) * math.exp(
        -k * k * sq / (2.0 * params.sigma**2)
    )
    carrier = complex(math.cos(kx * dx + ky * dy), math.sin(kx * dx + ky * dy))
    return envelope * (carrier - math.exp(-params.sigma**2 / 2.0))


def naive_convolve(pixels, taps, radius):
    """Tap-by-tap correlation with out-of-image taps skipped."""
    h, w = pixels.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for y in range(h):
        for x in range(w):
            acc = 0.0 + 0.0j
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    sy, sx = y - dy, x - dx
                    if 0 <= sy < h and 0 <= sx < w:
                        acc += pixels[sy, sx] * taps[radius + dy, radius + dx]
            out[y, x] = acc
    return out


class TestBankParams:
    def test_defaults(self):
        params = BankParams()
        assert params.num_scales == 5
        assert params.num_orientations == 8
        assert params.num_kernels == 40

    def test_rejects_bad_counts(self):
        with pytest.raises(ConfigError):
            BankParams(num_scales=0)
        with pytest.raises(ConfigError):
            BankParams(num_orientations=0)

    def test_rejects_bad_reals(self):
        with pytest.raises(ConfigError):
            BankParams(sigma=0.0)
        with pytest.raises(ConfigError):
            BankParams(frequency_scale=-1.0)
        with pytest.raises(ConfigError):
            BankParams(truncation=float("nan"))


class TestBuildBank:
    def test_default_bank_shape(self, default_bank):
        assert len(default_bank.kernels) == 40
        for j, kern in enumerate(default_bank.kernels):
            assert kern.index == j
            assert j == kern.orientation + 8 * kern.scale

    def test_default_radii(self, default_bank):
        radii = [default_bank.radius_at_scale(v) for v in range(5)]
        assert radii == [10, 15, 20, 29, 40]

    def test_radius_constant_across_orientations(self, default_bank):
        for v in range(5):
            radii = {k.radius for k in default_bank.kernels_at_scale(v)}
            assert len(radii) == 1

    def test_radius_quadruples_over_four_scales(self, default_bank):
        # k halves per two scale steps, so the window grows 4x from v=0
        # to v=4 (exact here because ceil introduces no slack at defaults).
        assert default_bank.radius_at_scale(4) == 4 * default_bank.radius_at_scale(0)

    def test_taps_match_formula(self, default_bank):
        params = default_bank.params
        for j in (0, 11, 39):
            kern = default_bank.kernels[j]
            r = kern.radius
            for dx, dy in ((0, 0), (1, 0), (0, -1), (r, r), (-r, 3), (2, -2)):
                expected = kernel_value(params, kern.scale, kern.orientation, dx, dy)
                assert kern.taps[r + dy, r + dx] == pytest.approx(
                    expected, rel=1e-12, abs=1e-300
                )

    def test_dc_residue_small(self, default_bank):
        for kern in default_bank.kernels:
            assert abs(kern.phi) <= 0.02 * kern.abs_sum

    def test_dc_correct_zeroes_phi(self):
        bank = build_bank(BankParams(num_scales=2, num_orientations=2, dc_correct=True))
        for kern in bank.kernels:
            assert kern.phi == 0j
            assert abs(kern.taps.sum()) < 1e-12 * kern.abs_sum

    def test_rejects_absurd_radius(self):
        with pytest.raises(ConfigError):
            build_bank(BankParams(frequency_scale=1e-5))

    def test_taps_read_only(self, default_bank):
        with pytest.raises(ValueError):
            default_bank.kernels[0].taps[0, 0] = 0.0


class TestKernelSymmetries:
    def test_quarter_turn_relates_orientations(self, default_bank):
        # The orientation at pi/2 is the orientation-0 kernel evaluated on
        # the grid rotated a quarter turn: psi_{u=4}(dx, dy) = psi_{u=0}(dy, -dx).
        for v in range(5):
            a = default_bank.kernels_at_scale(v)[0].taps
            b = default_bank.kernels_at_scale(v)[4].taps
            np.testing.assert_allclose(
                b, a.T[:, ::-1], rtol=0, atol=1e-12 * np.abs(a).max()
            )

    def test_point_reflection_conjugates(self, default_bank):
        # psi(-x) = conj(psi(x)): the envelope and the DC constant are real.
        for j in (0, 13, 27, 39):
            taps = default_bank.kernels[j].taps
            np.testing.assert_allclose(
                taps[::-1, ::-1],
                np.conj(taps),
                rtol=0,
                atol=1e-15 * np.abs(taps).max(),
            )


class TestConvolve:
    def test_delta_image_reproduces_taps(self, small_bank):
        kern = small_bank.kernels[1]
        r = kern.radius
        size = 2 * r + 5
        data = np.zeros((size, size))
        c = size // 2
        data[c, c] = 1.0
        img = GrayImage(data)
        for strategy in ("direct", "fft"):
            plane = convolve(img, kern, strategy)
            np.testing.assert_allclose(
                plane[c - r : c + r + 1, c - r : c + r + 1],
                kern.taps,
                atol=1e-12 * kern.abs_sum,
            )
            masked = plane.copy()
            masked[c - r : c + r + 1, c - r : c + r + 1] = 0.0
            np.testing.assert_allclose(masked, 0.0, atol=1e-12 * kern.abs_sum)

    def test_constant_image_dc_corrected_interior(self):
        bank = build_bank(BankParams(num_scales=1, num_orientations=2, dc_correct=True))
        kern = bank.kernels[0]
        r = kern.radius
        c = 200.0
        img = GrayImage(np.full((2 * r + 9, 2 * r + 9), c))
        plane = convolve(img, kern, "direct")
        interior = plane[r:-r, r:-r]
        np.testing.assert_allclose(interior, 0.0, atol=1e-9 * c * kern.abs_sum)

    def test_matches_naive_oracle(self, rng):
        # Small bank, small image: the quadruple loop is the border-policy
        # oracle that anchors both engine strategies.
        bank = build_bank(BankParams(num_scales=1, num_orientations=2))
        img = rand_image(rng, 12, 9)
        for kern in bank.kernels:
            expected = naive_convolve(img.pixels, kern.taps, kern.radius)
            for strategy in ("direct", "fft"):
                plane = convolve(img, kern, strategy)
                np.testing.assert_allclose(
                    plane, expected, atol=1e-9 * kern.abs_sum * 255.0
                )

    def test_fft_matches_direct_j13(self, default_bank, rng):
        img = rand_image(rng, 64, 64)
        kern = default_bank.kernels[13]
        direct = convolve(img, kern, "direct")
        fft = convolve(img, kern, "fft")
        rel = np.linalg.norm(fft - direct) / np.linalg.norm(direct)
        assert rel <= 1e-5

    def test_rejects_unknown_strategy(self, small_bank, rng):
        with pytest.raises(ConfigError):
            convolve(rand_image(rng, 8, 8), small_bank.kernels[0], "nope")


class TestTransform:
    def test_shapes_default_bank(self, default_bank, rng):
        img = rand_image(rng, 128, 128)
        stack = transform(img, default_bank)
        assert stack.planes.shape == (40, 128, 128)
        assert stack.phi_eff.shape == (40, 128, 128)
        assert np.all(np.isfinite(stack.planes.view(np.float64)))

    def test_zero_image(self, small_bank):
        stack = transform(GrayImage(np.zeros((32, 32))), small_bank)
        np.testing.assert_array_equal(stack.planes, 0.0)

    def test_strategies_agree(self, small_bank, rng):
        img = rand_image(rng, 40, 33)
        direct = transform(img, small_bank, "direct").planes
        fft = transform(img, small_bank, "fft").planes
        for j in range(small_bank.params.num_kernels):
            rel = np.linalg.norm(fft[j] - direct[j]) / np.linalg.norm(direct[j])
            assert rel <= 1e-5

    def test_linearity(self, small_bank, rng):
        # transform(a + b*I) = a*phi_eff + b*transform(I), the identity the
        # illumination invariance rests on; exact up to rounding, borders
        # included because phi_eff counts only applied taps.
        img = rand_image(rng, 32, 32, high=100.0)
        a, b = 10.0, 2.0
        mapped = GrayImage(a + b * img.pixels)
        lhs = transform(mapped, small_bank).planes
        base = transform(img, small_bank)
        rhs = a * base.phi_eff + b * base.planes
        scale = np.abs(rhs).max()
        np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-9 * scale)

    def test_effective_phi_matches_naive_window_sums(self, rng):
        bank = build_bank(BankParams(num_scales=1, num_orientations=2))
        kern = bank.kernels[1]
        r = kern.radius
        for h, w in ((9, 7), (25, 26)):
            phi = bank.effective_phi(h, w)[kern.index]
            for y in range(h):
                for x in range(w):
                    acc = 0.0 + 0.0j
                    for dy in range(max(-r, y - h + 1), min(r, y) + 1):
                        for dx in range(max(-r, x - w + 1), min(r, x) + 1):
                            acc += kern.taps[r + dy, r + dx]
                    assert phi[y, x] == pytest.approx(acc, abs=1e-12 * kern.abs_sum)

    def test_effective_phi_interior_equals_phi(self, small_bank):
        r = small_bank.radius_at_scale(small_bank.params.num_scales - 1)
        size = 2 * r + 7
        phi = small_bank.effective_phi(size, size)
        for kern in small_bank.kernels:
            interior = phi[kern.index, r : size - r, r : size - r]
            np.testing.assert_allclose(
                interior, kern.phi, atol=1e-12 * kern.abs_sum
            )

    def test_check_compatible(self, small_bank, default_bank, rng):
        stack = transform(rand_image(rng, 16, 16), small_bank)
        check_compatible(stack, small_bank)
        with pytest.raises(IncompatibilityError):
            check_compatible(stack, default_bank)

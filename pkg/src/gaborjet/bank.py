"""Gabor filter bank construction and complex convolution engines.

The bank samples one complex kernel per (scale, orientation) pair on an
integer grid. Scale v has wavenumber k_v = frequency_scale * 2**(-(v+2)/2)
and orientation u has angle pi*u/U, so kernel index j = u + U*v. Each
kernel lives on the square [-r, r]^2 with r = ceil(truncation * sigma / k_v),
which depends on the scale only.

Convolution follows plane(x) = sum over x' of I(x') * psi(x - x'), with taps
that fall outside the image skipped (zero padding). Because the skipped taps
change the kernel's effective sum near the borders, the per-pixel sum of the
taps actually applied is computed exactly via prefix sums and carried on the
response; downstream normalization depends on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as _fft
from scipy import signal as _signal

from .errors import ConfigError, IncompatibilityError
from .image import GrayImage

TWO_PI = 2.0 * math.pi

MAX_KERNEL_RADIUS = 4096
DC_RESIDUE_LIMIT = 0.02

STRATEGIES = ("direct", "fft")


@dataclass(frozen=True)
class BankParams:
    """Filter bank shape and sampling parameters.

    Defaults give the standard 40-kernel bank: 5 scales, 8 orientations,
    sigma = 2*pi, frequency_scale = pi (so the top wavenumber is pi/2),
    truncation 2.5 (the Gaussian envelope keeps under 5% amplitude at the
    window edge). ``dc_correct`` subtracts the tap mean so every kernel
    sums to exactly zero; off by default, where the small truncation
    residue is kept and tracked instead.
    """

    num_scales: int = 5
    num_orientations: int = 8
    sigma: float = TWO_PI
    frequency_scale: float = math.pi
    truncation: float = 2.5
    dc_correct: bool = False

    def __post_init__(self):
        if self.num_scales < 1:
            raise ConfigError(f"num_scales must be >= 1, got {self.num_scales}")
        if self.num_orientations < 1:
            raise ConfigError(
                f"num_orientations must be >= 1, got {self.num_orientations}"
            )
        for name in ("sigma", "frequency_scale", "truncation"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigError(f"{name} must be finite and > 0, got {value}")

    @property
    def num_kernels(self) -> int:
        return self.num_scales * self.num_orientations


@dataclass(frozen=True, eq=False)
class GaborKernel:
    """One sampled kernel.

    ``taps[r + dy, r + dx]`` holds the kernel value at offset (dx, dy),
    ``phi`` is the sum of all taps (the DC coupling constant), and
    ``abs_sum`` the sum of tap magnitudes used to bound the DC residue.
    """

    index: int
    scale: int
    orientation: int
    k_vec: tuple[float, float]
    radius: int
    taps: np.ndarray
    phi: complex
    abs_sum: float


@dataclass(eq=False)
class FilterBank:
    """An immutable kernel set plus internal per-shape caches.

    ``kernels`` is ordered by index j = orientation + U * scale. The caches
    memoize kernel spectra and effective tap-sum planes keyed by image
    dimensions; they only ever hold values derived from the immutable
    kernels, so sharing a bank across workers is safe.
    """

    params: BankParams
    kernels: tuple[GaborKernel, ...]
    _spectra: dict = field(default_factory=dict, repr=False)
    _phi_eff: dict = field(default_factory=dict, repr=False)

    def radius_at_scale(self, scale: int) -> int:
        return self.kernels[scale * self.params.num_orientations].radius

    def kernels_at_scale(self, scale: int) -> tuple[GaborKernel, ...]:
        u = self.params.num_orientations
        return self.kernels[scale * u : (scale + 1) * u]

    def _kernel_spectra(self, scale: int, shape: tuple[int, int]) -> list[np.ndarray]:
        key = (scale, shape)
        if key not in self._spectra:
            self._spectra[key] = [
                _fft.fft2(kern.taps, shape) for kern in self.kernels_at_scale(scale)
            ]
        return self._spectra[key]

    def effective_phi(self, height: int, width: int) -> np.ndarray:
        """Per-pixel effective tap sums for every kernel, shape (J, h, w).

        Interior pixels see the full kernel, so their value equals ``phi``;
        near the borders only the taps that land inside the image count.
        """
        key = (height, width)
        if key not in self._phi_eff:
            planes = np.empty(
                (self.params.num_kernels, height, width), dtype=np.complex128
            )
            for kern in self.kernels:
                planes[kern.index] = _effective_tap_sums(
                    kern.taps, kern.radius, height, width
                )
            planes.flags.writeable = False
            self._phi_eff[key] = planes
        return self._phi_eff[key]


@dataclass(frozen=True, eq=False)
class ResponseStack:
    """Complex convolution planes for every kernel over one image.

    ``planes[j]`` is the response of kernel j; ``phi_eff[j]`` the matching
    per-pixel effective tap sums (shared, read-only).
    """

    planes: np.ndarray
    phi_eff: np.ndarray
    params: BankParams

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


def _sample_kernel(
    k: float, kx: float, ky: float, sigma: float, radius: int
) -> np.ndarray:
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    dx = coords[None, :]
    dy = coords[:, None]
    sq = dx * dx + dy * dy
    envelope = (k * k / (sigma * sigma)) * np.exp(
        -k * k * sq / (2.0 * sigma * sigma)
    )
    carrier = np.exp(1j * (kx * dx + ky * dy))
    # Subtracting the constant makes the continuous kernel integrate to zero;
    # truncation to the finite grid leaves a small residue.
    return envelope * (carrier - math.exp(-sigma * sigma / 2.0))


def build_bank(params: BankParams) -> FilterBank:
    """Sample every kernel of the bank.

    Args:
        params: bank shape and sampling parameters.

    Returns:
        The bank with kernels ordered by index.

    Raises:
        ConfigError: a window radius exceeds 4096 pixels, or the DC residue
            of some kernel exceeds 2% of its tap magnitude sum (both signal
            absurd parameter choices).
    """
    kernels: list[GaborKernel] = []
    for v in range(params.num_scales):
        k = params.frequency_scale * 2.0 ** (-(v + 2) / 2.0)
        radius = math.ceil(params.truncation * params.sigma / k)
        if radius > MAX_KERNEL_RADIUS:
            raise ConfigError(
                f"kernel radius {radius} at scale {v} exceeds {MAX_KERNEL_RADIUS}"
            )
        for u in range(params.num_orientations):
            angle = math.pi * u / params.num_orientations
            kx = k * math.cos(angle)
            ky = k * math.sin(angle)
            taps = _sample_kernel(k, kx, ky, params.sigma, radius)
            if params.dc_correct:
                taps = taps - taps.mean()
                phi = 0j
            else:
                phi = complex(taps.sum())
            abs_sum = float(np.abs(taps).sum())
            if abs_sum <= 0.0:
                raise ConfigError(f"kernel {u + params.num_orientations * v} is zero")
            if not params.dc_correct and abs(phi) > DC_RESIDUE_LIMIT * abs_sum:
                raise ConfigError(
                    f"kernel at scale {v}, orientation {u} has DC residue "
                    f"{abs(phi) / abs_sum:.4f} of its tap magnitude sum; "
                    f"the truncation window is too small"
                )
            taps.flags.writeable = False
            kernels.append(
                GaborKernel(
                    index=u + params.num_orientations * v,
                    scale=v,
                    orientation=u,
                    k_vec=(kx, ky),
                    radius=radius,
                    taps=taps,
                    phi=phi,
                    abs_sum=abs_sum,
                )
            )
    return FilterBank(params=params, kernels=tuple(kernels))


def _effective_tap_sums(
    taps: np.ndarray, radius: int, height: int, width: int
) -> np.ndarray:
    """Exact per-pixel sums of the taps that land inside the image.

    At pixel x the applied offsets are dx in [max(-r, x - w + 1), min(r, x)]
    and likewise for dy, so each pixel needs one rectangle sum over the tap
    grid, served by a padded prefix table.
    """
    prefix = np.zeros((2 * radius + 2, 2 * radius + 2), dtype=np.complex128)
    prefix[1:, 1:] = taps.cumsum(axis=0).cumsum(axis=1)
    xs = np.arange(width)
    ys = np.arange(height)
    lo_x = np.maximum(-radius, xs - width + 1) + radius
    hi_x = np.minimum(radius, xs) + radius
    lo_y = np.maximum(-radius, ys - height + 1) + radius
    hi_y = np.minimum(radius, ys) + radius
    return (
        prefix[np.ix_(hi_y + 1, hi_x + 1)]
        - prefix[np.ix_(lo_y, hi_x + 1)]
        - prefix[np.ix_(hi_y + 1, lo_x)]
        + prefix[np.ix_(lo_y, lo_x)]
    )


def _convolve_direct(pixels: np.ndarray, taps: np.ndarray) -> np.ndarray:
    return _signal.convolve2d(
        pixels, taps, mode="same", boundary="fill", fillvalue=0.0
    )


def _fft_shape(height: int, width: int, radius: int) -> tuple[int, int]:
    size = 2 * radius + 1
    return (
        _fft.next_fast_len(height + size - 1),
        _fft.next_fast_len(width + size - 1),
    )


def _convolve_fft_one(
    pixels: np.ndarray, taps: np.ndarray, radius: int
) -> np.ndarray:
    h, w = pixels.shape
    shape = _fft_shape(h, w, radius)
    spectrum = _fft.fft2(pixels, shape) * _fft.fft2(taps, shape)
    full = _fft.ifft2(spectrum)
    # The centered slice of the full linear convolution matches the
    # skip-outside-taps border policy exactly.
    return np.ascontiguousarray(full[radius : radius + h, radius : radius + w])


def convolve(image: GrayImage, kernel: GaborKernel, strategy: str = "fft") -> np.ndarray:
    """Convolve one image with one kernel.

    Args:
        image: source image.
        kernel: a bank kernel.
        strategy: "direct" (spatial, the reference) or "fft" (zero-padded
            spectral product, cropped back).

    Returns:
        Complex plane of the image shape: at each pixel the sum of
        I(x') * psi(x - x') over the offsets that land inside the image.
    """
    if strategy == "direct":
        return _convolve_direct(image.pixels, kernel.taps)
    if strategy == "fft":
        return _convolve_fft_one(image.pixels, kernel.taps, kernel.radius)
    raise ConfigError(f"unknown convolution strategy {strategy!r}")


def transform(image: GrayImage, bank: FilterBank, strategy: str = "fft") -> ResponseStack:
    """Convolve an image with every kernel of the bank.

    The fft strategy pads the image once per scale (all kernels of a scale
    share a window size) and reuses cached kernel spectra, so repeated
    transforms at one image size cost little beyond the inverse transforms.

    Args:
        image: source image.
        bank: filter bank.
        strategy: "direct" or "fft".

    Returns:
        ResponseStack with one complex plane per kernel, in index order,
        plus the per-pixel effective tap sums.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown convolution strategy {strategy!r}")
    h, w = image.pixels.shape
    planes = np.empty((bank.params.num_kernels, h, w), dtype=np.complex128)
    if strategy == "direct":
        for kern in bank.kernels:
            planes[kern.index] = _convolve_direct(image.pixels, kern.taps)
    else:
        for v in range(bank.params.num_scales):
            radius = bank.radius_at_scale(v)
            shape = _fft_shape(h, w, radius)
            image_spectrum = _fft.fft2(image.pixels, shape)
            spectra = bank._kernel_spectra(v, shape)
            for kern, spec in zip(bank.kernels_at_scale(v), spectra):
                full = _fft.ifft2(image_spectrum * spec)
                planes[kern.index] = full[radius : radius + h, radius : radius + w]
    return ResponseStack(
        planes=planes, phi_eff=bank.effective_phi(h, w), params=bank.params
    )


def check_compatible(stack: ResponseStack, bank: FilterBank) -> None:
    """Raise if a response stack was not produced by an equal bank."""
    if stack.params != bank.params:
        raise IncompatibilityError(
            "response stack and bank were built with different parameters"
        )

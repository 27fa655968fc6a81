"""Local illumination normalization of Gabor coefficients.

Each coefficient is modeled as response = alpha_b * phi + alpha_c * g0,
where alpha_b and alpha_c are the local mean and standard deviation of the
image over the kernel's own window. Removing the brightness term and
dividing by contrast yields coefficients invariant, pixel by pixel, under
any local affine change a + b * I of the illumination, as long as the
contrast floor epsilon_c does not engage.

The statistics window equals the kernel truncation window (same half-width,
same border clamping), which is what makes the decomposition exact even at
image borders, where the effective per-pixel tap sum replaces phi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import FilterBank, ResponseStack, transform
from .errors import ConfigError, DataError, IncompatibilityError
from .image import GrayImage, LabeledDataset, build_sat, window_stats_planes

DEFAULT_EPSILON_C = 1.0


@dataclass(frozen=True, eq=False)
class StatsStack:
    """Local mean and std planes, one pair per scale.

    All orientations of a scale share one window size, so statistics are
    stored per scale: ``alpha_b[v]`` and ``alpha_c[v]`` are (h, w) planes
    computed with half-width ``half_widths[v]``.
    """

    alpha_b: np.ndarray
    alpha_c: np.ndarray
    half_widths: tuple[int, ...]

    @property
    def height(self) -> int:
        return self.alpha_b.shape[1]

    @property
    def width(self) -> int:
        return self.alpha_b.shape[2]


@dataclass(frozen=True, eq=False)
class NormalizedStack:
    """Illumination-normalized complex planes, one per kernel."""

    planes: np.ndarray
    epsilon_c: float
    params: object

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass(frozen=True, eq=False)
class Jet:
    """Coefficient magnitudes at one pixel, one entry per kernel."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if arr.ndim != 1:
            raise DataError("jet values must be a 1-D vector")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0:
            raise DataError("jet values must be finite and non-negative")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]


def local_stats(image: GrayImage, bank: FilterBank) -> StatsStack:
    """Windowed mean and population std of the image at every scale.

    The window for scale v is the kernel window of that scale: the square
    of half-width radius_at_scale(v), clamped at the image borders.

    Args:
        image: source image.
        bank: filter bank supplying the per-scale window sizes.

    Returns:
        StatsStack with one (alpha_b, alpha_c) plane pair per scale.
    """
    tables = build_sat(image)
    num_scales = bank.params.num_scales
    h, w = image.pixels.shape
    alpha_b = np.empty((num_scales, h, w), dtype=np.float64)
    alpha_c = np.empty((num_scales, h, w), dtype=np.float64)
    half_widths = []
    for v in range(num_scales):
        radius = bank.radius_at_scale(v)
        mean, std = window_stats_planes(tables, radius)
        alpha_b[v] = mean
        alpha_c[v] = std
        half_widths.append(radius)
    return StatsStack(alpha_b=alpha_b, alpha_c=alpha_c, half_widths=tuple(half_widths))


def normalize(
    responses: ResponseStack,
    stats: StatsStack,
    bank: FilterBank,
    epsilon_c: float = DEFAULT_EPSILON_C,
) -> NormalizedStack:
    """Remove local brightness and contrast from every coefficient.

    Per kernel j at scale v, the output is
    (response - alpha_b[v] * phi_eff[j]) / max(alpha_c[v], epsilon_c),
    with the per-pixel effective tap sum standing in for phi so the
    subtraction stays exact at image borders.

    Args:
        responses: convolution planes of one image.
        stats: local statistics of the same image under the same bank.
        bank: the bank that produced both.
        epsilon_c: contrast floor, > 0; keeps flat patches finite. The
            default of 1.0 sits at the quantization noise of 8-bit input.

    Returns:
        NormalizedStack of the same shape.
    """
    if not epsilon_c > 0.0:
        raise ConfigError(f"epsilon_c must be > 0, got {epsilon_c}")
    if responses.params != bank.params:
        raise IncompatibilityError("responses were built with a different bank")
    if (stats.height, stats.width) != (responses.height, responses.width):
        raise IncompatibilityError(
            "responses and stats come from different image sizes"
        )
    num_orient = bank.params.num_orientations
    out = np.empty_like(responses.planes)
    for v in range(bank.params.num_scales):
        denom = np.maximum(stats.alpha_c[v], epsilon_c)
        for kern in bank.kernels_at_scale(v):
            j = kern.index
            out[j] = (
                responses.planes[j] - stats.alpha_b[v] * responses.phi_eff[j]
            ) / denom
    return NormalizedStack(planes=out, epsilon_c=epsilon_c, params=responses.params)


def jet_at(normalized: NormalizedStack, x: tuple[int, int]) -> Jet:
    """Magnitude jet at one pixel.

    Args:
        normalized: normalized planes.
        x: (x, y) pixel coordinates.

    Returns:
        Jet of per-kernel magnitudes at that pixel.

    Raises:
        DataError: coordinates outside the image.
    """
    px, py = x
    if not (0 <= px < normalized.width and 0 <= py < normalized.height):
        raise DataError(
            f"pixel ({px}, {py}) outside image "
            f"{normalized.width}x{normalized.height}"
        )
    return Jet(np.abs(normalized.planes[:, py, px]))


def jets_field(normalized: NormalizedStack) -> np.ndarray:
    """Magnitudes of every coefficient, rearranged to (h, w, J)."""
    return np.ascontiguousarray(np.moveaxis(np.abs(normalized.planes), 0, -1))


def image_jets(
    image: GrayImage,
    bank: FilterBank,
    epsilon_c: float = DEFAULT_EPSILON_C,
    strategy: str = "fft",
    raw: bool = False,
) -> np.ndarray:
    """Full pipeline from an image to its per-pixel magnitude jets.

    Args:
        image: source image.
        bank: filter bank.
        epsilon_c: contrast floor for normalization.
        strategy: convolution strategy.
        raw: skip normalization and take magnitudes of the plain
            convolution planes (used for before/after comparisons).

    Returns:
        Array of shape (h, w, J) with non-negative magnitudes.
    """
    responses = transform(image, bank, strategy)
    if raw:
        return np.ascontiguousarray(np.moveaxis(np.abs(responses.planes), 0, -1))
    stats = local_stats(image, bank)
    return jets_field(normalize(responses, stats, bank, epsilon_c))


def dataset_jets(
    dataset: LabeledDataset,
    bank: FilterBank,
    epsilon_c: float = DEFAULT_EPSILON_C,
    strategy: str = "fft",
    raw: bool = False,
) -> np.ndarray:
    """Jets for every sample of a dataset, shape (T, h, w, J)."""
    out = np.empty(
        (
            len(dataset.samples),
            dataset.height,
            dataset.width,
            bank.params.num_kernels,
        ),
        dtype=np.float64,
    )
    for t, (image, _) in enumerate(dataset.samples):
        out[t] = image_jets(image, bank, epsilon_c, strategy, raw)
    return out


def interior_safe_mask(
    stats: StatsStack, epsilon_c: float, factor: float = 2.0
) -> np.ndarray:
    """Pixels whose contrast clears the floor with margin at every scale.

    Where alpha_c >= factor * epsilon_c for all scales, the floor stays
    inactive even after the contrast is halved, so affine changes of the
    illumination with b >= 1/factor leave normalized coefficients exact.
    """
    return np.all(stats.alpha_c >= factor * epsilon_c, axis=0)

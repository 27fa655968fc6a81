"""Image representation, loading, eye-based alignment, and windowed statistics.

Pixels are kept as float64 on the 0..255 gray scale throughout. Summed-area
tables give O(1) clamped-window sums, which makes the per-pixel local mean
and standard deviation cheap at every window size the filter bank needs.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage

from .errors import ConfigError, DataError, FormatError, GeometryError

CANONICAL_SIZE = 128
CANONICAL_LEFT_EYE = (40.0, 52.0)
CANONICAL_RIGHT_EYE = (88.0, 52.0)
MIN_EYE_DISTANCE = 8.0

EYES_SIDECAR_SUFFIX = ".eyes"
IMAGE_SUFFIXES = (".pgm", ".png")

_PGM_MAGIC = b"P5"
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class GrayImage:
    """A grayscale raster stored as a (height, width) float64 array.

    ``in_range`` is True for ordinary images, whose values must lie in
    [0, 255]. It is False only for synthetic frames produced with clipping
    disabled; those may exceed the 8-bit range and exist to exercise the
    normalization algebra, never to be written out as-is.
    """

    pixels: np.ndarray
    in_range: bool = True

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise FormatError("image must be a non-empty 2-D raster")
        if not np.all(np.isfinite(arr)):
            raise FormatError("image contains non-finite values")
        if self.in_range and (arr.min() < 0.0 or arr.max() > 255.0):
            raise FormatError("gray levels outside [0, 255]")
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def is_canonical(self) -> bool:
        return self.width == CANONICAL_SIZE and self.height == CANONICAL_SIZE


@dataclass(frozen=True)
class EyeCoords:
    """Sub-pixel eye centers, origin at the top-left corner, x to the right.

    ``left`` is the eye with the smaller x as seen in the image.
    """

    left: tuple[float, float]
    right: tuple[float, float]

    def __post_init__(self):
        lx, ly = self.left
        rx, ry = self.right
        for value in (lx, ly, rx, ry):
            if not math.isfinite(value):
                raise GeometryError("eye coordinates must be finite")
        if lx >= rx:
            raise GeometryError(
                f"left eye x ({lx}) must be smaller than right eye x ({rx})"
            )


@dataclass(frozen=True, eq=False)
class SummedAreaTables:
    """Prefix-sum tables over intensities and squared intensities.

    Both tables are padded with a leading zero row and column, so
    ``sat[y + 1, x + 1]`` is the sum over all pixels with row <= y and
    column <= x. The padding keeps rectangle lookups branch-free.
    """

    sat: np.ndarray
    sq_sat: np.ndarray

    @property
    def height(self) -> int:
        return self.sat.shape[0] - 1

    @property
    def width(self) -> int:
        return self.sat.shape[1] - 1

    def rect_sum(self, x0: int, y0: int, x1: int, y1: int) -> float:
        """Sum of intensities over the inclusive rectangle (x0, y0)-(x1, y1)."""
        s = self.sat
        return float(s[y1 + 1, x1 + 1] - s[y0, x1 + 1] - s[y1 + 1, x0] + s[y0, x0])

    def rect_sq_sum(self, x0: int, y0: int, x1: int, y1: int) -> float:
        """Sum of squared intensities over the same inclusive rectangle."""
        s = self.sq_sat
        return float(s[y1 + 1, x1 + 1] - s[y0, x1 + 1] - s[y1 + 1, x0] + s[y0, x0])


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Images paired with subject labels, all sharing one frame size."""

    samples: tuple[tuple[GrayImage, str], ...]

    def __post_init__(self):
        if not self.samples:
            raise DataError("dataset contains no samples")
        dims = {(img.height, img.width) for img, _ in self.samples}
        if len(dims) != 1:
            raise DataError(f"dataset mixes image sizes: {sorted(dims)}")
        for _, label in self.samples:
            if not label:
                raise DataError("dataset sample with an empty subject label")

    @property
    def height(self) -> int:
        return self.samples[0][0].height

    @property
    def width(self) -> int:
        return self.samples[0][0].width

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for _, label in self.samples)

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.labels)))

    @property
    def num_classes(self) -> int:
        return len(set(self.labels))

    def require_classes(self, minimum: int) -> None:
        if self.num_classes < minimum:
            raise DataError(
                f"dataset has {self.num_classes} class(es); "
                f"at least {minimum} classes required"
            )


def load_image(path: str) -> GrayImage:
    """Load an 8-bit grayscale image from a binary PGM or PNG file.

    Color PNG content is reduced to gray by the luminance combination
    0.299 R + 0.587 G + 0.114 B.

    Args:
        path: file to read; the format is detected from magic bytes.

    Returns:
        The decoded image with values in [0, 255].

    Raises:
        DataError: the file cannot be read.
        FormatError: the contents are not 8-bit PGM or PNG.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read image file {path!r}: {exc}") from None
    if blob[:2] == _PGM_MAGIC:
        return _decode_pgm(blob, path)
    if blob[:8] == _PNG_MAGIC:
        return _decode_png(blob, path)
    raise FormatError(f"{path!r}: unsupported format, need binary PGM (P5) or PNG")


def _decode_pgm(blob: bytes, path: str) -> GrayImage:
    # Header: "P5", width, height, maxval as ASCII tokens; '#' starts a
    # comment; a single whitespace byte separates the header from the raster.
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise FormatError(f"{path!r}: malformed PGM header near byte {start}")
        fields.append(int(token))
    width, height, maxval = fields
    pos += 1
    if width < 1 or height < 1:
        raise FormatError(f"{path!r}: empty PGM raster {width}x{height}")
    if maxval > 255:
        raise FormatError(
            f"{path!r}: PGM maxval {maxval} exceeds 255; only 8-bit is supported"
        )
    if maxval < 1:
        raise FormatError(f"{path!r}: invalid PGM maxval {maxval}")
    data = blob[pos : pos + width * height]
    if len(data) < width * height:
        raise FormatError(f"{path!r}: truncated PGM raster")
    arr = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
    return GrayImage(arr.reshape(height, width))


def _decode_png(blob: bytes, path: str) -> GrayImage:
    try:
        with _PILImage.open(io.BytesIO(blob)) as img:
            img.load()
            mode = img.mode
            if mode == "L":
                arr = np.asarray(img, dtype=np.float64)
            elif mode in ("RGB", "RGBA", "P", "LA"):
                rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
                arr = rgb @ _LUMA_WEIGHTS
            else:
                raise FormatError(
                    f"{path!r}: unsupported PNG mode {mode!r}; only 8-bit "
                    "grayscale or color is supported"
                )
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"{path!r}: cannot decode PNG: {exc}") from None
    return GrayImage(arr)


def save_pgm(image: GrayImage, path: str) -> None:
    """Write an image as binary 8-bit PGM, rounding and clamping to 0..255."""
    arr = np.clip(np.rint(image.pixels), 0.0, 255.0).astype(np.uint8)
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def _bilinear_sample(arr: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``arr`` at float coordinates, zero outside the raster."""
    h, w = arr.shape
    x0f = np.floor(sx)
    y0f = np.floor(sy)
    fx = sx - x0f
    fy = sy - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    out = np.zeros(sx.shape, dtype=np.float64)
    for dy in (0, 1):
        wy = fy if dy else 1.0 - fy
        for dx in (0, 1):
            wx = fx if dx else 1.0 - fx
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            out[valid] += (wx * wy)[valid] * arr[yi[valid], xi[valid]]
    return out


def align_crop(image: GrayImage, eyes: EyeCoords) -> GrayImage:
    """Resample an image into the canonical eye-aligned 128x128 frame.

    A similarity transform (rotation, uniform scale, translation) maps the
    left eye to (40, 52) and the right eye to (88, 52). Output pixels are
    bilinearly interpolated; samples falling outside the source are 0.

    Args:
        image: source image of any size.
        eyes: eye centers in source coordinates.

    Returns:
        The canonical 128x128 crop.

    Raises:
        GeometryError: eyes out of bounds, reversed, or closer than
            8 source pixels.
    """
    h, w = image.pixels.shape
    for name, (ex, ey) in (("left", eyes.left), ("right", eyes.right)):
        if not (0.0 <= ex <= w - 1 and 0.0 <= ey <= h - 1):
            raise GeometryError(
                f"{name} eye ({ex}, {ey}) outside image bounds {w}x{h}"
            )
    p1 = complex(*eyes.left)
    p2 = complex(*eyes.right)
    if abs(p2 - p1) < MIN_EYE_DISTANCE:
        raise GeometryError(
            f"eye distance {abs(p2 - p1):.3f} below minimum {MIN_EYE_DISTANCE}"
        )
    q1 = complex(*CANONICAL_LEFT_EYE)
    q2 = complex(*CANONICAL_RIGHT_EYE)
    # One complex factor carries rotation and scale; solve dst = fwd*src + off
    # from the two eye correspondences, then invert for output-driven sampling.
    fwd = (q2 - q1) / (p2 - p1)
    off = q1 - fwd * p1
    ys, xs = np.mgrid[0:CANONICAL_SIZE, 0:CANONICAL_SIZE]
    src = (xs + 1j * ys - off) / fwd
    out = _bilinear_sample(image.pixels, src.real, src.imag)
    return GrayImage(out)


def build_sat(image: GrayImage) -> SummedAreaTables:
    """Build prefix-sum tables over intensities and squared intensities."""
    p = image.pixels
    h, w = p.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.float64)
    sq_sat = np.zeros((h + 1, w + 1), dtype=np.float64)
    sat[1:, 1:] = p.cumsum(axis=0).cumsum(axis=1)
    sq_sat[1:, 1:] = (p * p).cumsum(axis=0).cumsum(axis=1)
    return SummedAreaTables(sat, sq_sat)


def window_stats(
    tables: SummedAreaTables, center: tuple[int, int], half_width: int
) -> tuple[float, float]:
    """Mean and population standard deviation over a clamped square window.

    The window is the square of half-width ``half_width`` centered on
    ``center``, intersected with the image; it shrinks at the borders
    rather than inventing padding values.

    Args:
        tables: prefix sums of the image.
        center: (x, y) pixel inside the image.
        half_width: window half-width in pixels, at least 1.

    Returns:
        (mean, std); std is the population form (divide by the count) and
        never negative.
    """
    if half_width < 1:
        raise ConfigError(f"window half_width must be >= 1, got {half_width}")
    cx, cy = center
    w, h = tables.width, tables.height
    if not (0 <= cx < w and 0 <= cy < h):
        raise ConfigError(f"window center ({cx}, {cy}) outside image {w}x{h}")
    x0 = max(0, cx - half_width)
    x1 = min(w - 1, cx + half_width)
    y0 = max(0, cy - half_width)
    y1 = min(h - 1, cy + half_width)
    count = (x1 - x0 + 1) * (y1 - y0 + 1)
    mean = tables.rect_sum(x0, y0, x1, y1) / count
    var = tables.rect_sq_sum(x0, y0, x1, y1) / count - mean * mean
    # Rounding can push the variance of a near-constant window slightly
    # negative; clamp so std stays real.
    return mean, math.sqrt(max(var, 0.0))


def window_stats_planes(
    tables: SummedAreaTables, half_width: int
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized window_stats for every pixel at one half-width.

    Returns:
        (mean, std) arrays of the image shape.
    """
    if half_width < 1:
        raise ConfigError(f"window half_width must be >= 1, got {half_width}")
    w, h = tables.width, tables.height
    xs = np.arange(w)
    ys = np.arange(h)
    x0 = np.maximum(0, xs - half_width)
    x1 = np.minimum(w - 1, xs + half_width)
    y0 = np.maximum(0, ys - half_width)
    y1 = np.minimum(h - 1, ys + half_width)
    counts = np.outer(y1 - y0 + 1, x1 - x0 + 1).astype(np.float64)

    def rect(table: np.ndarray) -> np.ndarray:
        return (
            table[np.ix_(y1 + 1, x1 + 1)]
            - table[np.ix_(y0, x1 + 1)]
            - table[np.ix_(y1 + 1, x0)]
            + table[np.ix_(y0, x0)]
        )

    mean = rect(tables.sat) / counts
    var = rect(tables.sq_sat) / counts - mean * mean
    return mean, np.sqrt(np.maximum(var, 0.0))


def parse_eyes_file(path: str) -> EyeCoords:
    """Parse an eyes sidecar: four whitespace-separated decimals lx ly rx ry."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tokens = fh.read().split()
    except OSError as exc:
        raise DataError(f"cannot read eyes file {path!r}: {exc}") from None
    if len(tokens) != 4:
        raise FormatError(f"{path!r}: expected 4 numbers, got {len(tokens)}")
    try:
        lx, ly, rx, ry = (float(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path!r}: non-numeric eye coordinates") from None
    return EyeCoords(left=(lx, ly), right=(rx, ry))


def load_dataset(root: str, *, min_classes: int = 1) -> LabeledDataset:
    """Load a labeled dataset laid out as root/<subject_id>/<images>.

    Each image may have a sidecar "<image>.eyes" holding "lx ly rx ry";
    such images are eye-aligned into the canonical frame. Images without
    a sidecar must already be canonical 128x128.

    Args:
        root: dataset directory.
        min_classes: minimum number of distinct subjects required
            (pass 2 when the dataset feeds separability training).

    Returns:
        Samples ordered by subject id, then filename.

    Raises:
        DataError: missing or empty root, too few classes, or a
            non-canonical image without eye coordinates.
    """
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} is not a directory")
    subjects = sorted(
        name
        for name in os.listdir(root)
        if os.path.isdir(os.path.join(root, name))
    )
    samples: list[tuple[GrayImage, str]] = []
    for subject in subjects:
        subject_dir = os.path.join(root, subject)
        names = sorted(
            name
            for name in os.listdir(subject_dir)
            if name.lower().endswith(IMAGE_SUFFIXES)
        )
        for name in names:
            img_path = os.path.join(subject_dir, name)
            image = load_image(img_path)
            eyes_path = img_path + EYES_SIDECAR_SUFFIX
            if os.path.exists(eyes_path):
                image = align_crop(image, parse_eyes_file(eyes_path))
            elif not image.is_canonical():
                raise DataError(
                    f"{img_path!r} is {image.width}x{image.height}, not "
                    f"{CANONICAL_SIZE}x{CANONICAL_SIZE}, and has no "
                    f"{EYES_SIDECAR_SUFFIX} sidecar"
                )
            samples.append((image, subject))
    if not samples:
        raise DataError(f"dataset root {root!r} contains no images")
    dataset = LabeledDataset(tuple(samples))
    dataset.require_classes(min_classes)
    return dataset

"""Jet matching: enrollment, identification, evaluation, and perturbations.

A subject's template holds one averaged magnitude jet per feature point.
Identification extracts the probe's jets at the same points and ranks
subjects by the sum of per-point jet cosines. The perturbation helpers
apply controlled illumination changes (global affine, smoothly varying
affine field, half shadow) used by the evaluation harness, and the
synthetic dataset builder fabricates a small clip-free identity set for
end-to-end checks without any external data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bank import BankParams, FilterBank
from .errors import ConfigError, DataError, IncompatibilityError
from .image import CANONICAL_SIZE, GrayImage, LabeledDataset
from .normalize import DEFAULT_EPSILON_C, Jet, image_jets
from .select import FeaturePointSet

PERTURB_KINDS = ("global_affine", "smooth_field", "half_shadow")
SHADOW_SIDES = ("left", "right", "top", "bottom")

_RANDOM_GRID_SHAPE = (4, 4)
_RANDOM_GRID_A = (-25.0, 25.0)
_RANDOM_GRID_B = (0.7, 1.4)


@dataclass(frozen=True, eq=False)
class Template:
    """Per-subject enrollment: one averaged jet per feature point."""

    subject_id: str
    jets: np.ndarray
    num_enrolled: int

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.jets, dtype=np.float64))
        if arr.ndim != 2:
            raise DataError("template jets must have shape (points, coefficients)")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0:
            raise DataError("template jets must be finite and non-negative")
        object.__setattr__(self, "jets", arr)


@dataclass(frozen=True, eq=False)
class Gallery:
    """Everything identification needs: bank, floor, points, templates.

    ``raw`` galleries skip illumination normalization on both sides; they
    exist for before/after comparisons and are never persisted.
    """

    bank: FilterBank
    epsilon_c: float
    points: FeaturePointSet
    templates: tuple[Template, ...]
    raw: bool = False

    def __post_init__(self):
        ids = [t.subject_id for t in self.templates]
        if len(ids) != len(set(ids)):
            raise DataError("gallery templates must have unique subject ids")
        for t in self.templates:
            if t.jets.shape[0] != len(self.points):
                raise IncompatibilityError(
                    f"template {t.subject_id!r} has {t.jets.shape[0]} jets "
                    f"for {len(self.points)} feature points"
                )

    @property
    def subject_ids(self) -> tuple[str, ...]:
        return tuple(t.subject_id for t in self.templates)


@dataclass(frozen=True)
class MatchResult:
    """Subjects ranked by descending similarity."""

    ranking: tuple[str, ...]
    scores: tuple[float, ...]


@dataclass(frozen=True)
class EvalReport:
    """Identification accuracy over a probe set.

    ``cmc[k - 1]`` is the fraction of probes whose true subject appears
    within rank k; ``records`` holds (label, top subject, rank of the true
    subject) per probe; ``unenrolled`` counts skipped probes whose label
    had no template.
    """

    rank1: float
    cmc: tuple[float, ...]
    records: tuple[tuple[str, str, int], ...]
    unenrolled: int


@dataclass(frozen=True)
class PerturbSpec:
    """A deterministic illumination change.

    kind "global_affine" maps I to a + b * I. Kind "smooth_field" applies
    a per-pixel affine map whose (a, b) come from bilinear interpolation of
    a coarse cell grid; with ``grid`` None a 4x4 grid is drawn from the
    seed at application time. Kind "half_shadow" multiplies one half of the
    image by ``gain``. ``clip`` clamps the result to [0, 255]; tests that
    need the unclipped algebra turn it off.
    """

    kind: str
    a: float = 0.0
    b: float = 1.0
    grid: tuple | None = None
    side: str = "left"
    gain: float = 1.0
    clip: bool = True

    def __post_init__(self):
        if self.kind not in PERTURB_KINDS:
            raise ConfigError(
                f"perturbation kind must be one of {PERTURB_KINDS}, "
                f"got {self.kind!r}"
            )
        if self.kind == "global_affine" and not self.b > 0.0:
            raise ConfigError(f"global_affine b must be > 0, got {self.b}")
        if self.kind == "half_shadow":
            if self.side not in SHADOW_SIDES:
                raise ConfigError(
                    f"half_shadow side must be one of {SHADOW_SIDES}, "
                    f"got {self.side!r}"
                )
            if not self.gain > 0.0:
                raise ConfigError(f"half_shadow gain must be > 0, got {self.gain}")
        if self.kind == "smooth_field" and self.grid is not None:
            rows = self.grid
            if len(rows) < 1 or len(rows[0]) < 1:
                raise ConfigError("smooth_field grid must be non-empty")
            width = len(rows[0])
            for row in rows:
                if len(row) != width:
                    raise ConfigError("smooth_field grid must be rectangular")
                for cell in row:
                    if len(cell) != 2:
                        raise ConfigError(
                            "smooth_field grid cells must be (a, b) pairs"
                        )
                    if not cell[1] > 0.0:
                        raise ConfigError(
                            f"smooth_field b must be > 0, got {cell[1]}"
                        )


def jet_similarity(a, b) -> float:
    """Cosine similarity of two magnitude jets, 0 if either is zero.

    Args:
        a: Jet or 1-D array of non-negative magnitudes.
        b: same, equal length.

    Returns:
        Value in [0, 1].

    Raises:
        IncompatibilityError: length mismatch.
    """
    va = a.values if isinstance(a, Jet) else np.asarray(a, dtype=np.float64)
    vb = b.values if isinstance(b, Jet) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise IncompatibilityError(
            f"jet lengths differ: {va.shape[0]} vs {vb.shape[0]}"
        )
    norm_a = math.sqrt(float(np.dot(va, va)))
    norm_b = math.sqrt(float(np.dot(vb, vb)))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    value = float(np.dot(va, vb)) / (norm_a * norm_b)
    # Magnitudes are non-negative, so the cosine lives in [0, 1]; rounding
    # can nudge it past 1 by an ulp.
    return min(max(value, 0.0), 1.0)


def face_similarity(probe_jets, template: Template) -> float:
    """Sum of per-point jet similarities between a probe and a template.

    The gallery's point count is fixed, so the sum ranks identically to
    the mean.

    Args:
        probe_jets: (points, coefficients) array or list of Jet.
        template: enrolled subject.

    Returns:
        Sum over feature points of the jet cosine.

    Raises:
        IncompatibilityError: point count mismatch.
    """
    if isinstance(probe_jets, np.ndarray):
        rows = probe_jets
    else:
        rows = np.stack(
            [p.values if isinstance(p, Jet) else np.asarray(p) for p in probe_jets]
        )
    if rows.shape[0] != template.jets.shape[0]:
        raise IncompatibilityError(
            f"probe has {rows.shape[0]} points, template has "
            f"{template.jets.shape[0]}"
        )
    total = 0.0
    for row, tmpl_row in zip(rows, template.jets):
        total += jet_similarity(row, tmpl_row)
    return total


def _gather_points(field: np.ndarray, points: FeaturePointSet) -> np.ndarray:
    out = np.empty((len(points), field.shape[2]), dtype=np.float64)
    for i, (x, y) in enumerate(points.points):
        out[i] = field[y, x]
    return out


def _require_canonical(image: GrayImage, role: str) -> None:
    if not image.is_canonical():
        raise IncompatibilityError(
            f"{role} is {image.width}x{image.height}, gallery frame is "
            f"{CANONICAL_SIZE}x{CANONICAL_SIZE}"
        )


def enroll(
    images,
    subject_id: str,
    points: FeaturePointSet,
    bank: FilterBank,
    epsilon_c: float = DEFAULT_EPSILON_C,
    strategy: str = "fft",
    raw: bool = False,
) -> Template:
    """Build a subject template by averaging jets over enrollment images.

    Args:
        images: one or more canonical images of the subject.
        subject_id: label for the template.
        points: feature points shared by the gallery.
        bank: filter bank.
        epsilon_c: contrast floor.
        strategy: convolution strategy.
        raw: use unnormalized coefficient magnitudes.

    Returns:
        Template with the elementwise mean jet per point.

    Raises:
        DataError: empty image list.
    """
    images = list(images)
    if not images:
        raise DataError(f"enrollment of {subject_id!r} needs at least one image")
    stacks = []
    for image in images:
        _require_canonical(image, f"enrollment image of {subject_id!r}")
        field = image_jets(image, bank, epsilon_c, strategy, raw)
        stacks.append(_gather_points(field, points))
    jets = np.mean(np.stack(stacks), axis=0)
    return Template(subject_id=subject_id, jets=jets, num_enrolled=len(images))


def identify(probe: GrayImage, gallery: Gallery, strategy: str = "fft") -> MatchResult:
    """Rank every gallery subject against a probe image.

    Args:
        probe: canonical probe image.
        gallery: enrolled templates.
        strategy: convolution strategy.

    Returns:
        MatchResult sorted by descending score, ties broken by subject id.

    Raises:
        DataError: empty gallery.
        IncompatibilityError: probe size differs from the gallery frame.
    """
    if not gallery.templates:
        raise DataError("cannot identify against an empty gallery")
    _require_canonical(probe, "probe")
    field = image_jets(probe, gallery.bank, gallery.epsilon_c, strategy, gallery.raw)
    probe_jets = _gather_points(field, gallery.points)
    scored = sorted(
        ((face_similarity(probe_jets, t), t.subject_id) for t in gallery.templates),
        key=lambda pair: (-pair[0], pair[1]),
    )
    return MatchResult(
        ranking=tuple(sid for _, sid in scored),
        scores=tuple(score for score, _ in scored),
    )


def evaluate(
    gallery: Gallery, probes: LabeledDataset, strategy: str = "fft"
) -> EvalReport:
    """Closed-set identification accuracy over a probe set.

    Probes whose label has no template are counted and skipped.

    Args:
        gallery: enrolled templates.
        probes: labeled probe images.
        strategy: convolution strategy.

    Returns:
        EvalReport with rank-1 accuracy and the full CMC curve.

    Raises:
        DataError: no probes, or none with an enrolled label.
    """
    if not probes.samples:
        raise DataError("probe set is empty")
    enrolled = set(gallery.subject_ids)
    records: list[tuple[str, str, int]] = []
    unenrolled = 0
    for image, label in probes.samples:
        if label not in enrolled:
            unenrolled += 1
            continue
        result = identify(image, gallery, strategy)
        rank = result.ranking.index(label) + 1
        records.append((label, result.ranking[0], rank))
    if not records:
        raise DataError("no probe belongs to an enrolled subject")
    size = len(gallery.templates)
    total = len(records)
    cmc = tuple(
        sum(1 for _, _, rank in records if rank <= k) / total
        for k in range(1, size + 1)
    )
    return EvalReport(
        rank1=cmc[0], cmc=cmc, records=tuple(records), unenrolled=unenrolled
    )


def _bilinear_upsample(cells: np.ndarray, height: int, width: int) -> np.ndarray:
    """Stretch a coarse cell grid over the image by bilinear interpolation.

    Uses the lerp form a + t * (b - a), which reproduces constant grids
    exactly, so a constant field degenerates to precisely the global map.
    """
    cells = np.asarray(cells, dtype=np.float64)
    gh, gw = cells.shape
    ys = np.arange(height, dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)
    gy = ys * ((gh - 1) / (height - 1)) if height > 1 and gh > 1 else np.zeros(height)
    gx = xs * ((gw - 1) / (width - 1)) if width > 1 and gw > 1 else np.zeros(width)
    y0 = np.minimum(np.floor(gy).astype(np.int64), max(gh - 2, 0))
    x0 = np.minimum(np.floor(gx).astype(np.int64), max(gw - 2, 0))
    fy = (gy - y0)[:, None]
    fx = (gx - x0)[None, :]
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    top = cells[np.ix_(y0, x0)]
    top = top + fx * (cells[np.ix_(y0, x1)] - top)
    bottom = cells[np.ix_(y1, x0)]
    bottom = bottom + fx * (cells[np.ix_(y1, x1)] - bottom)
    return top + fy * (bottom - top)


def perturb(image: GrayImage, spec: PerturbSpec, seed: int = 0) -> GrayImage:
    """Apply an illumination perturbation.

    Args:
        image: source image.
        spec: what to apply.
        seed: drives the random grid when a smooth_field spec has none;
            otherwise unused.

    Returns:
        The perturbed image; clamped to [0, 255] when spec.clip is set,
        otherwise carried unclipped with its range flag reflecting the
        actual values.
    """
    p = image.pixels
    h, w = p.shape
    if spec.kind == "global_affine":
        out = spec.a + spec.b * p
    elif spec.kind == "half_shadow":
        out = p.copy()
        if spec.side == "left":
            out[:, : w // 2] *= spec.gain
        elif spec.side == "right":
            out[:, w // 2 :] *= spec.gain
        elif spec.side == "top":
            out[: h // 2, :] *= spec.gain
        else:
            out[h // 2 :, :] *= spec.gain
    else:
        grid = spec.grid
        if grid is None:
            rng = np.random.default_rng(seed)
            gh, gw = _RANDOM_GRID_SHAPE
            a_cells = rng.uniform(*_RANDOM_GRID_A, size=(gh, gw))
            b_cells = rng.uniform(*_RANDOM_GRID_B, size=(gh, gw))
        else:
            cells = np.asarray(grid, dtype=np.float64)
            a_cells = cells[:, :, 0]
            b_cells = cells[:, :, 1]
        a_plane = _bilinear_upsample(a_cells, h, w)
        b_plane = _bilinear_upsample(b_cells, h, w)
        out = a_plane + b_plane * p
    if spec.clip:
        return GrayImage(np.clip(out, 0.0, 255.0))
    in_range = bool(out.min() >= 0.0 and out.max() <= 255.0)
    return GrayImage(out, in_range=in_range)


def build_gallery(
    dataset: LabeledDataset,
    points: FeaturePointSet,
    bank: FilterBank,
    epsilon_c: float = DEFAULT_EPSILON_C,
    strategy: str = "fft",
    raw: bool = False,
) -> Gallery:
    """Enroll every subject of a dataset into a gallery.

    Templates are ordered by subject id; each averages all of the
    subject's images.
    """
    groups: dict[str, list[GrayImage]] = {}
    for image, label in dataset.samples:
        groups.setdefault(label, []).append(image)
    templates = tuple(
        enroll(groups[sid], sid, points, bank, epsilon_c, strategy, raw)
        for sid in sorted(groups)
    )
    return Gallery(
        bank=bank,
        epsilon_c=epsilon_c,
        points=points,
        templates=templates,
        raw=raw,
    )


def synthetic_base(size: int = CANONICAL_SIZE) -> np.ndarray:
    """A fixed face-like background: smooth shading plus two dark blobs.

    Values stay within roughly [100, 150] so that adding bounded textures
    keeps the composite comfortably inside [0, 255].
    """
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cx, cy = size / 2.0, size * 0.55
    face = np.exp(-(((xs - cx) / (size * 0.36)) ** 2 + ((ys - cy) / (size * 0.46)) ** 2))
    shading = np.cos(2.0 * np.pi * ys / size)
    eyes = np.zeros_like(face)
    for ex in (size * 0.31, size * 0.69):
        eyes += np.exp(
            -(((xs - ex) / (size * 0.06)) ** 2 + ((ys - size * 0.41) / (size * 0.05)) ** 2)
        )
    return 118.0 + 22.0 * face + 6.0 * shading - 14.0 * eyes


def synthetic_texture(rng: np.random.Generator, size: int = CANONICAL_SIZE) -> np.ndarray:
    """Band-limited random texture, peak magnitude scaled to 40 gray levels.

    White noise is filtered to an annulus of spatial frequencies that the
    middle bank scales respond to, so different draws produce textures the
    jets can actually tell apart.
    """
    noise = rng.standard_normal((size, size))
    freq = np.fft.fftfreq(size) * 2.0 * np.pi
    rho = np.hypot(freq[None, :], freq[:, None])
    mask = (rho >= 0.25) & (rho <= 0.9)
    texture = np.fft.ifft2(np.fft.fft2(noise) * mask).real
    peak = np.abs(texture).max()
    return texture * (40.0 / peak)


def make_synthetic_dataset(
    num_subjects: int = 10, seed: int = 20260821
) -> tuple[LabeledDataset, LabeledDataset]:
    """A clip-free synthetic identity set: enrollment and perturbed probes.

    Every subject is the shared base composited with a distinct band-limited
    texture. Each subject gets 2 enrollment images (the identity and a mild
    global affine variant) and 6 probes: 3 smoothly varying affine fields
    and 3 half shadows, all applied without clipping and parameterized so
    no value ever leaves [0, 255].

    Args:
        num_subjects: number of synthetic identities.
        seed: drives all texture and field draws.

    Returns:
        (enrollment dataset, probe dataset), both canonical-size.
    """
    if num_subjects < 2:
        raise ConfigError(f"num_subjects must be >= 2, got {num_subjects}")
    base = synthetic_base()
    rng = np.random.default_rng(seed)
    shadow_specs = [
        PerturbSpec(kind="half_shadow", side="left", gain=0.55, clip=False),
        PerturbSpec(kind="half_shadow", side="right", gain=0.6, clip=False),
        PerturbSpec(kind="half_shadow", side="top", gain=0.7, clip=False),
    ]
    enroll_samples: list[tuple[GrayImage, str]] = []
    probe_samples: list[tuple[GrayImage, str]] = []
    for s in range(num_subjects):
        label = f"subject{s:02d}"
        identity = GrayImage(base + synthetic_texture(rng))
        variant = perturb(
            identity, PerturbSpec(kind="global_affine", a=-5.0, b=1.04), seed=0
        )
        enroll_samples.append((identity, label))
        enroll_samples.append((variant, label))
        for _ in range(3):
            cells = tuple(
                tuple(
                    (float(rng.uniform(-15.0, 15.0)), float(rng.uniform(0.8, 1.2)))
                    for _ in range(4)
                )
                for _ in range(4)
            )
            spec = PerturbSpec(kind="smooth_field", grid=cells, clip=False)
            probe_samples.append((perturb(identity, spec), label))
        for spec in shadow_specs:
            probe_samples.append((perturb(identity, spec), label))
    return LabeledDataset(tuple(enroll_samples)), LabeledDataset(tuple(probe_samples))


def write_synthetic_dataset(
    enroll_root: str, probes_root: str, num_subjects: int = 10, seed: int = 20260821
) -> None:
    """Materialize the synthetic set on disk as 8-bit PGM trees."""
    import os

    from .image import save_pgm

    enroll_ds, probe_ds = make_synthetic_dataset(num_subjects, seed)
    counters: dict[tuple[str, str], int] = {}
    for root, dataset, prefix in (
        (enroll_root, enroll_ds, "e"),
        (probes_root, probe_ds, "p"),
    ):
        for image, label in dataset.samples:
            directory = os.path.join(root, label)
            os.makedirs(directory, exist_ok=True)
            count = counters.get((root, label), 0)
            counters[(root, label)] = count + 1
            save_pgm(image, os.path.join(directory, f"{prefix}{count}.pgm"))


def bank_params_of(gallery: Gallery) -> BankParams:
    """Convenience accessor used by persistence."""
    return gallery.bank.params

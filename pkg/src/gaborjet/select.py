"""Discriminative feature-point selection.

A per-pixel separability score (between-class scatter trace over
within-class scatter trace of the jets) marks locations that tell subjects
apart. Pixels above a threshold form the candidate set; a similarity-driven
k-means variant then thins the candidates to q points: assignment goes to
the center with the highest mean jet cosine over the training samples, and
centers move to the separability-weighted centroid of their members.

Clustering arithmetic deliberately runs in plain Python floats in candidate
order. That keeps every iteration reproducible bit for bit, which the
clustering tests pin against an independent reimplementation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bank import FilterBank
from .errors import ConfigError, DataError, TooFewCandidatesError
from .image import LabeledDataset
from .normalize import DEFAULT_EPSILON_C, dataset_jets

DEFAULT_SW_FLOOR = 1e-12

EPSILON0_MODES = ("absolute", "quantile")


@dataclass(frozen=True)
class SelectionConfig:
    """Thresholding and clustering parameters.

    ``epsilon0`` is the candidate threshold. In "absolute" mode a pixel
    qualifies when its separability exceeds epsilon0 (negative values
    accept everything and exist for tests). In "quantile" mode epsilon0 is
    the fraction of pixels that should survive, and the threshold is set
    from the separability distribution.

    ``q`` is the number of feature points, ``max_iterations`` caps the
    recentering rounds, and ``sw_floor`` is the within-class trace floor
    as a fraction of its image-wide mean.
    """

    epsilon0: float = 0.0
    epsilon0_mode: str = "absolute"
    q: int = 50
    max_iterations: int = 10
    sw_floor: float = DEFAULT_SW_FLOOR

    def __post_init__(self):
        if self.epsilon0_mode not in EPSILON0_MODES:
            raise ConfigError(
                f"epsilon0_mode must be one of {EPSILON0_MODES}, "
                f"got {self.epsilon0_mode!r}"
            )
        if self.epsilon0_mode == "quantile" and not 0.0 < self.epsilon0 <= 1.0:
            raise ConfigError(
                f"quantile epsilon0 must be in (0, 1], got {self.epsilon0}"
            )
        if self.q <= 1:
            raise ConfigError(
                f"q must satisfy 1 < q < N (candidate count), got q={self.q}"
            )
        if self.max_iterations < 1:
            raise ConfigError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if not (math.isfinite(self.sw_floor) and self.sw_floor >= 0.0):
            raise ConfigError(f"sw_floor must be >= 0, got {self.sw_floor}")


@dataclass(frozen=True, eq=False)
class ScatterTraces:
    """Within-class and between-class scatter traces per pixel."""

    tr_sw: np.ndarray
    tr_sb: np.ndarray
    num_samples: int
    num_classes: int


@dataclass(frozen=True, eq=False)
class SeparabilityMap:
    """Per-pixel separability with its source traces.

    ``degenerate`` flags pixels whose within-class trace vanished while the
    between-class trace did not; they received the map's maximum finite
    value since they separate classes with no within-class spread at all.
    """

    j_map: np.ndarray
    tr_sw: np.ndarray
    tr_sb: np.ndarray
    degenerate: np.ndarray
    floor: float
    num_samples: int
    num_classes: int

    @property
    def height(self) -> int:
        return self.j_map.shape[0]

    @property
    def width(self) -> int:
        return self.j_map.shape[1]


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Candidate pixels sorted by descending separability.

    ``coords[i]`` is the (x, y) of candidate i and ``j_values[i]`` its
    separability. Ties in the score are broken by row-major coordinate
    order, so the ordering is total and reproducible.
    """

    coords: np.ndarray
    j_values: np.ndarray
    threshold: float

    def __len__(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class ClusterState:
    """Snapshot of one clustering round.

    ``step`` counts recenterings performed so far, ``centers`` are the
    continuous (x, y) group centers the round assigned against, ``snapped``
    their pixel positions used for jet lookup, and ``changed`` whether the
    assignment differs from the previous round (the first round counts as
    changed).
    """

    step: int
    assignments: tuple[int, ...]
    centers: tuple[tuple[float, float], ...]
    snapped: tuple[tuple[int, int], ...]
    changed: bool


@dataclass(frozen=True)
class FeaturePointSet:
    """The final q feature points with provenance.

    ``j_values`` carries the separability at each point when a map was
    available (NaN otherwise); ``group_sizes`` the final member count of
    each cluster, or None for point sets reloaded from disk.
    """

    points: tuple[tuple[int, int], ...]
    j_values: tuple[float, ...]
    group_sizes: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return len(self.points)


def scatter_traces(jets: np.ndarray, labels) -> ScatterTraces:
    """Within- and between-class scatter traces of jets at every pixel.

    The trace of a scatter matrix is the sum of squared deviations, so no
    full matrix is formed: with class means m_c and global mean m,
    tr_sw = sum over classes and members of ||g - m_c||^2 and
    tr_sb = sum over classes of n_c * ||m_c - m||^2.

    Args:
        jets: array (T, h, w, J) of per-sample, per-pixel jets.
        labels: sequence of T subject labels.

    Returns:
        ScatterTraces with (h, w) planes.

    Raises:
        DataError: fewer than 2 samples or fewer than 2 distinct labels.
    """
    jets = np.asarray(jets, dtype=np.float64)
    if jets.ndim != 4:
        raise DataError(f"jets must have shape (T, h, w, J), got {jets.shape}")
    labels = list(labels)
    if len(labels) != jets.shape[0]:
        raise DataError(
            f"{len(labels)} labels for {jets.shape[0]} jet samples"
        )
    if len(labels) < 2:
        raise DataError("scatter computation needs at least 2 samples")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DataError(
            f"dataset has {len(classes)} class(es); at least 2 classes required"
        )
    global_mean = jets.mean(axis=0)
    h, w = jets.shape[1], jets.shape[2]
    tr_sw = np.zeros((h, w), dtype=np.float64)
    tr_sb = np.zeros((h, w), dtype=np.float64)
    for label in classes:
        idx = [i for i, lab in enumerate(labels) if lab == label]
        cls = jets[idx]
        class_mean = cls.mean(axis=0)
        tr_sw += ((cls - class_mean) ** 2).sum(axis=(0, 3))
        diff = class_mean - global_mean
        tr_sb += len(idx) * (diff * diff).sum(axis=2)
    return ScatterTraces(
        tr_sw=tr_sw,
        tr_sb=tr_sb,
        num_samples=len(labels),
        num_classes=len(classes),
    )


def separability_map(
    traces: ScatterTraces, sw_floor: float = DEFAULT_SW_FLOOR
) -> SeparabilityMap:
    """Ratio of between- to within-class trace with a floored denominator.

    The floor is ``sw_floor`` times the mean within-class trace, so it
    adapts to the data's scale. Pixels whose within-class trace falls under
    the floor while the between-class trace does not are degenerate but
    maximally discriminative; they get the map's maximum finite value
    (1.0 when no finite ratio exists anywhere). Pixels with both traces
    under the floor score 0.

    Args:
        traces: scatter traces.
        sw_floor: relative denominator floor, >= 0.

    Returns:
        SeparabilityMap with the ratio plane and provenance.
    """
    tr_sw = traces.tr_sw
    tr_sb = traces.tr_sb
    floor = sw_floor * float(tr_sw.mean())
    if floor <= 0.0:
        floor = float(np.finfo(np.float64).tiny)
    normal = tr_sw >= floor
    j_map = np.zeros_like(tr_sw)
    j_map[normal] = tr_sb[normal] / tr_sw[normal]
    degenerate = ~normal & (tr_sb >= floor)
    if degenerate.any():
        finite_max = float(j_map[normal].max()) if normal.any() else 0.0
        j_map[degenerate] = finite_max if finite_max > 0.0 else 1.0
    return SeparabilityMap(
        j_map=j_map,
        tr_sw=tr_sw,
        tr_sb=tr_sb,
        degenerate=degenerate,
        floor=floor,
        num_samples=traces.num_samples,
        num_classes=traces.num_classes,
    )


def candidates(smap: SeparabilityMap, config: SelectionConfig) -> CandidateSet:
    """All pixels whose separability exceeds the threshold.

    In quantile mode the threshold is the (1 - epsilon0) quantile of the
    map, so about epsilon0 of the pixels survive. Results are sorted by
    descending separability, ties broken row-major.

    Args:
        smap: separability map.
        config: selection parameters.

    Returns:
        CandidateSet, possibly empty; smallness is diagnosed at
        clustering time, where q is actually needed.
    """
    j = smap.j_map
    if config.epsilon0_mode == "quantile":
        threshold = float(np.quantile(j, 1.0 - config.epsilon0))
    else:
        threshold = float(config.epsilon0)
    ys, xs = np.nonzero(j > threshold)
    values = j[ys, xs]
    order = np.lexsort((xs, ys, -values))
    coords = np.stack([xs[order], ys[order]], axis=1).astype(np.int64)
    return CandidateSet(coords=coords, j_values=values[order], threshold=threshold)


def _snap(value: float) -> int:
    # Round half up, independent of the platform rounding mode.
    return int(math.floor(value + 0.5))


def _unit_jets_at(jets: np.ndarray, x: int, y: int) -> np.ndarray:
    """Unit-length jets of every sample at one pixel; zero jets stay zero."""
    g = np.ascontiguousarray(jets[:, y, x, :])
    norms = np.sqrt(np.einsum("tj,tj->t", g, g))
    out = np.zeros_like(g)
    nz = norms > 0.0
    out[nz] = g[nz] / norms[nz, None]
    return out


def _pair_mean_cosine(ua: np.ndarray, ub: np.ndarray) -> float:
    # Both inputs are unit rows (or zero rows), so the per-sample dot IS the
    # cosine and zero jets contribute 0 to the mean.
    return float(np.mean(np.einsum("tj,tj->t", ua, ub)))


def mean_similarity(a, b, jets: np.ndarray) -> float:
    """Mean cosine similarity of the jets at two points over all samples.

    Args:
        a: (x, y) of the first point; floats are snapped to the nearest
            pixel.
        b: (x, y) of the second point, same convention.
        jets: array (T, h, w, J).

    Returns:
        Mean over samples of the jet cosine; samples where either jet is
        the zero vector contribute 0.
    """
    t, h, w, _ = jets.shape
    ax, ay = _snap(a[0]), _snap(a[1])
    bx, by = _snap(b[0]), _snap(b[1])
    for px, py in ((ax, ay), (bx, by)):
        if not (0 <= px < w and 0 <= py < h):
            raise DataError(f"point ({px}, {py}) outside image {w}x{h}")
    return _pair_mean_cosine(
        _unit_jets_at(jets, ax, ay), _unit_jets_at(jets, bx, by)
    )


def run_clustering(
    pf: CandidateSet,
    config: SelectionConfig,
    jets: np.ndarray,
    smap: SeparabilityMap | None = None,
) -> tuple[FeaturePointSet, list[ClusterState]]:
    """Similarity-driven k-means over the candidates, with history.

    Centers start at the first q candidates (the q most separable points).
    Each round assigns every candidate to the center with the highest mean
    jet cosine, lowest group index on ties. While the assignment changed
    and the recentering budget is not exhausted, each non-empty group's
    center moves to the separability-weighted centroid of its members
    (empty groups keep their center) and the round repeats. The final
    centers, snapped to pixels, are the feature points; duplicate snapped
    positions are replaced by the group's best unused member.

    Args:
        pf: candidates in descending-separability order.
        config: clustering parameters; q and max_iterations are used here.
        jets: array (T, h, w, J) for similarity lookups.
        smap: optional map supplying each final point's separability.

    Returns:
        (FeaturePointSet, per-round ClusterState history).

    Raises:
        ConfigError: q <= 1.
        TooFewCandidatesError: fewer candidates than q + 1.
    """
    n = len(pf)
    q = config.q
    if q <= 1:
        raise ConfigError(f"q must satisfy 1 < q < N, got q={q}")
    if n <= q:
        raise TooFewCandidatesError(f"too few candidates: N={n}, q={q}")
    coords = [(int(x), int(y)) for x, y in pf.coords]
    weights = [float(v) for v in pf.j_values]
    cand_units = [_unit_jets_at(jets, x, y) for x, y in coords]
    centers = [(float(x), float(y)) for x, y in coords[:q]]
    previous: list[int] | None = None
    history: list[ClusterState] = []
    for step in range(config.max_iterations + 1):
        snapped = [(_snap(cx), _snap(cy)) for cx, cy in centers]
        center_units = [_unit_jets_at(jets, sx, sy) for sx, sy in snapped]
        assignments: list[int] = []
        for i in range(n):
            best = 0
            best_sim = _pair_mean_cosine(cand_units[i], center_units[0])
            for k in range(1, q):
                sim = _pair_mean_cosine(cand_units[i], center_units[k])
                if sim > best_sim:
                    best = k
                    best_sim = sim
            assignments.append(best)
        changed = previous is None or assignments != previous
        history.append(
            ClusterState(
                step=step,
                assignments=tuple(assignments),
                centers=tuple(centers),
                snapped=tuple(snapped),
                changed=changed,
            )
        )
        if not changed or step >= config.max_iterations:
            break
        new_centers: list[tuple[float, float]] = []
        for k in range(q):
            weight_sum = 0.0
            x_sum = 0.0
            y_sum = 0.0
            for i in range(n):
                if assignments[i] != k:
                    continue
                wgt = weights[i]
                weight_sum += wgt
                x_sum += wgt * coords[i][0]
                y_sum += wgt * coords[i][1]
            if weight_sum > 0.0:
                new_centers.append((x_sum / weight_sum, y_sum / weight_sum))
            else:
                # Empty group (or all-zero weights): the centroid is
                # undefined, keep the previous center.
                new_centers.append(centers[k])
        centers = new_centers
        previous = assignments
    final = history[-1]
    points = _distinct_points(final, pf)
    sizes = [0] * q
    for k in final.assignments:
        sizes[k] += 1
    if smap is not None:
        j_values = tuple(float(smap.j_map[y, x]) for x, y in points)
    else:
        j_values = tuple(math.nan for _ in points)
    return (
        FeaturePointSet(
            points=tuple(points), j_values=j_values, group_sizes=tuple(sizes)
        ),
        history,
    )


def _distinct_points(
    final: ClusterState, pf: CandidateSet
) -> list[tuple[int, int]]:
    """Resolve snapped-center collisions into q distinct pixels.

    The first group keeps a contested pixel; a later duplicate falls back
    to its own group's highest-separability member not already chosen, then
    to the best unchosen candidate overall. Candidates outnumber groups, so
    the fallback always succeeds.
    """
    q = len(final.snapped)
    members: list[list[int]] = [[] for _ in range(q)]
    for i, k in enumerate(final.assignments):
        members[k].append(i)  # candidate order == descending separability
    chosen: list[tuple[int, int]] = []
    used: set[tuple[int, int]] = set()
    for k in range(q):
        point = final.snapped[k]
        if point not in used:
            used.add(point)
            chosen.append(point)
            continue
        replacement = None
        for i in members[k]:
            coord = (int(pf.coords[i][0]), int(pf.coords[i][1]))
            if coord not in used:
                replacement = coord
                break
        if replacement is None:
            for i in range(len(pf)):
                coord = (int(pf.coords[i][0]), int(pf.coords[i][1]))
                if coord not in used:
                    replacement = coord
                    break
        if replacement is None:
            raise DataError("cannot produce q distinct feature points")
        used.add(replacement)
        chosen.append(replacement)
    return chosen


def cluster(
    pf: CandidateSet,
    config: SelectionConfig,
    jets: np.ndarray,
    smap: SeparabilityMap | None = None,
) -> FeaturePointSet:
    """run_clustering without the iteration history."""
    points, _ = run_clustering(pf, config, jets, smap)
    return points


def select_feature_points(
    dataset: LabeledDataset,
    bank: FilterBank,
    config: SelectionConfig,
    epsilon_c: float = DEFAULT_EPSILON_C,
    strategy: str = "fft",
) -> FeaturePointSet:
    """End-to-end selection: jets, traces, map, candidates, clustering.

    Args:
        dataset: labeled images, at least 2 classes.
        bank: filter bank.
        config: selection parameters.
        epsilon_c: contrast floor for normalization.
        strategy: convolution strategy.

    Returns:
        The q selected feature points.
    """
    dataset.require_classes(2)
    jets = dataset_jets(dataset, bank, epsilon_c, strategy)
    traces = scatter_traces(jets, dataset.labels)
    smap = separability_map(traces, config.sw_floor)
    pf = candidates(smap, config)
    return cluster(pf, config, jets, smap)

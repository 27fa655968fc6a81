"""Command-line surface: configuration, persistence, and reproducible runs.

Commands: select (feature points from a labeled dataset), enroll (build a
gallery), identify (rank gallery subjects against one probe), evaluate
(accuracy report over a probe set, with optional perturbation breakdown,
raw-vs-normalized comparison, and a sweep over point counts), and perturb
(write perturbed copies of a dataset).

Everything persisted is JSON with sorted keys, so identical inputs and
seeds give byte-identical outputs. Exit codes: 0 ok, 2 configuration
error, 3 data or I/O error, 4 incompatible inputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .bank import STRATEGIES, BankParams, build_bank
from .errors import (
    ConfigError,
    DataError,
    GaborJetError,
    IncompatibilityError,
)
from .image import (
    EYES_SIDECAR_SUFFIX,
    IMAGE_SUFFIXES,
    GrayImage,
    LabeledDataset,
    align_crop,
    load_dataset,
    load_image,
    parse_eyes_file,
    save_pgm,
)
from .match import (
    Gallery,
    PerturbSpec,
    Template,
    build_gallery,
    evaluate,
    identify,
    perturb,
)
from .normalize import dataset_jets
from .select import (
    FeaturePointSet,
    SelectionConfig,
    candidates,
    cluster,
    scatter_traces,
    separability_map,
)

GALLERY_FORMAT_VERSION = 1

_BANK_KEYS = (
    "num_scales",
    "num_orientations",
    "sigma",
    "frequency_scale",
    "truncation",
    "dc_correct",
)
_SELECTION_KEYS = ("epsilon0", "epsilon0_mode", "q", "max_iterations", "sw_floor")
_PATH_KEYS = (
    "dataset_root",
    "probes_root",
    "points",
    "gallery",
    "report",
    "jmap",
    "perturb_out",
)
_CONFIG_KEYS = (
    "bank",
    "epsilon_c",
    "selection",
    "perturbations",
    "paths",
    "sweep_q",
    "seed",
    "strategy",
)


@dataclass(frozen=True)
class RunConfig:
    """One run's worth of parameters and file locations."""

    bank: BankParams
    epsilon_c: float
    selection: SelectionConfig
    perturbations: tuple[PerturbSpec, ...]
    dataset_root: str | None
    probes_root: str | None
    points_path: str | None
    gallery_path: str | None
    report_path: str | None
    jmap_path: str | None
    perturb_out: str | None
    sweep_q: tuple[int, ...]
    seed: int
    strategy: str


def _check_keys(obj: dict, allowed, context: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown config field {context}.{key}")


def _as_number(value, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config field {field} must be a number")
    return float(value)


def _as_int(value, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"config field {field} must be an integer")
    return value


def _as_bool(value, field: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"config field {field} must be true or false")
    return value


def _as_str(value, field: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"config field {field} must be a string")
    return value


def _parse_perturbation(obj: dict, context: str) -> PerturbSpec:
    allowed = ("kind", "a", "b", "grid", "side", "gain", "clip")
    _check_keys(obj, allowed, context)
    if "kind" not in obj:
        raise ConfigError(f"config field {context}.kind is required")
    kwargs: dict = {"kind": _as_str(obj["kind"], f"{context}.kind")}
    if "a" in obj:
        kwargs["a"] = _as_number(obj["a"], f"{context}.a")
    if "b" in obj:
        kwargs["b"] = _as_number(obj["b"], f"{context}.b")
    if "side" in obj:
        kwargs["side"] = _as_str(obj["side"], f"{context}.side")
    if "gain" in obj:
        kwargs["gain"] = _as_number(obj["gain"], f"{context}.gain")
    if "clip" in obj:
        kwargs["clip"] = _as_bool(obj["clip"], f"{context}.clip")
    if obj.get("grid") is not None:
        try:
            kwargs["grid"] = tuple(
                tuple((float(cell[0]), float(cell[1])) for cell in row)
                for row in obj["grid"]
            )
        except (TypeError, IndexError, ValueError):
            raise ConfigError(
                f"config field {context}.grid must be rows of [a, b] cells"
            ) from None
    return PerturbSpec(**kwargs)


def parse_config(path: str) -> RunConfig:
    """Read and validate a JSON run configuration.

    Raises:
        DataError: the file cannot be read.
        ConfigError: malformed JSON or an invalid field; the message names
            the offending field.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read config {path!r}: {exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path!r} must be a JSON object")
    _check_keys(obj, _CONFIG_KEYS, "config")

    bank_obj = obj.get("bank", {})
    if not isinstance(bank_obj, dict):
        raise ConfigError("config field bank must be an object")
    _check_keys(bank_obj, _BANK_KEYS, "bank")
    bank_kwargs: dict = {}
    for key in ("num_scales", "num_orientations"):
        if key in bank_obj:
            bank_kwargs[key] = _as_int(bank_obj[key], f"bank.{key}")
    for key in ("sigma", "frequency_scale", "truncation"):
        if key in bank_obj:
            bank_kwargs[key] = _as_number(bank_obj[key], f"bank.{key}")
    if "dc_correct" in bank_obj:
        bank_kwargs["dc_correct"] = _as_bool(bank_obj["dc_correct"], "bank.dc_correct")
    bank = BankParams(**bank_kwargs)

    selection_obj = obj.get("selection", {})
    if not isinstance(selection_obj, dict):
        raise ConfigError("config field selection must be an object")
    _check_keys(selection_obj, _SELECTION_KEYS, "selection")
    sel_kwargs: dict = {}
    if "epsilon0" in selection_obj:
        sel_kwargs["epsilon0"] = _as_number(
            selection_obj["epsilon0"], "selection.epsilon0"
        )
    if "epsilon0_mode" in selection_obj:
        sel_kwargs["epsilon0_mode"] = _as_str(
            selection_obj["epsilon0_mode"], "selection.epsilon0_mode"
        )
    if "q" in selection_obj:
        sel_kwargs["q"] = _as_int(selection_obj["q"], "selection.q")
    if "max_iterations" in selection_obj:
        sel_kwargs["max_iterations"] = _as_int(
            selection_obj["max_iterations"], "selection.max_iterations"
        )
    if "sw_floor" in selection_obj:
        sel_kwargs["sw_floor"] = _as_number(
            selection_obj["sw_floor"], "selection.sw_floor"
        )
    selection = SelectionConfig(**sel_kwargs)

    perturbations_obj = obj.get("perturbations", [])
    if not isinstance(perturbations_obj, list):
        raise ConfigError("config field perturbations must be a list")
    perturbations = tuple(
        _parse_perturbation(entry, f"perturbations[{i}]")
        for i, entry in enumerate(perturbations_obj)
    )

    paths_obj = obj.get("paths", {})
    if not isinstance(paths_obj, dict):
        raise ConfigError("config field paths must be an object")
    _check_keys(paths_obj, _PATH_KEYS, "paths")
    paths = {
        key: _as_str(paths_obj[key], f"paths.{key}") if key in paths_obj else None
        for key in _PATH_KEYS
    }

    sweep_obj = obj.get("sweep_q", [])
    if not isinstance(sweep_obj, list):
        raise ConfigError("config field sweep_q must be a list of integers")
    sweep_q = tuple(_as_int(v, f"sweep_q[{i}]") for i, v in enumerate(sweep_obj))

    epsilon_c = _as_number(obj.get("epsilon_c", 1.0), "epsilon_c")
    if not epsilon_c > 0.0:
        raise ConfigError(f"config field epsilon_c must be > 0, got {epsilon_c}")
    seed = _as_int(obj.get("seed", 0), "seed")
    strategy = _as_str(obj.get("strategy", "fft"), "strategy")
    if strategy not in STRATEGIES:
        raise ConfigError(
            f"config field strategy must be one of {STRATEGIES}, got {strategy!r}"
        )

    return RunConfig(
        bank=bank,
        epsilon_c=epsilon_c,
        selection=selection,
        perturbations=perturbations,
        dataset_root=paths["dataset_root"],
        probes_root=paths["probes_root"],
        points_path=paths["points"],
        gallery_path=paths["gallery"],
        report_path=paths["report"],
        jmap_path=paths["jmap"],
        perturb_out=paths["perturb_out"],
        sweep_q=sweep_q,
        seed=seed,
        strategy=strategy,
    )


def _spec_to_obj(spec: PerturbSpec) -> dict:
    obj: dict = {"kind": spec.kind, "clip": spec.clip}
    if spec.kind == "global_affine":
        obj["a"] = spec.a
        obj["b"] = spec.b
    elif spec.kind == "half_shadow":
        obj["side"] = spec.side
        obj["gain"] = spec.gain
    else:
        obj["grid"] = (
            None
            if spec.grid is None
            else [[[cell[0], cell[1]] for cell in row] for row in spec.grid]
        )
    return obj


def config_to_obj(config: RunConfig) -> dict:
    """The JSON object form of a config; parse(serialize(c)) == c."""
    return {
        "bank": {
            "num_scales": config.bank.num_scales,
            "num_orientations": config.bank.num_orientations,
            "sigma": config.bank.sigma,
            "frequency_scale": config.bank.frequency_scale,
            "truncation": config.bank.truncation,
            "dc_correct": config.bank.dc_correct,
        },
        "epsilon_c": config.epsilon_c,
        "selection": {
            "epsilon0": config.selection.epsilon0,
            "epsilon0_mode": config.selection.epsilon0_mode,
            "q": config.selection.q,
            "max_iterations": config.selection.max_iterations,
            "sw_floor": config.selection.sw_floor,
        },
        "perturbations": [_spec_to_obj(s) for s in config.perturbations],
        "paths": {
            key: value
            for key, value in (
                ("dataset_root", config.dataset_root),
                ("probes_root", config.probes_root),
                ("points", config.points_path),
                ("gallery", config.gallery_path),
                ("report", config.report_path),
                ("jmap", config.jmap_path),
                ("perturb_out", config.perturb_out),
            )
            if value is not None
        },
        "sweep_q": list(config.sweep_q),
        "seed": config.seed,
        "strategy": config.strategy,
    }


def _write_json(obj, path: str) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def save_config(config: RunConfig, path: str) -> None:
    _write_json(config_to_obj(config), path)


def save_points(points: FeaturePointSet, path: str) -> None:
    """Write feature points as text, one "x y J" line per point."""
    lines = [
        f"{x} {y} {value!r}\n"
        for (x, y), value in zip(points.points, points.j_values)
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def load_points(path: str) -> FeaturePointSet:
    """Read a feature-points file written by save_points."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read points file {path!r}: {exc}") from None
    coords: list[tuple[int, int]] = []
    values: list[float] = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise DataError(f"{path!r} line {number}: expected 'x y J'")
        try:
            coords.append((int(parts[0]), int(parts[1])))
            values.append(float(parts[2]))
        except ValueError:
            raise DataError(f"{path!r} line {number}: malformed numbers") from None
    if not coords:
        raise DataError(f"points file {path!r} is empty")
    return FeaturePointSet(points=tuple(coords), j_values=tuple(values))


def save_jmap(j_map: np.ndarray, path: str) -> None:
    """Dump a separability plane: text header, then float32 row-major."""
    h, w = j_map.shape
    with open(path, "wb") as fh:
        fh.write(f"J-MAP {w} {h}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(j_map, dtype="<f4").tobytes())


def save_gallery(gallery: Gallery, path: str) -> None:
    """Persist a gallery as JSON; raw galleries are never persisted."""
    if gallery.raw:
        raise ConfigError("raw-coefficient galleries are in-memory only")
    params = gallery.bank.params
    obj = {
        "format_version": GALLERY_FORMAT_VERSION,
        "bank": {
            "num_scales": params.num_scales,
            "num_orientations": params.num_orientations,
            "sigma": params.sigma,
            "frequency_scale": params.frequency_scale,
            "truncation": params.truncation,
            "dc_correct": params.dc_correct,
        },
        "epsilon_c": gallery.epsilon_c,
        "points": [
            [x, y, value]
            for (x, y), value in zip(gallery.points.points, gallery.points.j_values)
        ],
        "templates": [
            {
                "subject_id": t.subject_id,
                "num_enrolled": t.num_enrolled,
                "jets": [[float(v) for v in row] for row in t.jets],
            }
            for t in gallery.templates
        ],
    }
    _write_json(obj, path)


def load_gallery(path: str) -> Gallery:
    """Load a gallery file and rebuild its filter bank."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read gallery {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"gallery {path!r} is not valid JSON: {exc}") from None
    version = obj.get("format_version")
    if version != GALLERY_FORMAT_VERSION:
        raise IncompatibilityError(
            f"gallery {path!r} has format version {version}, "
            f"expected {GALLERY_FORMAT_VERSION}"
        )
    bank = build_bank(BankParams(**obj["bank"]))
    points = FeaturePointSet(
        points=tuple((int(x), int(y)) for x, y, _ in obj["points"]),
        j_values=tuple(float(v) for _, _, v in obj["points"]),
    )
    templates = tuple(
        Template(
            subject_id=t["subject_id"],
            jets=np.array(t["jets"], dtype=np.float64),
            num_enrolled=int(t["num_enrolled"]),
        )
        for t in obj["templates"]
    )
    return Gallery(
        bank=bank,
        epsilon_c=float(obj["epsilon_c"]),
        points=points,
        templates=templates,
    )


def _require(value, field: str):
    if value is None:
        raise ConfigError(f"config field {field} is required for this command")
    return value


def cmd_select(config: RunConfig, out: str | None = None) -> None:
    """Select feature points and write them (and optionally the map)."""
    points_path = out or _require(config.points_path, "paths.points")
    root = _require(config.dataset_root, "paths.dataset_root")
    dataset = load_dataset(root, min_classes=2)
    bank = build_bank(config.bank)
    jets = dataset_jets(dataset, bank, config.epsilon_c, config.strategy)
    traces = scatter_traces(jets, dataset.labels)
    smap = separability_map(traces, config.selection.sw_floor)
    pf = candidates(smap, config.selection)
    points = cluster(pf, config.selection, jets, smap)
    save_points(points, points_path)
    if config.jmap_path:
        save_jmap(smap.j_map, config.jmap_path)
    print(f"N={len(pf)} q={config.selection.q}")


def cmd_enroll(config: RunConfig, out: str | None = None) -> None:
    """Enroll every subject of the dataset into a gallery file."""
    gallery_path = out or _require(config.gallery_path, "paths.gallery")
    points = load_points(_require(config.points_path, "paths.points"))
    dataset = load_dataset(_require(config.dataset_root, "paths.dataset_root"))
    bank = build_bank(config.bank)
    gallery = build_gallery(
        dataset, points, bank, config.epsilon_c, config.strategy
    )
    save_gallery(gallery, gallery_path)
    print(f"templates={len(gallery.templates)} points={len(points)}")


def _load_probe(path: str) -> GrayImage:
    image = load_image(path)
    if image.is_canonical():
        return image
    eyes_path = path + EYES_SIDECAR_SUFFIX
    if os.path.exists(eyes_path):
        return align_crop(image, parse_eyes_file(eyes_path))
    raise IncompatibilityError(
        f"probe {path!r} is {image.width}x{image.height}, not canonical, "
        f"and has no {EYES_SIDECAR_SUFFIX} sidecar"
    )


def cmd_identify(config: RunConfig, probe_path: str) -> None:
    """Print the ranked subjects for one probe, one line per subject."""
    gallery = load_gallery(_require(config.gallery_path, "paths.gallery"))
    probe = _load_probe(probe_path)
    result = identify(probe, gallery, config.strategy)
    for rank, (subject, score) in enumerate(
        zip(result.ranking, result.scores), start=1
    ):
        print(f"{rank} {subject} {score:.6f}")


def _report_section(report) -> dict:
    return {
        "rank1": report.rank1,
        "cmc": list(report.cmc),
        "probes": len(report.records),
        "unenrolled": report.unenrolled,
    }


def _perturbed_dataset(
    probes: LabeledDataset, spec: PerturbSpec, seed: int
) -> LabeledDataset:
    return LabeledDataset(
        tuple((perturb(image, spec, seed), label) for image, label in probes.samples)
    )


def cmd_evaluate(config: RunConfig, out: str | None = None, raw: bool = False) -> None:
    """Evaluate a gallery over probes and write a JSON report.

    The report always carries the clean-probe section; perturbation
    entries in the config add per-suite rows; ``raw`` adds a comparison
    between the normalized pipeline and one using unnormalized coefficient
    magnitudes; a non-empty sweep_q adds rank-1 rows for reselected point
    counts.
    """
    report_path = out or _require(config.report_path, "paths.report")
    gallery = load_gallery(_require(config.gallery_path, "paths.gallery"))
    probes = load_dataset(_require(config.probes_root, "paths.probes_root"))
    clean = evaluate(gallery, probes, config.strategy)
    if clean.unenrolled:
        print(
            f"warning: {clean.unenrolled} probe(s) skipped, subject not enrolled",
            file=sys.stderr,
        )
    report: dict = {"seed": config.seed, "clean": _report_section(clean)}

    perturbed_sets = [
        _perturbed_dataset(probes, spec, config.seed + i)
        for i, spec in enumerate(config.perturbations)
    ]
    if perturbed_sets:
        rows = []
        for spec, pset in zip(config.perturbations, perturbed_sets):
            section = _report_section(evaluate(gallery, pset, config.strategy))
            section["spec"] = _spec_to_obj(spec)
            rows.append(section)
        report["perturbed"] = rows

    if raw:
        root = _require(config.dataset_root, "paths.dataset_root")
        enroll_ds = load_dataset(root)
        raw_gallery = build_gallery(
            enroll_ds,
            gallery.points,
            gallery.bank,
            gallery.epsilon_c,
            config.strategy,
            raw=True,
        )
        if perturbed_sets:
            pool = LabeledDataset(
                tuple(s for pset in perturbed_sets for s in pset.samples)
            )
        else:
            pool = probes
        report["comparison"] = {
            "normalized_rank1": evaluate(gallery, pool, config.strategy).rank1,
            "raw_rank1": evaluate(raw_gallery, pool, config.strategy).rank1,
            "probes": len(pool.samples),
        }

    if config.sweep_q:
        root = _require(config.dataset_root, "paths.dataset_root")
        train = load_dataset(root, min_classes=2)
        jets = dataset_jets(train, gallery.bank, gallery.epsilon_c, config.strategy)
        traces = scatter_traces(jets, train.labels)
        smap = separability_map(traces, config.selection.sw_floor)
        pf = candidates(smap, config.selection)
        rows = []
        for q in config.sweep_q:
            sel = replace(config.selection, q=q)
            points = cluster(pf, sel, jets, smap)
            sweep_gallery = build_gallery(
                train, points, gallery.bank, gallery.epsilon_c, config.strategy
            )
            rows.append(
                {"q": q, "rank1": evaluate(sweep_gallery, probes, config.strategy).rank1}
            )
        report["sweep"] = rows

    _write_json(report, report_path)
    print(f"rank1={clean.rank1:.4f}")


def cmd_perturb(config: RunConfig, out: str | None = None) -> None:
    """Write perturbed copies of the dataset, one directory per suite entry."""
    out_dir = out or _require(config.perturb_out, "paths.perturb_out")
    root = _require(config.dataset_root, "paths.dataset_root")
    if not config.perturbations:
        raise ConfigError("config field perturbations is empty")
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} is not a directory")
    subjects = sorted(
        name for name in os.listdir(root) if os.path.isdir(os.path.join(root, name))
    )
    count = 0
    for index, spec in enumerate(config.perturbations):
        suite_dir = os.path.join(out_dir, f"suite{index:02d}")
        for subject in subjects:
            subject_dir = os.path.join(root, subject)
            names = sorted(
                n for n in os.listdir(subject_dir) if n.lower().endswith(IMAGE_SUFFIXES)
            )
            out_subject_dir = os.path.join(suite_dir, subject)
            os.makedirs(out_subject_dir, exist_ok=True)
            for name in names:
                image = load_image(os.path.join(subject_dir, name))
                result = perturb(image, spec, seed=config.seed + index)
                base = os.path.splitext(name)[0] + ".pgm"
                save_pgm(result, os.path.join(out_subject_dir, base))
                count += 1
    print(f"wrote {count} images to {out_dir}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaborjet",
        description="Illumination-robust Gabor jet extraction and matching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "select": "select feature points from a labeled dataset",
        "enroll": "build a gallery from a dataset and a points file",
        "identify": "rank gallery subjects against one probe image",
        "evaluate": "write an accuracy report over a probe set",
        "perturb": "write perturbed copies of a dataset",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--strategy", choices=STRATEGIES, help="override strategy")
        p.add_argument("--seed", type=int, help="override the config seed")
        if name != "identify":
            p.add_argument("--out", help="override the command's output path")
        if name == "identify":
            p.add_argument("--probe", required=True, help="probe image path")
        if name == "evaluate":
            p.add_argument(
                "--raw-coefficients",
                action="store_true",
                help="add a normalized-vs-raw comparison section",
            )
    return parser


def main(argv=None) -> int:
    """CLI entry point; returns the process exit code."""
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        if args.strategy:
            config = replace(config, strategy=args.strategy)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.command == "select":
            cmd_select(config, out=args.out)
        elif args.command == "enroll":
            cmd_enroll(config, out=args.out)
        elif args.command == "identify":
            cmd_identify(config, args.probe)
        elif args.command == "evaluate":
            cmd_evaluate(config, out=args.out, raw=args.raw_coefficients)
        else:
            cmd_perturb(config, out=args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IncompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except GaborJetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0

"""Command-line front end for the whole toolkit.

Two batch workflows are wired here.  The flat-feature path goes
synth/balance -> deconv -> nuclei -> features hist -> train/crossval.
The deep-feature path exports patches or augmented whole images, pulls
an externally produced feature table back in through `features import`,
and joins it with the flat features via `features combine`.  Every
command accepts --seed, --config, --out-dir and --threads, writes only
under --out-dir with documented filenames, and exits nonzero with a
one-line diagnostic on any toolkit error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .config import RunConfig
from .dissimilarity import classical_mds, pairwise_kl_matrix
from .errors import MitotyperError, PipelineError, TableError
from .evaluation import (
    run_lopo,
    tree_count_sweep,
    write_cv_report,
    write_sweep_table,
)
from .forest import save_model, train_forest
from .imaging import NormalizedHistogram, augment_variants, white_balance, color_deconvolve, default_stain_basis, to_grayscale
from .patching import sample_patches
from .pipeline import PipelineOptions, manifest_jobs, read_image, results_table, run_jobs
from .segmentation import detect_nuclei
from .synth import MANIFEST_FIELDS, generate_cohort, load_manifest, write_cohort
from .table import FeatureTable, concatenate_sources, format_value, load_feature_table, save_feature_table

_CHANNEL_NAMES = ("nucleus", "mito", "residual")


def _pipeline_options(rc: RunConfig) -> PipelineOptions:
    return PipelineOptions(
        balance_window=rc.balance_window(),
        balance_stride=rc.balance_stride(),
        ring_thickness=rc.ring_thickness(),
        ring_bg_threshold=rc.ring_bg_threshold(),
        detection=rc.detection_config(),
    )


def _save_png(img: np.ndarray, path: Path) -> None:
    mode = "RGB" if img.ndim == 3 else "L"
    Image.fromarray(img, mode).save(path)


def _write_manifest(path: Path, rows: list[tuple[str, str, str, str, str, str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        writer.writerows(rows)


def _load_table(path: str) -> FeatureTable:
    try:
        return load_feature_table(path)
    except OSError as exc:
        raise TableError(f"cannot read table {path}: {exc}") from exc


def cmd_synth(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    spec = rc.synth_spec(args.seed)
    cohort = generate_cohort(spec, n_jobs=args.threads)
    manifest = write_cohort(cohort, out_dir)
    print(f"wrote {len(cohort.records)} spots and {manifest}")


def _balance_inputs(args: argparse.Namespace) -> list[tuple[str, str, str, str, Path]]:
    """Yield (patient_id, spot_id, label, stem, path) for each input image."""
    if args.manifest:
        manifest = Path(args.manifest)
        rows = load_manifest(manifest)
        out = []
        for entry in rows:
            path = manifest.parent / entry["path"]
            out.append(
                (entry["patient_id"], entry["spot_id"], entry["label"], Path(entry["path"]).stem, path)
            )
        return out
    return [("", "", "", Path(p).stem, Path(p)) for p in args.image]


def cmd_balance(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    window, stride = rc.balance_window(), rc.balance_stride()
    manifest_rows = []
    written = 0
    for patient_id, spot_id, label, stem, path in _balance_inputs(args):
        balanced = white_balance(read_image(path), window=window, stride=stride)
        if args.augment:
            # each dihedral variant is its own manifest unit, so a deep
            # extractor emits 8 distinct rows per spot that later join
            # with the spot's single flat row via the orig fallback
            for variant in augment_variants(balanced):
                name = f"{stem}_{variant.name}.png"
                _save_png(variant.image, out_dir / name)
                written += 1
                if patient_id:
                    manifest_rows.append(
                        (patient_id, spot_id, variant.name, variant.name, label, name)
                    )
        else:
            name = f"{stem}_balanced.png"
            _save_png(balanced, out_dir / name)
            written += 1
            if patient_id:
                manifest_rows.append((patient_id, spot_id, "orig", "orig", label, name))
    if manifest_rows:
        _write_manifest(out_dir / "balanced_manifest.csv", manifest_rows)
        print(f"wrote {written} images and {out_dir / 'balanced_manifest.csv'}")
    else:
        print(f"wrote {written} images under {out_dir}")


def cmd_deconv(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    basis = default_stain_basis()
    window, stride = rc.balance_window(), rc.balance_stride()
    for image_path in args.image:
        stem = Path(image_path).stem
        balanced = white_balance(read_image(image_path), window=window, stride=stride)
        channels = color_deconvolve(balanced, basis)
        for name, channel in zip(_CHANNEL_NAMES, channels):
            _save_png(channel, out_dir / f"{stem}_{name}.png")
    print(f"wrote {3 * len(args.image)} channel images under {out_dir}")


def cmd_nuclei(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    basis = default_stain_basis()
    window, stride = rc.balance_window(), rc.balance_stride()
    for image_path in args.image:
        stem = Path(image_path).stem
        balanced = white_balance(read_image(image_path), window=window, stride=stride)
        nucleus_ch = color_deconvolve(balanced, basis)[0]
        nuclei = detect_nuclei(nucleus_ch, rc.detection_config())
        target = out_dir / f"{stem}_nuclei.csv"
        lines = ["row,col,radius"]
        for (row, col), radius in zip(nuclei.centers, nuclei.radii):
            lines.append(f"{row},{col},{format_value(float(radius))}")
        target.write_text("\n".join(lines) + "\n")
        print(f"{image_path}: {len(nuclei.centers)} nuclei -> {target}")


def cmd_features_hist(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    manifest = Path(args.manifest)
    jobs = manifest_jobs(load_manifest(manifest), manifest.parent)
    results = run_jobs(jobs, _pipeline_options(rc), n_jobs=args.threads)
    table = results_table(results)
    target = out_dir / "features_hist.csv"
    save_feature_table(table, target)
    print(f"wrote {len(table.rows)} HIST rows -> {target}")


def cmd_patches(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    manifest = Path(args.manifest)
    cfg = rc.sampler_config(args.seed)
    window, stride = rc.balance_window(), rc.balance_stride()
    patch_dir = out_dir / "patches"
    patch_dir.mkdir(parents=True, exist_ok=True)
    manifest_rows = []
    total = 0
    for entry in load_manifest(manifest):
        balanced = white_balance(
            read_image(manifest.parent / entry["path"]), window=window, stride=stride
        )
        gray = to_grayscale(balanced)
        for patch in sample_patches(gray, cfg, entry["spot_id"]):
            r, c = patch.origin
            crop = balanced[r : r + patch.side, c : c + patch.side]
            name = f"{entry['patient_id']}_{entry['spot_id']}_{patch.patch_id}.png"
            _save_png(crop, patch_dir / name)
            manifest_rows.append(
                (
                    entry["patient_id"],
                    entry["spot_id"],
                    patch.patch_id,
                    "orig",
                    entry["label"],
                    f"patches/{name}",
                )
            )
            total += 1
    _write_manifest(out_dir / "patches_manifest.csv", manifest_rows)
    print(f"wrote {total} patches and {out_dir / 'patches_manifest.csv'}")


def cmd_features_import(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    table = _load_table(args.table)
    target = out_dir / "features_imported.csv"
    save_feature_table(table, target)
    sources = ", ".join(f"{s}[{d}]" for s, d in sorted(table.dimensions.items()))
    print(f"imported {len(table.rows)} rows ({sources}) -> {target}")


def cmd_features_combine(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    rows = []
    for path in args.tables:
        rows.extend(_load_table(path).rows)
    merged = FeatureTable(tuple(rows))
    if args.sources:
        sources = [s.strip() for s in args.sources.split(",") if s.strip()]
    else:
        seen = []
        for row in merged.rows:
            if row.source not in seen:
                seen.append(row.source)
        sources = seen
    combined = concatenate_sources(merged, sources)
    target = out_dir / "features_combined.csv"
    save_feature_table(combined, target)
    source_name = combined.rows[0].source
    print(f"wrote {len(combined.rows)} {source_name} rows -> {target}")


def cmd_train(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    table = _load_table(args.table)
    rows = table.rows_for(args.source)
    if not rows:
        raise TableError(f"no rows for source {args.source!r}")
    x = np.stack([row.values for row in rows])
    y = [row.label for row in rows]
    cfg = rc.train_config(args.seed, n_jobs=args.threads, n_trees=args.trees)
    model = train_forest(x, y, cfg)
    target = out_dir / "model.json"
    save_model(model, target)
    print(f"trained {cfg.n_trees} trees on {len(rows)} rows -> {target}")


def cmd_crossval(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    table = _load_table(args.table)
    cfg = rc.train_config(args.seed, n_jobs=1, n_trees=args.trees)
    report = run_lopo(table, source=args.source, mode=args.mode, cfg=cfg, n_jobs=args.threads)
    paths = write_cv_report(report, out_dir)
    print(
        f"balanced error {100 * report.balanced_error:.2f}% over "
        f"{len(report.folds)} patients -> {paths['report.txt']}"
    )


def cmd_sweep_trees(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    table = _load_table(args.table)
    try:
        grid = [int(part) for part in args.grid.split(",") if part.strip()]
    except ValueError:
        raise MitotyperError(f"bad --grid value {args.grid!r}") from None
    if not grid:
        raise MitotyperError("empty --grid")
    cfg = rc.train_config(args.seed, n_jobs=1)
    rows = tree_count_sweep(table, grid, source=args.source, mode=args.mode, cfg=cfg, n_jobs=args.threads)
    path = write_sweep_table(rows, out_dir)
    print(f"wrote sweep over {grid} -> {path}")


def _mds_items(table: FeatureTable, source: str, by: str) -> list[tuple[str, NormalizedHistogram]]:
    rows = table.rows_for(source)
    if not rows:
        raise TableError(f"no rows for source {source!r}")
    if rows[0].values.size < 256:
        raise TableError(f"source {source!r} lacks a 256-bin histogram block")
    if by == "class":
        groups: dict[str, list[np.ndarray]] = {}
        for row in rows:
            groups.setdefault(row.label, []).append(row.values[:256])
        items = []
        for label in sorted(groups):
            mean = np.mean(groups[label], axis=0)
            items.append((label, NormalizedHistogram(mean / mean.sum())))
        return items
    items = []
    for row in rows:
        block = row.values[:256]
        items.append((f"{row.patient_id}/{row.spot_id}", NormalizedHistogram(block / block.sum())))
    return items


def _run_mds(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    table = _load_table(args.table)
    items = _mds_items(table, args.source, args.by)
    matrix = pairwise_kl_matrix(items, epsilon=rc.kl_epsilon())
    embedding = classical_mds(matrix)
    lines = ["id," + ",".join(matrix.ids)]
    for i, item_id in enumerate(matrix.ids):
        lines.append(item_id + "," + ",".join(format_value(v) for v in matrix.values[i]))
    (out_dir / "kl_matrix.csv").write_text("\n".join(lines) + "\n")
    lines = ["id,x,y"]
    for i, item_id in enumerate(embedding.ids):
        x, y = embedding.points[i]
        lines.append(f"{item_id},{format_value(float(x))},{format_value(float(y))}")
    (out_dir / "mds_coordinates.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out_dir / 'kl_matrix.csv'} and {out_dir / 'mds_coordinates.csv'}")


def cmd_mds(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    _run_mds(args, rc, out_dir)


def cmd_report(args: argparse.Namespace, rc: RunConfig, out_dir: Path) -> None:
    table = _load_table(args.table)
    index_lines = [f"feature table: {args.table}", f"rows: {len(table.rows)}"]
    for source, dim in sorted(table.dimensions.items()):
        n = len(table.rows_for(source))
        index_lines.append(f"source {source}: {n} rows, {dim} features")
    per_class: dict[str, set] = {}
    for row in table.rows:
        per_class.setdefault(row.label, set()).add(row.patient_id)
    for label in sorted(per_class):
        index_lines.append(f"class {label}: {len(per_class[label])} patients")
    target = out_dir / "table_report.txt"
    target.write_text("\n".join(index_lines) + "\n")
    print(f"wrote {target}")
    if args.mds:
        _run_mds(args, rc, out_dir)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--config", default=None, help="key=value config file")
    common.add_argument("--out-dir", default=".", help="directory for all outputs")
    common.add_argument("--threads", type=int, default=1, help="parallelism bound")

    parser = argparse.ArgumentParser(
        prog="mitotyper",
        description="Stain-based tissue-spot subtype classification toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic cohort")

    p = sub.add_parser("balance", parents=[common], help="white-balance images")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--image", nargs="+", help="image file(s)")
    group.add_argument("--manifest", help="cohort manifest CSV")
    p.add_argument("--augment", action="store_true", help="write all 8 dihedral variants")

    p = sub.add_parser("deconv", parents=[common], help="balance and split stain channels")
    p.add_argument("--image", nargs="+", required=True)

    p = sub.add_parser("nuclei", parents=[common], help="detect nuclei, write centers CSV")
    p.add_argument("--image", nargs="+", required=True)

    features = sub.add_parser("features", help="feature-table commands")
    fsub = features.add_subparsers(dest="features_command", required=True)

    p = fsub.add_parser("hist", parents=[common], help="flat histogram features for a manifest")
    p.add_argument("--manifest", required=True)

    p = fsub.add_parser("import", parents=[common], help="validate and re-emit an external table")
    p.add_argument("--table", required=True)

    p = fsub.add_parser("combine", parents=[common], help="join sources per unit")
    p.add_argument("--tables", nargs="+", required=True)
    p.add_argument("--sources", default=None, help="comma list, default: order of appearance")

    p = sub.add_parser("patches", parents=[common], help="export accepted tissue patches")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("train", parents=[common], help="train a forest on one source")
    p.add_argument("--table", required=True)
    p.add_argument("--source", default="HIST")
    p.add_argument("--trees", type=int, default=None)

    p = sub.add_parser("crossval", parents=[common], help="leave-one-patient-out evaluation")
    p.add_argument("--table", required=True)
    p.add_argument("--source", default="HIST")
    p.add_argument("--mode", choices=("patch", "whole"), default="patch")
    p.add_argument("--trees", type=int, default=None)

    p = sub.add_parser("sweep-trees", parents=[common], help="accuracy across forest sizes")
    p.add_argument("--table", required=True)
    p.add_argument("--source", default="HIST")
    p.add_argument("--mode", choices=("patch", "whole"), default="patch")
    p.add_argument("--grid", default="1,5,10,25,50,100")

    p = sub.add_parser("mds", parents=[common], help="KL dissimilarities and 2-D embedding")
    p.add_argument("--table", required=True)
    p.add_argument("--source", default="HIST")
    p.add_argument("--by", choices=("class", "spot"), default="class")

    p = sub.add_parser("report", parents=[common], help="summarize a feature table")
    p.add_argument("--table", required=True)
    p.add_argument("--source", default="HIST")
    p.add_argument("--by", choices=("class", "spot"), default="class")
    p.add_argument("--mds", action="store_true", help="also write the embedding CSVs")

    return parser


_DISPATCH = {
    "synth": cmd_synth,
    "balance": cmd_balance,
    "deconv": cmd_deconv,
    "nuclei": cmd_nuclei,
    "patches": cmd_patches,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "sweep-trees": cmd_sweep_trees,
    "mds": cmd_mds,
    "report": cmd_report,
}

_FEATURES_DISPATCH = {
    "hist": cmd_features_hist,
    "import": cmd_features_import,
    "combine": cmd_features_combine,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = RunConfig.load(args.config)
        if args.seed is None:
            args.seed = rc.seed()
        if args.threads < 1:
            raise MitotyperError("--threads must be >= 1")
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "features":
            _FEATURES_DISPATCH[args.features_command](args, rc, out_dir)
        else:
            _DISPATCH[args.command](args, rc, out_dir)
    except MitotyperError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

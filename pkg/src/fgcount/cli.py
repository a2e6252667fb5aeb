"""Command-line pipeline: simulate, aggregate, genmaps, evaluate, split.

Every subcommand is deterministic given its flags and inputs, writes data
only to files, logs to stderr, and drops a manifest JSON recording the tool
version, the full resolved configuration, sha256 digests of the inputs, and
timing. Exit codes: 0 success, 1 internal error, 2 user/input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import multiprocessing
import sys
import time
import traceback
from dataclasses import asdict
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .attributes import ATTRIBUTES, code_label, label_code
from .clustering import (ClusterParams, ClusterStats, aggregate_image_arrays,
                         aggregated_json_line)
from .fgct import list_stacks, read_stack, write_stack
from .ingest import (IngestError, parse_annotations_columnar, parse_image_metadata,
                     temporal_split, validate_dataset)
from .mapgen import (KernelSpec, TAU_DEFAULT, render_density, soft_segmentation,
                     stack_channels, stack_meta)
from .metrics import image_terms, report_from_terms, write_report_csv, write_report_json
from .simulate import SimConfig, SimulationError, write_dataset


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path: Path, command: str, config: dict,
                   inputs: Iterable[str | Path], outputs: dict,
                   timing: dict[str, float]) -> None:
    manifest = {
        "tool": "fgcount",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": outputs,
        "timing": {k: round(v, 6) for k, v in timing.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_json_table(path: str | None):
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = SimConfig(
        seed=args.seed, width=args.width, height=args.height, n_images=args.images,
        objects_per_image=args.mean_objects, min_separation=args.min_separation,
        n_users=args.users, participation=args.participation,
        sigma_user=args.sigma_user,
        confusion=_load_json_table(args.confusion),
        priors=_load_json_table(args.priors),
    )
    ann_path = out / "annotations.csv"
    img_path = out / "images.csv"
    truth_path = out / "truth.jsonl"
    t0 = time.perf_counter()
    n_rows = write_dataset(config, ann_path, img_path, truth_path)
    timing = {"total_s": time.perf_counter() - t0}
    inputs = [p for p in (args.confusion, args.priors) if p]
    write_manifest(out / "manifest.json", "simulate", asdict(config), inputs,
                   {"annotations": str(ann_path), "images": str(img_path),
                    "truth": str(truth_path), "n_annotations": n_rows,
                    "n_images": config.n_images}, timing)
    _log(f"simulate: {n_rows} annotations over {config.n_images} images -> {out}")
    return 0


def cmd_aggregate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = ClusterParams(linkage=args.linkage, distance_threshold=args.threshold,
                           min_cluster_size=args.min_cluster_size)
    t0 = time.perf_counter()
    images = parse_image_metadata(args.images)
    col = parse_annotations_columnar(args.annotations, images)
    t_parse = time.perf_counter()

    users_arr = np.asarray(col.users)
    stats = ClusterStats()
    agg_path = out / "aggregated.jsonl"
    n_objects = 0
    with open(agg_path, "w", encoding="utf-8") as fh:
        for image_id, rows in col.rows_by_image().items():
            x, y = col.x[rows], col.y[rows]
            users = users_arr[rows]
            codes = col.response_codes[rows]
            arrays = aggregate_image_arrays(x, y, users, codes, params, stats)
            for c in range(len(arrays)):
                idx = arrays.member_idx[c]
                labels = tuple(code_label(ATTRIBUTES[a], int(arrays.label_codes[c, a]))
                               for a in range(3))
                fh.write(aggregated_json_line(
                    image_id,
                    (float(arrays.medoid_x[c]), float(arrays.medoid_y[c])),
                    [(str(users[i]), float(x[i]), float(y[i])) for i in idx],
                    labels) + "\n")
                n_objects += 1
    t_cluster = time.perf_counter()

    report = validate_dataset(images, col)
    validation = {
        "dataset": report.to_json_dict(),
        "clustering": {"n_objects": stats.n_objects,
                       "n_discarded_clusters": stats.n_discarded_clusters,
                       "n_discarded_dots": stats.n_discarded_dots},
    }
    val_path = out / "validation.json"
    with open(val_path, "w", encoding="utf-8") as fh:
        json.dump(validation, fh, indent=2, sort_keys=True)
        fh.write("\n")

    timing = {"parse_s": t_parse - t0, "cluster_s": t_cluster - t_parse,
              "total_s": time.perf_counter() - t0}
    write_manifest(out / "manifest.json", "aggregate", asdict(params),
                   [args.annotations, args.images],
                   {"aggregated": str(agg_path), "validation": str(val_path),
                    "n_objects": n_objects,
                    "n_discarded_clusters": stats.n_discarded_clusters}, timing)
    _log(f"aggregate: {n_objects} objects from {len(col)} annotations -> {out}")
    return 0


def _read_aggregated_arrays(path: str | Path) -> dict[str, dict]:
    """Aggregated JSONL -> per-image arrays (medoids, member points, labels)."""
    per_image: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                image_id = rec["image_id"]
                entry = per_image.setdefault(
                    image_id, {"medoid": [], "members": [], "labels": []})
                entry["medoid"].append((float(rec["medoid"][0]), float(rec["medoid"][1])))
                entry["members"].append(np.asarray(
                    [(float(m["x"]), float(m["y"])) for m in rec["members"]],
                    dtype=np.float64).reshape(-1, 2))
                entry["labels"].append([label_code(attr, rec["labels"][attr])
                                        for attr in ATTRIBUTES])
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise IngestError(f"bad aggregated record: {exc}",
                                  line=line_no, path=path) from None
    for entry in per_image.values():
        entry["medoid"] = np.asarray(entry["medoid"], dtype=np.float64).reshape(-1, 2)
        entry["labels"] = np.asarray(entry["labels"], dtype=np.int8).reshape(-1, 3)
    return per_image


_G: dict = {}


def _genmaps_one(image_id: str) -> int:
    images = _G["images"]
    agg = _G["agg"].get(image_id)
    rec = images[image_id]
    if agg is None:
        medoids = np.empty((0, 2))
        members: list[np.ndarray] = []
        labels = np.empty((0, 3), dtype=np.int8)
    else:
        medoids, members, labels = agg["medoid"], agg["members"], agg["labels"]
    if _G["method"] == "fixed":
        points = [medoids[k:k + 1] for k in range(len(medoids))]
    else:
        points = members
    density = render_density(points, labels, (rec.width, rec.height),
                             _G["kernel"], _G["downsample"], image_id,
                             method=_G["method"])
    seg = soft_segmentation(density, tau=_G["tau"])
    meta = stack_meta(density, tau=_G["tau"])
    meta["image_width"] = rec.width
    meta["image_height"] = rec.height
    write_stack(Path(_G["out"]) / image_id, stack_channels(density, seg), meta)
    return len(points)


def cmd_genmaps(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    images = {rec.image_id: rec for rec in parse_image_metadata(args.images)}
    agg = _read_aggregated_arrays(args.aggregated)
    unknown = sorted(set(agg) - set(images))
    if unknown:
        raise IngestError("aggregated objects reference image ids absent from the "
                          f"image table: {', '.join(unknown)}", path=args.aggregated)
    kernel = KernelSpec(sigma=args.sigma, truncation_radius=args.truncation)
    method = "cluster" if args.method == "cluster" else "fixed"

    _G.update(images=images, agg=agg, kernel=kernel, tau=args.tau,
              downsample=args.downsample, method=method, out=str(out))
    ids = list(images)
    n_objects = 0
    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            for n in pool.imap(_genmaps_one, ids, chunksize=16):
                n_objects += n
    else:
        for image_id in ids:
            n_objects += _genmaps_one(image_id)

    timing = {"total_s": time.perf_counter() - t0}
    config = {"sigma": kernel.sigma, "truncation_radius": kernel.truncation_radius,
              "renormalize": kernel.renormalize, "tau": args.tau,
              "downsample": args.downsample, "method": method, "jobs": args.jobs}
    write_manifest(out / "manifest.json", "genmaps", config,
                   [args.aggregated, args.images],
                   {"n_stacks": len(ids), "n_objects": n_objects,
                    "out": str(out)}, timing)
    _log(f"genmaps: {len(ids)} stacks ({method}, sigma={kernel.sigma}) -> {out}")
    return 0


def _evaluate_one(image_id: str):
    pred_channels, _ = read_stack(_G["pred_map"][image_id])
    gt_channels, _ = read_stack(_G["gt_map"][image_id])
    return image_terms(image_id, pred_channels, gt_channels)


def cmd_evaluate(args) -> int:
    t0 = time.perf_counter()
    pred_map = list_stacks(args.pred)
    gt_map = list_stacks(args.gt)
    if set(pred_map) != set(gt_map):
        missing_pred = sorted(set(gt_map) - set(pred_map))
        missing_gt = sorted(set(pred_map) - set(gt_map))
        parts = []
        if missing_pred:
            parts.append(f"missing predictions for: {', '.join(missing_pred)}")
        if missing_gt:
            parts.append(f"missing ground truth for: {', '.join(missing_gt)}")
        raise IngestError("; ".join(parts))
    ids = sorted(pred_map)
    _G.update(pred_map=pred_map, gt_map=gt_map)
    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            terms = list(pool.imap(_evaluate_one, ids, chunksize=16))
    else:
        terms = [_evaluate_one(i) for i in ids]
    report = report_from_terms(terms)

    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path = report_path.with_suffix(".csv")
    write_report_json(report_path, report)
    write_report_csv(csv_path, {args.label: report})
    timing = {"total_s": time.perf_counter() - t0}
    config = {"pred": str(args.pred), "gt": str(args.gt), "label": args.label,
              "jobs": args.jobs}
    write_manifest(report_path.with_suffix(".manifest.json"), "evaluate", config,
                   [], {"report_json": str(report_path), "report_csv": str(csv_path),
                        "n_images": report.n_images}, timing)
    _log(f"evaluate: {report.n_images} images, MAE={report.mae:.4f}, "
         f"CMMAE={report.cmmae:.4f} -> {report_path}")
    return 0


def cmd_split(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    images = parse_image_metadata(args.images)
    split = temporal_split(images, args.train_before, args.val_before)
    sizes = {}
    for name, ids in (("train", split.train), ("val", split.val), ("test", split.test)):
        with open(out / f"{name}.txt", "w", encoding="utf-8") as fh:
            for image_id in sorted(ids):
                fh.write(image_id + "\n")
        sizes[name] = len(ids)
    timing = {"total_s": time.perf_counter() - t0}
    write_manifest(out / "manifest.json", "split",
                   {"train_before": args.train_before, "val_before": args.val_before},
                   [args.images], sizes, timing)
    _log(f"split: train={sizes['train']} val={sizes['val']} test={sizes['test']} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fgcount",
        description="Crowd-sourced dot aggregation and fine-grained counting pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic annotated dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=1, help="number of images")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--mean-objects", type=float, default=34.0,
                   help="Poisson mean objects per image")
    p.add_argument("--min-separation", type=float, default=0.0)
    p.add_argument("--users", type=int, default=5)
    p.add_argument("--participation", type=float, default=1.0)
    p.add_argument("--sigma-user", type=float, default=2.0,
                   help="per-dot Gaussian noise in pixels")
    p.add_argument("--confusion", help="JSON file: attribute -> 3x3 row-stochastic matrix")
    p.add_argument("--priors", help="JSON file: attribute -> 3 class priors")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("aggregate", help="cluster dots into consensus objects")
    p.add_argument("--annotations", required=True)
    p.add_argument("--images", required=True, help="image metadata table")
    p.add_argument("--linkage", choices=["single", "average"], default="average")
    p.add_argument("--threshold", type=float, default=24.0,
                   help="merge distance threshold in pixels")
    p.add_argument("--min-cluster-size", type=int, default=2)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("genmaps", help="render density/segmentation/mask stacks")
    p.add_argument("--aggregated", required=True, help="aggregated-object JSONL")
    p.add_argument("--images", required=True, help="image metadata table")
    p.add_argument("--method", choices=["fixed", "cluster"], default="fixed")
    p.add_argument("--sigma", type=float, default=12.0)
    p.add_argument("--truncation", type=float, default=4.0,
                   help="kernel truncation radius in multiples of sigma")
    p.add_argument("--tau", type=float, default=TAU_DEFAULT,
                   help="background/foreground density threshold")
    p.add_argument("--downsample", type=int, default=1, help="sum-pooling factor")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_genmaps)

    p = sub.add_parser("evaluate", help="score predicted stacks against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted stacks")
    p.add_argument("--gt", required=True, help="directory of ground-truth stacks")
    p.add_argument("--report", required=True, help="output report JSON path")
    p.add_argument("--label", default="pred", help="method label for the CSV row")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("split", help="temporal train/val/test split of image ids")
    p.add_argument("--images", required=True, help="image metadata table")
    p.add_argument("--train-before", required=True,
                   help="timestamps before this go to train")
    p.add_argument("--val-before", required=True,
                   help="timestamps in [train-before, val-before) go to val")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_split)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IngestError, SimulationError) as exc:
        _log(f"error: {exc}")
        return 2
    except (OSError, ValueError) as exc:
        _log(f"error: {exc}")
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Regenerate the committed test fixtures.

Runs the fgcount command line to simulate a tiny annotated dataset and
render its ground-truth stacks, writes deterministic prediction stacks
next to them, and records the fgcount evaluator's loss scalars for those
exact float32 tensors. The TypeScript tests replay the same arithmetic
and must land within tolerance of the recorded values.

Usage: python3 tools/make_fixtures.py   (from the train_harness directory)
"""

import hashlib
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np

from fgcount import ATTRIBUTES, density_channel_name, mask_channel_name, seg_channel_name
from fgcount.fgct import read_stack, write_stack
from fgcount.mapgen import SegmentationStack
from fgcount.metrics import loss_class_mse, loss_soft_xent, loss_total_count

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

SEED = 77
WIDTH, HEIGHT = 192, 144
DOWNSAMPLE = 6
NOISE_SCALE = 0.05


def run(*args):
    cmd = ["fgcount", *map(str, args)]
    print("$", " ".join(cmd))
    subprocess.run(cmd, check=True)


def build_pipeline():
    shutil.rmtree(FIXTURES, ignore_errors=True)
    data, agg, gt = FIXTURES / "data", FIXTURES / "agg", FIXTURES / "gt"
    priors = FIXTURES / "priors.json"
    FIXTURES.mkdir(parents=True)
    priors.write_text(json.dumps(
        {"species": [0.3, 0.3, 0.4], "age": [0.3, 0.3, 0.4]}) + "\n")
    run("simulate", "--seed", SEED, "--images", 2, "--width", WIDTH,
        "--height", HEIGHT, "--mean-objects", 7, "--min-separation", 30,
        "--users", 4, "--sigma-user", 1.5, "--priors", priors, "--out", data)
    run("aggregate", "--annotations", data / "annotations.csv",
        "--images", data / "images.csv", "--out", agg)
    run("genmaps", "--aggregated", agg / "aggregated.jsonl",
        "--images", data / "images.csv", "--downsample", DOWNSAMPLE,
        "--out", gt)
    return gt


def write_predictions(gt_dir):
    """Deterministic prediction stacks: noisy densities, random soft seg."""
    rng = np.random.default_rng(SEED)
    for image_dir in sorted(gt_dir.iterdir()):
        if not image_dir.is_dir():
            continue
        channels, meta = read_stack(image_dir)
        image_id = meta["image_id"]
        dens = {}
        for attr in ATTRIBUTES:
            for c in range(2):
                name = density_channel_name(attr, c)
                noisy = channels[name].astype(np.float64) + \
                    NOISE_SCALE * rng.standard_normal(channels[name].shape)
                dens[name] = noisy.astype(np.float32)
        write_stack(FIXTURES / "pred_density" / image_id, dens,
                    {"image_id": image_id, "generator": "make_fixtures"})

        seg = {}
        for attr in ATTRIBUTES:
            raw = rng.gamma(2.0, 1.0, size=(3,) + channels["overall"].shape)
            raw /= raw.sum(axis=0, keepdims=True)
            for k in range(3):
                seg[f"pseg_{attr}_{k}"] = raw[k].astype(np.float32)
        write_stack(FIXTURES / "pred_seg" / image_id, seg,
                    {"image_id": image_id, "generator": "make_fixtures"})


def reference_losses(gt_dir):
    """Evaluate the fgcount losses on the float32 tensors as stored."""
    losses = {}
    for image_dir in sorted(gt_dir.iterdir()):
        if not image_dir.is_dir():
            continue
        gt_channels, meta = read_stack(image_dir)
        image_id = meta["image_id"]
        pred_dens_channels, _ = read_stack(FIXTURES / "pred_density" / image_id)
        pred_seg_channels, _ = read_stack(FIXTURES / "pred_seg" / image_id)

        pred_dens = {a: np.stack([pred_dens_channels[density_channel_name(a, c)]
                                  for c in range(2)]) for a in ATTRIBUTES}
        gt_dens = {a: np.stack([gt_channels[density_channel_name(a, c)]
                                for c in range(3)]) for a in ATTRIBUTES}
        pred_seg = {a: np.stack([pred_seg_channels[f"pseg_{a}_{k}"]
                                 for k in range(3)]) for a in ATTRIBUTES}
        masks = {a: gt_channels[mask_channel_name(a)] for a in ATTRIBUTES}
        gt_seg = SegmentationStack(
            image_id=image_id,
            seg={a: np.stack([gt_channels[seg_channel_name(a, c)]
                              for c in range(2)]) for a in ATTRIBUTES},
            background=gt_channels["background"],
            unknown_masks=masks,
        )
        losses[image_id] = {
            "class_mse_masked": loss_class_mse(pred_dens, gt_dens, masks),
            "class_mse_unmasked": loss_class_mse(pred_dens, gt_dens, masked=False),
            "total_count": loss_total_count(pred_dens, gt_dens),
            "soft_xent_masked": loss_soft_xent(pred_seg, gt_seg),
            "soft_xent_unmasked": loss_soft_xent(pred_seg, gt_seg, masks={}),
        }
    return losses


def file_digests():
    out = {}
    for path in sorted(FIXTURES.rglob("*.fgct")):
        out[str(path.relative_to(FIXTURES))] = hashlib.sha256(
            path.read_bytes()).hexdigest()
    return out


def main():
    gt_dir = build_pipeline()
    write_predictions(gt_dir)
    losses = reference_losses(gt_dir)
    sample = next(iter(losses))
    grid = read_stack(gt_dir / sample)[0]["overall"].shape
    reference = {
        "seed": SEED,
        "grid": {"height": grid[0], "width": grid[1]},
        "images": sorted(losses),
        "losses": losses,
        "file_sha256": file_digests(),
    }
    with open(FIXTURES / "reference.json", "w", encoding="utf-8") as fh:
        json.dump(reference, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"fixtures written to {FIXTURES}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Counting metrics and training-loss scalars over density map stacks.

Counts are integrals of density grids. The class-agnostic error (MAE) and the
total-count loss are computed over full grids, never masked: objects in
unknown-dominant regions still count toward the overall total. Per
attribute-class errors (MMAE) and the class/segmentation losses exclude
pixels flagged by the ground-truth unknown masks.

CMMAE averages the six MMAE values first within each attribute, then across
attributes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attributes import ATTRIBUTES, CLASS_NAMES
from .mapgen import SegmentationStack, density_channel_name, mask_channel_name

LOG_CLAMP = 1e-12
N_CLASSES = 2


def grid_count(grid: np.ndarray) -> float:
    """Integral of a density grid = expected object count."""
    return float(np.asarray(grid, dtype=np.float64).sum())


def masked_count(grid: np.ndarray, mask: np.ndarray | None) -> float:
    """Integral over unmasked pixels (mask nonzero = excluded)."""
    g = np.asarray(grid, dtype=np.float64)
    if mask is None:
        return float(g.sum())
    if mask.shape != g.shape:
        raise ValueError(f"mask shape {mask.shape} != grid shape {g.shape}")
    return float(g.sum(where=np.asarray(mask) == 0))


def count_mae(pred_totals: Sequence[float], gt_totals: Sequence[float]) -> float:
    """Mean absolute per-image count error."""
    pred = np.asarray(pred_totals, dtype=np.float64)
    gt = np.asarray(gt_totals, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"count sequences differ in length: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        return 0.0
    return float(np.mean(np.abs(pred - gt)))


def masked_mae(pred_grids: Sequence[np.ndarray], gt_grids: Sequence[np.ndarray],
               masks: Sequence[np.ndarray | None]) -> float:
    """MAE between per-image counts integrated over unmasked pixels only."""
    if not (len(pred_grids) == len(gt_grids) == len(masks)):
        raise ValueError("pred, gt, and mask sequences differ in length")
    diffs = []
    for pred, gt, mask in zip(pred_grids, gt_grids, masks):
        if np.shape(pred) != np.shape(gt):
            raise ValueError(f"grid shapes differ: {np.shape(pred)} vs {np.shape(gt)}")
        diffs.append(abs(masked_count(pred, mask) - masked_count(gt, mask)))
    return float(np.mean(diffs)) if diffs else 0.0


def cmmae(mmae_values: Mapping[str, Sequence[float]]) -> float:
    """Average the per-class errors within each attribute, then across attributes."""
    total = 0.0
    for attr in ATTRIBUTES:
        if attr not in mmae_values:
            raise ValueError(f"missing attribute {attr!r} in MMAE table")
        vals = list(mmae_values[attr])
        if len(vals) != N_CLASSES:
            raise ValueError(f"attribute {attr!r} needs {N_CLASSES} MMAE values, got {len(vals)}")
        total += sum(float(v) for v in vals) / N_CLASSES
    return total / len(ATTRIBUTES)


def _as_mask(masks: Mapping[str, np.ndarray] | None, attr: str,
             shape: tuple) -> np.ndarray | None:
    if masks is None:
        return None
    mask = masks.get(attr)
    if mask is None:
        return None
    if np.shape(mask) != shape:
        raise ValueError(f"mask shape {np.shape(mask)} != grid shape {shape}")
    return np.asarray(mask)


def loss_class_mse(pred_density: Mapping[str, np.ndarray],
                   gt_density: Mapping[str, np.ndarray],
                   masks: Mapping[str, np.ndarray] | None = None,
                   masked: bool = True) -> float:
    """Per-class density MSE, summed over attributes and known classes.

    pred_density[attr] holds the two known-class grids; gt_density[attr] may
    carry a third (unknown) channel, which this loss ignores. With masking on,
    masked pixels leave both the squared-error sum and the pixel count.
    """
    total = 0.0
    for attr in ATTRIBUTES:
        pred = np.asarray(pred_density[attr], dtype=np.float64)
        gt = np.asarray(gt_density[attr], dtype=np.float64)
        if pred.shape[1:] != gt.shape[1:]:
            raise ValueError(f"{attr}: grid dims differ: {pred.shape[1:]} vs {gt.shape[1:]}")
        mask = _as_mask(masks, attr, pred.shape[1:]) if masked else None
        keep = None if mask is None else (mask == 0)
        n_px = pred.shape[1] * pred.shape[2] if keep is None else int(keep.sum())
        for c in range(N_CLASSES):
            if n_px == 0:
                continue
            err = (pred[c] - gt[c]) ** 2
            s = float(err.sum()) if keep is None else float(err.sum(where=keep))
            total += s / n_px
    return total


def loss_total_count(pred_density: Mapping[str, np.ndarray],
                     gt_density: Mapping[str, np.ndarray]) -> float:
    """Total-count MSE per attribute, summed over attributes; never masked.

    Each side is collapsed to a per-pixel channel sum first. Ground truth
    should include its unknown channel so its per-attribute sum equals the
    overall density.
    """
    total = 0.0
    for attr in ATTRIBUTES:
        pred = np.asarray(pred_density[attr], dtype=np.float64).sum(axis=0)
        gt = np.asarray(gt_density[attr], dtype=np.float64).sum(axis=0)
        if pred.shape != gt.shape:
            raise ValueError(f"{attr}: grid dims differ: {pred.shape} vs {gt.shape}")
        total += float(((pred - gt) ** 2).mean())
    return total


def loss_soft_xent(pred_seg: Mapping[str, np.ndarray],
                   gt_seg: SegmentationStack,
                   masks: Mapping[str, np.ndarray] | None = None,
                   normalization_atol: float = 1e-5) -> float:
    """Soft cross entropy against (class0, class1, background) targets.

    pred_seg[attr] is a (3, H, W) distribution per pixel. Targets are the
    ground-truth class fractions with zero background on foreground pixels,
    and one-hot background elsewhere. Per attribute the loss averages over
    unmasked pixels; log arguments are clamped below at 1e-12.
    """
    if masks is None:
        masks = gt_seg.unknown_masks
    bg = np.asarray(gt_seg.background, dtype=bool)
    total = 0.0
    for attr in ATTRIBUTES:
        pred = np.asarray(pred_seg[attr], dtype=np.float64)
        if pred.shape[0] != 3:
            raise ValueError(f"{attr}: predicted segmentation needs 3 channels, got {pred.shape[0]}")
        if pred.shape[1:] != bg.shape:
            raise ValueError(f"{attr}: grid dims differ: {pred.shape[1:]} vs {bg.shape}")
        colsum = pred.sum(axis=0)
        if np.max(np.abs(colsum - 1.0)) > normalization_atol:
            raise ValueError(f"{attr}: predicted segmentation channels do not sum to 1")
        t0 = np.where(bg, 0.0, gt_seg.seg[attr][0])
        t1 = np.where(bg, 0.0, gt_seg.seg[attr][1])
        tb = np.where(bg, 1.0, 0.0)
        logp = np.log(np.maximum(pred, LOG_CLAMP))
        px = -(t0 * logp[0] + t1 * logp[1] + tb * logp[2])
        mask = _as_mask(masks, attr, bg.shape)
        keep = None if mask is None else (np.asarray(mask) == 0)
        n_px = px.size if keep is None else int(keep.sum())
        if n_px == 0:
            continue
        s = float(px.sum()) if keep is None else float(px.sum(where=keep))
        total += s / n_px
    return total


def fuse_density_segmentation(overall: np.ndarray,
                              seg: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Per-class densities as overall * class fraction.

    When the two foreground fractions sum to 1 per pixel, every attribute's
    class densities sum back to the overall map, so total counts agree across
    attributes by construction.
    """
    overall = np.asarray(overall, dtype=np.float64)
    out = {}
    for attr in ATTRIBUTES:
        s = np.asarray(seg[attr], dtype=np.float64)
        if s.shape[1:] != overall.shape:
            raise ValueError(f"{attr}: grid dims differ: {s.shape[1:]} vs {overall.shape}")
        out[attr] = np.stack([overall * s[0], overall * s[1]])
    return out


@dataclass
class EvalReport:
    """Counting metrics over a set of images, plus the per-image count table."""

    mae: float
    mmae: dict[str, tuple[float, float]]
    cmmae: float
    per_image_mae: dict[str, float]
    counts: dict[str, dict] = field(default_factory=dict)
    n_images: int = 0

    def to_json_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "mae": self.mae,
            "mmae": {attr: {CLASS_NAMES[attr][c]: self.mmae[attr][c] for c in range(N_CLASSES)}
                     for attr in ATTRIBUTES},
            "cmmae": self.cmmae,
            "per_image_mae": self.per_image_mae,
            "counts": self.counts,
        }


@dataclass(frozen=True)
class ImageTerms:
    """One image's contribution to the report (plain scalars, picklable)."""

    image_id: str
    pred_total: float
    gt_total: float
    class_counts: tuple  # per attribute: ((pred0, gt0), (pred1, gt1)), masked


def image_terms(image_id: str, pred: Mapping[str, np.ndarray],
                gt: Mapping[str, np.ndarray]) -> ImageTerms:
    """Reduce one stack pair to count terms.

    Channel dicts use the tensor-file names. Ground truth needs "overall",
    the per attribute-class density channels, and (optionally) the loss
    masks; predictions need the known-class density channels, with "overall"
    falling back to the mean of the per-attribute known-class totals.
    Masks always come from the ground-truth side.
    """
    gt_overall = np.asarray(gt["overall"], dtype=np.float64)
    shape = gt_overall.shape
    attr_totals = []
    class_counts = []
    for attr in ATTRIBUTES:
        mask = gt.get(mask_channel_name(attr))
        if mask is not None and np.shape(mask) != shape:
            raise ValueError(f"{image_id}: mask dims {np.shape(mask)} != {shape}")
        known_total = 0.0
        per_class = []
        for c in range(N_CLASSES):
            name = density_channel_name(attr, c)
            p = np.asarray(pred[name], dtype=np.float64)
            g = np.asarray(gt[name], dtype=np.float64)
            if p.shape != shape or g.shape != shape:
                raise ValueError(f"{image_id}: {name} dims differ from overall {shape}")
            known_total += float(p.sum())
            per_class.append((masked_count(p, mask), masked_count(g, mask)))
        attr_totals.append(known_total)
        class_counts.append(tuple(per_class))
    if "overall" in pred:
        pred_total = grid_count(pred["overall"])
    else:
        pred_total = float(np.mean(attr_totals))
    return ImageTerms(image_id=image_id, pred_total=pred_total,
                      gt_total=float(gt_overall.sum()),
                      class_counts=tuple(class_counts))


def report_from_terms(terms: Iterable[ImageTerms]) -> EvalReport:
    """Assemble the report; iteration order fixes the (deterministic) reduction."""
    per_image_mae: dict[str, float] = {}
    counts: dict[str, dict] = {}
    abs_diffs: list[list[list[float]]] = [[[] for _ in range(N_CLASSES)] for _ in ATTRIBUTES]
    mae_terms: list[float] = []

    for t in terms:
        per_image_mae[t.image_id] = abs(t.pred_total - t.gt_total)
        mae_terms.append(per_image_mae[t.image_id])
        image_counts: dict[str, dict] = {}
        for a, attr in enumerate(ATTRIBUTES):
            per_class = {}
            for c in range(N_CLASSES):
                pc, gc = t.class_counts[a][c]
                abs_diffs[a][c].append(abs(pc - gc))
                per_class[CLASS_NAMES[attr][c]] = {"pred": pc, "gt": gc}
            image_counts[attr] = per_class
        image_counts["overall"] = {"pred": t.pred_total, "gt": t.gt_total}
        counts[t.image_id] = image_counts

    mmae = {attr: tuple(float(np.mean(abs_diffs[a][c])) if abs_diffs[a][c] else 0.0
                        for c in range(N_CLASSES))
            for a, attr in enumerate(ATTRIBUTES)}
    return EvalReport(
        mae=float(np.mean(mae_terms)) if mae_terms else 0.0,
        mmae=mmae,
        cmmae=cmmae(mmae),
        per_image_mae=per_image_mae,
        counts=counts,
        n_images=len(mae_terms),
    )


def evaluate_pairs(items: Iterable[tuple[str, Mapping[str, np.ndarray],
                                         Mapping[str, np.ndarray]]]) -> EvalReport:
    """Compute the report from (image_id, pred_channels, gt_channels) triples."""
    return report_from_terms(image_terms(i, p, g) for i, p, g in items)


def evaluate(pred_stacks: Mapping[str, Mapping[str, np.ndarray]],
             gt_stacks: Mapping[str, Mapping[str, np.ndarray]]) -> EvalReport:
    """Pair stacks by image id (sorted) and compute the report.

    Ids present on only one side are an error, reported exhaustively.
    """
    pred_ids = set(pred_stacks)
    gt_ids = set(gt_stacks)
    if pred_ids != gt_ids:
        missing_pred = sorted(gt_ids - pred_ids)
        missing_gt = sorted(pred_ids - gt_ids)
        parts = []
        if missing_pred:
            parts.append(f"missing predictions for: {', '.join(missing_pred)}")
        if missing_gt:
            parts.append(f"missing ground truth for: {', '.join(missing_gt)}")
        raise ValueError("; ".join(parts))
    ids = sorted(pred_ids)
    return evaluate_pairs((i, pred_stacks[i], gt_stacks[i]) for i in ids)


def write_report_json(path: str | Path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path: str | Path, reports: Mapping[str, EvalReport]) -> None:
    """One row per method: MAE, CMMAE, then the six per-class errors."""
    header = ["method", "MAE", "CMMAE"]
    for attr in ATTRIBUTES:
        for c in range(N_CLASSES):
            header.append(f"{attr}_{CLASS_NAMES[attr][c]}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for method, report in reports.items():
            row = [method, repr(report.mae), repr(report.cmmae)]
            for attr in ATTRIBUTES:
                for c in range(N_CLASSES):
                    row.append(repr(report.mmae[attr][c]))
            writer.writerow(row)

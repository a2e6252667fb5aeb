"""Synthetic scenes and crowd annotations with controllable noise.

Scenes hold true object locations (rejection-sampled to respect a minimum
separation) and true labels drawn from per-attribute priors. Each simulated
user participates per image with a fixed probability; a participating user
drops one dot per object, displaced by isotropic Gaussian noise, with
responses drawn through a per-attribute confusion matrix. One user never
produces two dots for the same object.

Randomness is PCG64 with an explicit stream-splitting scheme so any subset of
images can be regenerated bit-for-bit:

* scene stream:  SeedSequence(seed, spawn_key=(image_index, 0))
* user stream:   SeedSequence(seed, spawn_key=(image_index, 1, user_index))

Scene draw order: object count, then positions (one uniform pair per
placement attempt), then one (n, 3) uniform block for labels. User draw
order: one participation uniform, one (n, 2) normal block for dot noise,
one (n, 3) uniform block for responses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .attributes import ATTRIBUTES, code_label
from .ingest import (ANNOTATION_FIELDS, IMAGE_FIELDS, DotAnnotation, ImageRecord,
                     format_timestamp)

IDENTITY_CONFUSION = tuple(tuple(float(i == j) for j in range(3)) for i in range(3))
DEFAULT_PRIORS = (0.5, 0.5, 0.0)
TIMESTAMP_BASE = datetime(2024, 1, 1, tzinfo=timezone.utc)


class SimulationError(RuntimeError):
    pass


def _check_distribution(name: str, row: Sequence[float]) -> tuple[float, ...]:
    vals = tuple(float(v) for v in row)
    if len(vals) != 3:
        raise ValueError(f"{name} needs 3 entries (class0, class1, unknown), got {len(vals)}")
    if any(v < 0 or v > 1 for v in vals):
        raise ValueError(f"{name} probabilities must lie in [0, 1]: {vals}")
    if abs(sum(vals) - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1, got {sum(vals)!r}")
    return vals


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    width: int = 640
    height: int = 480
    n_images: int = 1
    objects_per_image: float = 34.0      # Poisson mean
    min_separation: float = 0.0
    n_users: int = 5
    participation: float = 1.0
    sigma_user: float = 2.0
    confusion: Mapping[str, Sequence[Sequence[float]]] | None = None
    priors: Mapping[str, Sequence[float]] | None = None
    max_attempts_per_object: int = 200

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dims must be positive")
        if self.n_images < 0 or self.n_users < 0:
            raise ValueError("counts must be nonnegative")
        if self.objects_per_image < 0:
            raise ValueError("objects_per_image must be nonnegative")
        if self.min_separation < 0:
            raise ValueError("min_separation must be nonnegative")
        if not 0.0 <= self.participation <= 1.0:
            raise ValueError("participation must lie in [0, 1]")
        if self.sigma_user < 0:
            raise ValueError("sigma_user must be nonnegative")
        object.__setattr__(self, "confusion", self._norm_table(
            self.confusion, "confusion", IDENTITY_CONFUSION))
        object.__setattr__(self, "priors", self._norm_priors(self.priors))

    @staticmethod
    def _norm_table(table, name, default) -> dict[str, tuple[tuple[float, ...], ...]]:
        out = {}
        for attr in ATTRIBUTES:
            rows = default if table is None or attr not in table else table[attr]
            rows = tuple(_check_distribution(f"{name}[{attr}][{i}]", row)
                         for i, row in enumerate(rows))
            if len(rows) != 3:
                raise ValueError(f"{name}[{attr}] needs 3 rows, got {len(rows)}")
            out[attr] = rows
        return out

    @staticmethod
    def _norm_priors(priors) -> dict[str, tuple[float, ...]]:
        out = {}
        for attr in ATTRIBUTES:
            row = DEFAULT_PRIORS if priors is None or attr not in priors else priors[attr]
            out[attr] = _check_distribution(f"priors[{attr}]", row)
        return out

    def confusion_arrays(self) -> np.ndarray:
        return np.asarray([self.confusion[attr] for attr in ATTRIBUTES])  # (3, 3, 3)

    def prior_array(self) -> np.ndarray:
        return np.asarray([self.priors[attr] for attr in ATTRIBUTES])     # (3, 3)


@dataclass
class SimScene:
    """Ground truth for one image, plus emitted dots once simulated."""

    image_id: str
    image_index: int
    width: int
    height: int
    xy: np.ndarray                 # (n, 2) true object locations
    labels: np.ndarray             # (n, 3) int8 true label codes
    annotations: list[DotAnnotation] = field(default_factory=list)
    provenance: np.ndarray | None = None   # dot index -> true object index

    @property
    def n_objects(self) -> int:
        return len(self.xy)


def image_id_for(index: int) -> str:
    return f"img_{index:05d}"


def image_record_for(config: SimConfig, index: int) -> ImageRecord:
    return ImageRecord(image_id_for(index), config.width, config.height,
                       TIMESTAMP_BASE + timedelta(minutes=index))


def _scene_rng(config: SimConfig, image_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(config.seed, spawn_key=(image_index, 0))))


def _user_rng(config: SimConfig, image_index: int, user_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(config.seed, spawn_key=(image_index, 1, user_index))))


def _sample_codes(u: np.ndarray, dists: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw: u (n,) uniforms, dists (n, 3) rows -> codes (n,)."""
    cum = np.cumsum(dists, axis=1)
    cum[:, -1] = 1.0
    return (u[:, None] >= cum).sum(axis=1).astype(np.int8)


def generate_scene(config: SimConfig, image_index: int) -> SimScene:
    """Scene ground truth, fully determined by (seed, image_index)."""
    rng = _scene_rng(config, image_index)
    n = int(rng.poisson(config.objects_per_image))

    margin = float(np.ceil(4.0 * config.sigma_user))
    if 2 * margin >= min(config.width, config.height):
        margin = 0.0
    lo = np.array([margin, margin])
    span = np.array([config.width - 2 * margin, config.height - 2 * margin])

    xy = np.empty((n, 2))
    placed = 0
    attempts_left = config.max_attempts_per_object * max(n, 1)
    min_sep2 = config.min_separation ** 2
    while placed < n:
        if attempts_left <= 0:
            raise SimulationError(
                f"placed only {placed}/{n} objects with min_separation="
                f"{config.min_separation} in a {config.width}x{config.height} image; "
                "lower objects_per_image or min_separation")
        attempts_left -= 1
        cand = lo + rng.random(2) * span
        if placed and min_sep2 > 0:
            d2 = ((xy[:placed] - cand) ** 2).sum(axis=1)
            if d2.min() < min_sep2:
                continue
        xy[placed] = cand
        placed += 1

    draws = rng.random((n, 3))
    labels = np.empty((n, 3), dtype=np.int8)
    priors = config.prior_array()
    for a in range(3):
        labels[:, a] = _sample_codes(draws[:, a], np.broadcast_to(priors[a], (n, 3)))
    return SimScene(image_id=image_id_for(image_index), image_index=image_index,
                    width=config.width, height=config.height, xy=xy, labels=labels)


def _user_dots(scene: SimScene, config: SimConfig,
               user_index: int) -> tuple[bool, np.ndarray, np.ndarray]:
    """One user's dots for a scene: (participates, positions (n,2), codes (n,3))."""
    rng = _user_rng(config, scene.image_index, user_index)
    participates = bool(rng.random() < config.participation)
    n = scene.n_objects
    if not participates or n == 0:
        return False, np.empty((0, 2)), np.empty((0, 3), dtype=np.int8)
    noise = rng.normal(0.0, config.sigma_user, size=(n, 2))
    xy = scene.xy + noise
    xy[:, 0] = np.clip(xy[:, 0], 0.0, np.nextafter(float(scene.width), 0.0))
    xy[:, 1] = np.clip(xy[:, 1], 0.0, np.nextafter(float(scene.height), 0.0))
    draws = rng.random((n, 3))
    confusion = config.confusion_arrays()
    codes = np.empty((n, 3), dtype=np.int8)
    for a in range(3):
        rows = confusion[a][scene.labels[:, a]]
        codes[:, a] = _sample_codes(draws[:, a], rows)
    return True, xy, codes


def user_id_for(user_index: int) -> str:
    return f"u{user_index:04d}"


def simulate_annotations(scene: SimScene, config: SimConfig) -> list[DotAnnotation]:
    """Emit every user's dots for a scene (also recorded on the scene)."""
    dots: list[DotAnnotation] = []
    prov: list[int] = []
    label_tables = [tuple(code_label(attr, c) for c in range(3)) for attr in ATTRIBUTES]
    for u in range(config.n_users):
        participates, xy, codes = _user_dots(scene, config, u)
        if not participates:
            continue
        uid = user_id_for(u)
        for k in range(scene.n_objects):
            responses = tuple(label_tables[a][codes[k, a]] for a in range(3))
            dots.append(DotAnnotation(image_id=scene.image_id, user_id=uid,
                                      x=float(xy[k, 0]), y=float(xy[k, 1]),
                                      responses=responses))
            prov.append(k)
    scene.annotations = dots
    scene.provenance = np.asarray(prov, dtype=np.int64)
    return dots


def iter_scenes(config: SimConfig, annotate: bool = True) -> Iterator[SimScene]:
    for i in range(config.n_images):
        scene = generate_scene(config, i)
        if annotate:
            simulate_annotations(scene, config)
        yield scene


def truth_json_line(scene: SimScene) -> str:
    objects = []
    for k in range(scene.n_objects):
        objects.append({
            "x": float(scene.xy[k, 0]),
            "y": float(scene.xy[k, 1]),
            "labels": {attr: code_label(attr, int(scene.labels[k, a]))
                       for a, attr in enumerate(ATTRIBUTES)},
        })
    return json.dumps({"image_id": scene.image_id, "objects": objects},
                      separators=(",", ":"))


def read_truth(path: str | Path) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["image_id"]] = rec["objects"]
    return out


def write_dataset(config: SimConfig, annotations_path: str | Path,
                  images_path: str | Path, truth_path: str | Path | None = None) -> int:
    """Simulate the full dataset straight to the standard tables.

    Returns the number of annotation rows written. Output is identical to
    serializing simulate_annotations results, without materializing them.
    """
    label_tables = [tuple(code_label(attr, c) for c in range(3)) for attr in ATTRIBUTES]
    n_rows = 0
    truth_fh = open(truth_path, "w", encoding="utf-8") if truth_path is not None else None
    try:
        with open(annotations_path, "w", encoding="utf-8", newline="") as ann_fh, \
                open(images_path, "w", encoding="utf-8", newline="") as img_fh:
            ann_fh.write(",".join(ANNOTATION_FIELDS) + "\n")
            img_fh.write(",".join(IMAGE_FIELDS) + "\n")
            for i in range(config.n_images):
                scene = generate_scene(config, i)
                rec = image_record_for(config, i)
                img_fh.write(f"{rec.image_id},{rec.width},{rec.height},"
                             f"{format_timestamp(rec.timestamp)}\n")
                rows: list[str] = []
                for u in range(config.n_users):
                    participates, xy, codes = _user_dots(scene, config, u)
                    if not participates:
                        continue
                    uid = user_id_for(u)
                    xs = xy[:, 0].tolist()
                    ys = xy[:, 1].tolist()
                    for k in range(scene.n_objects):
                        rows.append(
                            f"{scene.image_id},{uid},{xs[k]!r},{ys[k]!r},"
                            f"{label_tables[0][codes[k, 0]]},"
                            f"{label_tables[1][codes[k, 1]]},"
                            f"{label_tables[2][codes[k, 2]]}")
                if rows:
                    ann_fh.write("\n".join(rows) + "\n")
                n_rows += len(rows)
                if truth_fh is not None:
                    truth_fh.write(truth_json_line(scene) + "\n")
    finally:
        if truth_fh is not None:
            truth_fh.close()
    return n_rows


@dataclass
class RecoveryReport:
    """How well aggregation recovered a scene's ground truth."""

    n_true: int
    n_recovered: int
    n_matched: int
    unmatched_true: int
    unmatched_recovered: int
    mean_location_error: float
    label_correct: dict[str, int]

    @property
    def count_error(self) -> int:
        return abs(self.n_recovered - self.n_true)

    @property
    def matched_fraction(self) -> float:
        return self.n_matched / self.n_true if self.n_true else 1.0

    def label_accuracy(self, attribute: str) -> float:
        """Agreement on matched objects; vacuously 1 with no matches."""
        return self.label_correct[attribute] / self.n_matched if self.n_matched else 1.0


def oracle_evaluate(scene: SimScene, aggregated, radius: float | None = None,
                    sigma_user: float | None = None) -> RecoveryReport:
    """Greedy nearest-neighbor match of aggregated medoids to true objects.

    Pairs are matched closest-first within the radius (default
    2 * sigma_user + 1e-6); each side is used at most once.
    """
    if radius is None:
        if sigma_user is None:
            raise ValueError("pass either radius or sigma_user")
        radius = 2.0 * sigma_user + 1e-6
    med = np.asarray([obj.medoid for obj in aggregated], dtype=np.float64).reshape(-1, 2)
    n_rec, n_true = len(med), scene.n_objects
    pairs = []
    if n_rec and n_true:
        d = np.sqrt(((med[:, None, :] - scene.xy[None, :, :]) ** 2).sum(axis=2))
        for r in range(n_rec):
            for t in range(n_true):
                if d[r, t] <= radius:
                    pairs.append((d[r, t], r, t))
        pairs.sort()
    used_r = np.zeros(n_rec, dtype=bool)
    used_t = np.zeros(n_true, dtype=bool)
    matches = []
    for dist, r, t in pairs:
        if not used_r[r] and not used_t[t]:
            used_r[r] = used_t[t] = True
            matches.append((dist, r, t))

    label_correct = {attr: 0 for attr in ATTRIBUTES}
    for _, r, t in matches:
        for a, attr in enumerate(ATTRIBUTES):
            if aggregated[r].labels[a] == code_label(attr, int(scene.labels[t, a])):
                label_correct[attr] += 1
    return RecoveryReport(
        n_true=n_true,
        n_recovered=n_rec,
        n_matched=len(matches),
        unmatched_true=n_true - len(matches),
        unmatched_recovered=n_rec - len(matches),
        mean_location_error=float(np.mean([m[0] for m in matches])) if matches else 0.0,
        label_correct=label_correct,
    )

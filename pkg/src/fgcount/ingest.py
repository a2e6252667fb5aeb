"""Parsing, validation, and temporal splitting of annotation tables.

Input schemas (UTF-8):

* annotation CSV with header ``image_id,user_id,x,y,species,sex,age``;
  attribute cells are the literal class names, ``unknown``, or empty,
* image metadata CSV with header ``image_id,width,height,timestamp``
  (RFC 3339 timestamps),
* JSONL alternatives: one object per line with the same field names
  (missing attribute keys mean unknown).

Parsing is annotation-side only: image dimensions come from the metadata
table and pixel data is never read. Coordinates stay floats; they are only
rasterized at map-generation time.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .attributes import ATTRIBUTES, _LABEL_CODE, code_label, label_code

ANNOTATION_FIELDS = ("image_id", "user_id", "x", "y") + ATTRIBUTES
IMAGE_FIELDS = ("image_id", "width", "height", "timestamp")


class IngestError(ValueError):
    """Schema or content violation in an input table.

    Carries the offending line number (1-based, header = line 1) when the
    problem is attributable to a single row.
    """

    def __init__(self, reason: str, *, line: int | None = None,
                 path: str | Path | None = None):
        self.reason = reason
        self.line = line
        self.path = str(path) if path is not None else None
        msg = reason
        if line is not None:
            msg = f"{msg}, line {line}"
        if path is not None:
            msg = f"{msg} [{path}]"
        super().__init__(msg)


@dataclass(frozen=True, slots=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    timestamp: datetime


@dataclass(frozen=True, slots=True)
class DotAnnotation:
    """One crowd-sourced click: location plus the three attribute responses.

    ``responses`` holds one label per attribute in ATTRIBUTES order; a missing
    response was already normalized to "unknown" at parse time.
    """

    image_id: str
    user_id: str
    x: float
    y: float
    responses: tuple[str, str, str]

    def response(self, attribute: str) -> str:
        return self.responses[ATTRIBUTES.index(attribute)]

    def responses_dict(self) -> dict[str, str]:
        return dict(zip(ATTRIBUTES, self.responses))


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]


@dataclass
class ColumnarAnnotations:
    """Row-aligned arrays for one annotation table; the parser's core output.

    ``response_codes`` has one int8 column per attribute (0/1 = known classes,
    2 = unknown). Row order is file order.
    """

    image_order: list[str]
    image_index: np.ndarray        # (n,) int32 index into image_order
    users: list[str]               # (n,) user ids
    x: np.ndarray                  # (n,) float64
    y: np.ndarray                  # (n,) float64
    response_codes: np.ndarray     # (n, 3) int8

    def __len__(self) -> int:
        return len(self.users)

    def rows_by_image(self) -> dict[str, np.ndarray]:
        """image_id -> row indices (file order preserved)."""
        order = np.argsort(self.image_index, kind="stable")
        out: dict[str, np.ndarray] = {}
        if len(order) == 0:
            return out
        idx_sorted = self.image_index[order]
        boundaries = np.flatnonzero(np.diff(idx_sorted)) + 1
        for chunk in np.split(order, boundaries):
            out[self.image_order[self.image_index[chunk[0]]]] = chunk
        return out


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC 3339 timestamp; naive inputs are taken as UTC."""
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _infer_format(path: str | Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "jsonl"):
            raise ValueError(f"unsupported format {fmt!r}")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".ndjson", ".json"):
        return "jsonl"
    return "csv"


def parse_image_metadata(path: str | Path, fmt: str | None = None) -> list[ImageRecord]:
    """Parse the image metadata table."""
    fmt = _infer_format(path, fmt)
    records: list[ImageRecord] = []
    seen: set[str] = set()

    def add(line: int, image_id: str, width, height, timestamp) -> None:
        if not image_id:
            raise IngestError("empty image_id", line=line, path=path)
        if image_id in seen:
            raise IngestError(f"duplicate image_id {image_id!r}", line=line, path=path)
        try:
            w, h = int(width), int(height)
        except (TypeError, ValueError):
            raise IngestError(f"non-integer image dims {width!r}x{height!r}",
                              line=line, path=path) from None
        if w < 1 or h < 1:
            raise IngestError(f"non-positive image dims {w}x{h}", line=line, path=path)
        try:
            ts = parse_timestamp(timestamp) if isinstance(timestamp, str) else timestamp
        except ValueError:
            raise IngestError(f"bad timestamp {timestamp!r}", line=line, path=path) from None
        seen.add(image_id)
        records.append(ImageRecord(image_id, w, h, ts))

    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(IMAGE_FIELDS):
                raise IngestError(f"bad header {header!r}, expected {','.join(IMAGE_FIELDS)}",
                                  line=1, path=path)
            for line, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(IMAGE_FIELDS):
                    raise IngestError(f"expected {len(IMAGE_FIELDS)} fields, got {len(row)}",
                                      line=line, path=path)
                add(line, row[0], row[1], row[2], row[3])
    else:
        with open(path, encoding="utf-8") as fh:
            for line, text in enumerate(fh, start=1):
                if not text.strip():
                    continue
                try:
                    obj = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"bad JSON: {exc.msg}", line=line, path=path) from None
                missing = [k for k in IMAGE_FIELDS if k not in obj]
                if missing:
                    raise IngestError(f"missing fields {missing}", line=line, path=path)
                add(line, obj["image_id"], obj["width"], obj["height"], obj["timestamp"])
    return records


def _image_map(images: Iterable[ImageRecord] | Mapping[str, ImageRecord]) -> dict[str, ImageRecord]:
    if isinstance(images, Mapping):
        return dict(images)
    return {rec.image_id: rec for rec in images}


def parse_annotations_columnar(path: str | Path,
                               images: Iterable[ImageRecord] | Mapping[str, ImageRecord],
                               fmt: str | None = None) -> ColumnarAnnotations:
    """Parse an annotation table against the image metadata.

    Row order is preserved; blank or missing attribute cells become unknown.
    Raises IngestError with the offending line for malformed rows or
    out-of-bounds coordinates, and with the full offending id list for
    annotations referencing images absent from the metadata table.
    """
    fmt = _infer_format(path, fmt)
    image_map = _image_map(images)
    image_order = list(image_map)
    image_pos = {image_id: i for i, image_id in enumerate(image_order)}
    # per-attribute raw label -> code lookup (fast path; falls back to label_code)
    lookup = [_LABEL_CODE[attr] for attr in ATTRIBUTES]

    img_idx: list[int] = []
    users: list[str] = []
    xs: list[float] = []
    ys: list[float] = []
    codes: list[int] = []
    unknown_images: dict[str, int] = {}  # id -> first offending line

    def add_row(line: int, image_id: str, user_id: str, x_raw, y_raw, resp_raw) -> None:
        pos = image_pos.get(image_id)
        if pos is None:
            unknown_images.setdefault(image_id, line)
            return
        try:
            x = float(x_raw)
            y = float(y_raw)
        except (TypeError, ValueError):
            raise IngestError(f"non-numeric coordinate ({x_raw!r}, {y_raw!r})",
                              line=line, path=path) from None
        rec = image_map[image_id]
        if not (0.0 <= x < rec.width and 0.0 <= y < rec.height):
            raise IngestError("coordinate out of bounds", line=line, path=path)
        row_codes = []
        for i, attr in enumerate(ATTRIBUTES):
            raw = resp_raw[i]
            code = lookup[i].get(raw) if isinstance(raw, str) else (2 if raw is None else None)
            if code is None:
                try:
                    code = label_code(attr, raw)
                except ValueError as exc:
                    raise IngestError(str(exc), line=line, path=path) from None
            row_codes.append(code)
        img_idx.append(pos)
        users.append(user_id)
        xs.append(x)
        ys.append(y)
        codes.extend(row_codes)

    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(ANNOTATION_FIELDS):
                raise IngestError(f"bad header {header!r}, expected {','.join(ANNOTATION_FIELDS)}",
                                  line=1, path=path)
            for line, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(ANNOTATION_FIELDS):
                    raise IngestError(f"expected {len(ANNOTATION_FIELDS)} fields, got {len(row)}",
                                      line=line, path=path)
                add_row(line, row[0], row[1], row[2], row[3], row[4:7])
    else:
        with open(path, encoding="utf-8") as fh:
            for line, text in enumerate(fh, start=1):
                if not text.strip():
                    continue
                try:
                    obj = json.loads(text)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"bad JSON: {exc.msg}", line=line, path=path) from None
                missing = [k for k in ("image_id", "user_id", "x", "y") if k not in obj]
                if missing:
                    raise IngestError(f"missing fields {missing}", line=line, path=path)
                add_row(line, obj["image_id"], obj["user_id"], obj["x"], obj["y"],
                        [obj.get(attr) for attr in ATTRIBUTES])

    if unknown_images:
        ids = sorted(unknown_images)
        raise IngestError(
            f"annotations reference image ids absent from the image table: {', '.join(ids)}",
            line=unknown_images[ids[0]], path=path)

    n = len(users)
    return ColumnarAnnotations(
        image_order=image_order,
        image_index=np.asarray(img_idx, dtype=np.int32),
        users=users,
        x=np.asarray(xs, dtype=np.float64),
        y=np.asarray(ys, dtype=np.float64),
        response_codes=np.asarray(codes, dtype=np.int8).reshape(n, 3),
    )


def materialize_dots(col: ColumnarAnnotations) -> list[DotAnnotation]:
    """Build one DotAnnotation per parsed row (file order)."""
    labels = [tuple(code_label(attr, c) for c in range(3)) for attr in ATTRIBUTES]
    out = []
    x, y, codes, idx = col.x, col.y, col.response_codes, col.image_index
    for i, user in enumerate(col.users):
        c = codes[i]
        out.append(DotAnnotation(
            image_id=col.image_order[idx[i]],
            user_id=user,
            x=float(x[i]),
            y=float(y[i]),
            responses=(labels[0][c[0]], labels[1][c[1]], labels[2][c[2]]),
        ))
    return out


def columnar_from_dots(dots: Sequence[DotAnnotation]) -> ColumnarAnnotations:
    """Inverse of materialize_dots (image order = first appearance)."""
    image_order: list[str] = []
    pos: dict[str, int] = {}
    idx = np.empty(len(dots), dtype=np.int32)
    codes = np.empty((len(dots), 3), dtype=np.int8)
    xs = np.empty(len(dots))
    ys = np.empty(len(dots))
    users = []
    for i, dot in enumerate(dots):
        p = pos.get(dot.image_id)
        if p is None:
            p = pos[dot.image_id] = len(image_order)
            image_order.append(dot.image_id)
        idx[i] = p
        xs[i] = dot.x
        ys[i] = dot.y
        users.append(dot.user_id)
        for a in range(3):
            codes[i, a] = label_code(ATTRIBUTES[a], dot.responses[a])
    return ColumnarAnnotations(image_order, idx, users, xs, ys, codes)


def load_dataset(annotations_path: str | Path, images_path: str | Path,
                 fmt: str | None = None) -> tuple[list[ImageRecord], list[DotAnnotation]]:
    """Parse both tables into the canonical in-memory model.

    Every annotation row becomes one DotAnnotation, in file order.
    """
    images = parse_image_metadata(images_path, fmt)
    col = parse_annotations_columnar(annotations_path, images, fmt)
    return images, materialize_dots(col)


def write_annotations(path: str | Path, dots: Iterable[DotAnnotation],
                      fmt: str | None = None) -> None:
    """Serialize annotations; floats use shortest round-trip repr."""
    fmt = _infer_format(path, fmt)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ANNOTATION_FIELDS)
            for d in dots:
                writer.writerow((d.image_id, d.user_id, repr(d.x), repr(d.y)) + d.responses)
        else:
            for d in dots:
                obj = {"image_id": d.image_id, "user_id": d.user_id, "x": d.x, "y": d.y}
                obj.update(zip(ATTRIBUTES, d.responses))
                fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def write_image_metadata(path: str | Path, images: Iterable[ImageRecord],
                         fmt: str | None = None) -> None:
    fmt = _infer_format(path, fmt)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(IMAGE_FIELDS)
            for rec in images:
                writer.writerow((rec.image_id, rec.width, rec.height,
                                 format_timestamp(rec.timestamp)))
        else:
            for rec in images:
                fh.write(json.dumps({
                    "image_id": rec.image_id, "width": rec.width, "height": rec.height,
                    "timestamp": format_timestamp(rec.timestamp)}, separators=(",", ":")) + "\n")


@dataclass
class ValidationReport:
    """Dataset bookkeeping: class tallies, per-user/per-image counts, warnings."""

    n_images: int
    n_annotations: int
    class_counts: dict[str, dict[str, int]]
    annotations_per_user: dict[str, int]
    annotations_per_image: dict[str, int]
    users_per_image: dict[str, int]
    warnings: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "n_annotations": self.n_annotations,
            "class_counts": self.class_counts,
            "annotations_per_user": dict(sorted(self.annotations_per_user.items())),
            "annotations_per_image": dict(sorted(self.annotations_per_image.items())),
            "users_per_image": dict(sorted(self.users_per_image.items())),
            "warnings": list(self.warnings),
        }


def validate_dataset(images: Iterable[ImageRecord] | Mapping[str, ImageRecord],
                     annotations: Sequence[DotAnnotation] | ColumnarAnnotations) -> ValidationReport:
    """Tally the dataset without mutating it. Warnings only, never errors."""
    image_map = _image_map(images)
    col = annotations if isinstance(annotations, ColumnarAnnotations) \
        else columnar_from_dots(annotations)

    class_counts = {}
    for a, attr in enumerate(ATTRIBUTES):
        counts = np.bincount(col.response_codes[:, a], minlength=3) if len(col) else np.zeros(3, int)
        class_counts[attr] = {code_label(attr, c): int(counts[c]) for c in range(3)}

    per_user = Counter(col.users)
    per_image: Counter[str] = Counter()
    users_per_image: dict[str, int] = {}
    dupes: Counter[tuple] = Counter()
    for image_id, rows in col.rows_by_image().items():
        per_image[image_id] = len(rows)
        u = {col.users[i] for i in rows}
        users_per_image[image_id] = len(u)
        keys = Counter((col.users[i], col.x[i].item(), col.y[i].item()) for i in rows)
        for (user, x, y), k in keys.items():
            if k > 1:
                dupes[(image_id, user, x, y)] = k

    warnings = [
        f"duplicate dot: image={img} user={user} at ({x!r}, {y!r}) x{k}"
        for (img, user, x, y), k in sorted(dupes.items())
    ]
    return ValidationReport(
        n_images=len(image_map),
        n_annotations=len(col),
        class_counts=class_counts,
        annotations_per_user=dict(per_user),
        annotations_per_image=dict(per_image),
        users_per_image=users_per_image,
        warnings=warnings,
    )


def temporal_split(images: Iterable[ImageRecord],
                   train_before: datetime | str,
                   val_before: datetime | str) -> DatasetSplit:
    """Split images by timestamp: train < b1, b1 <= val < b2, test >= b2."""
    b1 = parse_timestamp(train_before) if isinstance(train_before, str) else train_before
    b2 = parse_timestamp(val_before) if isinstance(val_before, str) else val_before
    if b1.tzinfo is None:
        b1 = b1.replace(tzinfo=timezone.utc)
    if b2.tzinfo is None:
        b2 = b2.replace(tzinfo=timezone.utc)
    if b1 > b2:
        raise ValueError(f"boundaries out of order: {b1.isoformat()} > {b2.isoformat()}")
    train, val, test = set(), set(), set()
    for rec in images:
        if rec.timestamp < b1:
            train.add(rec.image_id)
        elif rec.timestamp < b2:
            val.add(rec.image_id)
        else:
            test.add(rec.image_id)
    return DatasetSplit(frozenset(train), frozenset(val), frozenset(test))

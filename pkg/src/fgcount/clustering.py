"""Consensus aggregation of per-image dot annotations.

Each image's dots are merged agglomeratively under Euclidean distance with a
cannot-link constraint: two clusters that share a user never merge, so one
person can contribute at most one dot per aggregated object. Merging stops
when no permitted merge is within the distance threshold; clusters smaller
than the minimum size are discarded. Each surviving cluster becomes an object
located at its medoid, with per-attribute labels decided by majority vote.

Determinism: dots are processed in (y, x, user_id) order regardless of input
order, exact-distance ties are broken by cluster creation order, and outputs
are sorted by medoid (y, x). Shuffling the input changes nothing.

The agglomeration runs per connected component of the threshold graph
(pairs within distance_threshold). Both supported linkages satisfy
d(A, B) <= t only if some cross pair is <= t, so no merge ever crosses a
component boundary and the decomposition is exact, tie-breaks included.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .attributes import ATTRIBUTES, UNKNOWN, code_label, label_code
from .ingest import DotAnnotation

LINKAGES = ("single", "average")


@dataclass(frozen=True, slots=True)
class ClusterParams:
    linkage: str = "average"
    distance_threshold: float = 24.0
    min_cluster_size: int = 2

    def __post_init__(self):
        if self.linkage not in LINKAGES:
            raise ValueError(f"unknown linkage {self.linkage!r}")
        if not self.distance_threshold > 0:
            raise ValueError("distance_threshold must be > 0")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")


@dataclass(frozen=True)
class AggregatedObject:
    """One consensus object: member dots, medoid location, voted labels."""

    members: tuple[DotAnnotation, ...]
    medoid: tuple[float, float]        # (x, y); always one member's location
    labels: tuple[str, str, str]       # one label per attribute, ATTRIBUTES order

    @property
    def J(self) -> int:
        return len(self.members)

    def label(self, attribute: str) -> str:
        return self.labels[ATTRIBUTES.index(attribute)]

    def labels_dict(self) -> dict[str, str]:
        return dict(zip(ATTRIBUTES, self.labels))


@dataclass
class ClusterStats:
    n_objects: int = 0
    n_discarded_clusters: int = 0
    n_discarded_dots: int = 0


def medoid(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Member point minimizing summed Euclidean distance to the others.

    Ties go to the smallest (y, x). Each point's distances are summed in
    sorted order so symmetric configurations tie exactly.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] != 2:
        raise ValueError("medoid needs a nonempty list of coordinate pairs")
    i = _medoid_index(pts[:, 0], pts[:, 1])
    return (float(pts[i, 0]), float(pts[i, 1]))


def _medoid_index(x: np.ndarray, y: np.ndarray) -> int:
    if len(x) == 1:
        return 0
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    d = np.sqrt(dx * dx + dy * dy)
    d.sort(axis=1)
    sums = d.sum(axis=1)
    cand = np.flatnonzero(sums == sums.min())
    return int(cand[np.lexsort((x[cand], y[cand]))[0]])


def _vote(counts: np.ndarray) -> int:
    """counts = votes for (class0, class1, unknown) -> winning code."""
    c0, c1, cu = int(counts[0]), int(counts[1]), int(counts[2])
    if c0 > c1 and c0 >= cu:
        return 0
    if c1 > c0 and c1 >= cu:
        return 1
    return 2


def majority_vote_labels(members: Sequence[DotAnnotation]) -> tuple[str, str, str]:
    """Per-attribute majority vote over member responses.

    A known class wins only with strictly more votes than the other known
    class and at least as many as unknown; anything else is unknown.
    """
    if not members:
        raise ValueError("majority vote needs a nonempty member list")
    out = []
    for a, attr in enumerate(ATTRIBUTES):
        counts = np.zeros(3, dtype=np.int64)
        for m in members:
            counts[label_code(attr, m.responses[a])] += 1
        out.append(code_label(attr, _vote(counts)))
    return tuple(out)


def _merge_component(x, y, user_codes, linkage: str, threshold: float) -> list[list[int]]:
    """Constrained agglomeration of one component; returns member index lists.

    Indices are positions into the given arrays (already canonical order).
    Merged clusters get fresh ids after the initial ones, so exact-distance
    ties resolve by creation order, independent of the component split.
    """
    m = len(x)
    if m == 1:
        return [[0]]
    if m == 2:
        if user_codes[0] != user_codes[1] and float(np.hypot(x[0] - x[1], y[0] - y[1])) <= threshold:
            return [[0, 1]]
        return [[0], [1]]

    cap = 2 * m
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    D = np.full((cap, cap), np.inf)
    D[:m, :m] = np.sqrt(dx * dx + dy * dy)
    conflict = np.ones((cap, cap), dtype=bool)
    conflict[:m, :m] = user_codes[:, None] == user_codes[None, :]
    np.fill_diagonal(conflict, True)

    # candidate matrix: upper triangle only (i < j), inf where forbidden
    C = np.full((cap, cap), np.inf)
    iu, ju = np.triu_indices(m, k=1)
    ok = ~conflict[iu, ju]
    C[iu[ok], ju[ok]] = D[iu[ok], ju[ok]]

    active = np.zeros(cap, dtype=bool)
    active[:m] = True
    size = np.zeros(cap, dtype=np.int64)
    size[:m] = 1
    members: list[list[int]] = [[i] for i in range(m)]
    nxt = m

    while True:
        view = C[:nxt, :nxt]
        flat = int(np.argmin(view))      # row-major: first minimum = smallest (i, j)
        i, j = divmod(flat, nxt)
        d = view[i, j]
        if not d <= threshold:
            break
        k = nxt
        nxt += 1
        di = D[i, :k]
        dj = D[j, :k]
        if linkage == "average":
            dk = (size[i] * di + size[j] * dj) / (size[i] + size[j])
        else:
            dk = np.minimum(di, dj)
        conf_k = conflict[i, :k] | conflict[j, :k]
        D[k, :k] = dk
        D[:k, k] = dk
        conflict[k, :k] = conf_k
        conflict[:k, k] = conf_k
        size[k] = size[i] + size[j]
        members.append(members[i] + members[j])
        active[i] = active[j] = False
        active[k] = True
        C[i, :] = np.inf
        C[:, i] = np.inf
        C[j, :] = np.inf
        C[:, j] = np.inf
        hs = np.flatnonzero(active[:k])
        vals = np.where(conf_k[hs], np.inf, dk[hs])
        C[hs, k] = vals

    return [members[i] for i in np.flatnonzero(active)]


def cluster_indices(x: np.ndarray, y: np.ndarray, users: Sequence,
                    params: ClusterParams,
                    stats: ClusterStats | None = None,
                    response_codes: np.ndarray | None = None) -> list[np.ndarray]:
    """Cluster one image's dots; returns member index arrays into the input.

    Clusters below min_cluster_size are dropped (tallied into stats if given).
    response_codes, when given, extend the canonical sort key so that exact
    duplicate (position, user) dots with different responses still order by
    content, keeping the output independent of input order.
    """
    n = len(x)
    if n == 0:
        return []
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    users_arr = np.asarray(users)
    keys: tuple = (users_arr, x, y)                # canonical: y, then x, then user
    if response_codes is not None:
        codes = np.asarray(response_codes)
        keys = (codes[:, 2], codes[:, 1], codes[:, 0]) + keys
    order = np.lexsort(keys)
    xs, ys = x[order], y[order]
    _, ucodes = np.unique(users_arr[order], return_inverse=True)

    pairs = cKDTree(np.column_stack((xs, ys))).query_pairs(
        params.distance_threshold, output_type="ndarray")
    if len(pairs):
        graph = coo_matrix((np.ones(len(pairs), dtype=np.int8),
                            (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, comp = connected_components(graph, directed=False)
    else:
        comp = np.arange(n)

    clusters: list[np.ndarray] = []
    comp_order = np.argsort(comp, kind="stable")
    comp_sorted = comp[comp_order]
    boundaries = np.flatnonzero(np.diff(comp_sorted)) + 1
    for rows in np.split(comp_order, boundaries):
        rows.sort()                                 # canonical order within component
        groups = _merge_component(xs[rows], ys[rows], ucodes[rows],
                                  params.linkage, params.distance_threshold)
        for g in groups:
            if len(g) >= params.min_cluster_size:
                # sorted canonical positions -> members come out in (y, x, user) order
                clusters.append(order[rows[np.sort(np.asarray(g))]])
            elif stats is not None:
                stats.n_discarded_clusters += 1
                stats.n_discarded_dots += len(g)
    if stats is not None:
        stats.n_objects += len(clusters)
    return clusters


@dataclass(frozen=True, slots=True)
class ClusterArrays:
    """Array view of one image's aggregation (sorted by medoid y, x)."""

    member_idx: tuple[np.ndarray, ...]   # per object: input row indices
    medoid_x: np.ndarray
    medoid_y: np.ndarray
    label_codes: np.ndarray              # (n_objects, 3) int8

    def __len__(self) -> int:
        return len(self.member_idx)


def aggregate_image_arrays(x: np.ndarray, y: np.ndarray, users: Sequence,
                           codes: np.ndarray, params: ClusterParams,
                           stats: ClusterStats | None = None) -> ClusterArrays:
    """Columnar aggregation core shared by the object API and the pipeline."""
    clusters = cluster_indices(x, y, users, params, stats, response_codes=codes)
    n = len(clusters)
    med_x = np.empty(n)
    med_y = np.empty(n)
    lab = np.empty((n, 3), dtype=np.int8)
    for c, idx in enumerate(clusters):
        mi = idx[_medoid_index(x[idx], y[idx])]
        med_x[c] = x[mi]
        med_y[c] = y[mi]
        for a in range(3):
            lab[c, a] = _vote(np.bincount(codes[idx, a], minlength=3))
    order = np.lexsort((med_x, med_y))
    return ClusterArrays(
        member_idx=tuple(clusters[c] for c in order),
        medoid_x=med_x[order],
        medoid_y=med_y[order],
        label_codes=lab[order],
    )


def cluster_image_annotations(dots: Sequence[DotAnnotation],
                              params: ClusterParams | None = None,
                              stats: ClusterStats | None = None) -> list[AggregatedObject]:
    """Aggregate one image's dots into consensus objects.

    Empty input gives an empty list. Output is sorted by medoid (y, x).
    """
    if params is None:
        params = ClusterParams()
    if not dots:
        return []
    image_ids = {d.image_id for d in dots}
    if len(image_ids) > 1:
        raise ValueError(f"dots span multiple images: {sorted(image_ids)}")
    x = np.asarray([d.x for d in dots])
    y = np.asarray([d.y for d in dots])
    users = [d.user_id for d in dots]
    codes = np.empty((len(dots), 3), dtype=np.int8)
    for i, d in enumerate(dots):
        for a, attr in enumerate(ATTRIBUTES):
            codes[i, a] = label_code(attr, d.responses[a])
    arrays = aggregate_image_arrays(x, y, users, codes, params, stats)
    out = []
    for c in range(len(arrays)):
        members = tuple(dots[i] for i in arrays.member_idx[c])
        labels = tuple(code_label(ATTRIBUTES[a], int(arrays.label_codes[c, a]))
                       for a in range(3))
        out.append(AggregatedObject(
            members=members,
            medoid=(float(arrays.medoid_x[c]), float(arrays.medoid_y[c])),
            labels=labels,
        ))
    return out


def aggregate_dataset(dots_by_image: Mapping[str, Sequence[DotAnnotation]],
                      params: ClusterParams | None = None,
                      stats: ClusterStats | None = None) -> dict[str, list[AggregatedObject]]:
    """Aggregate every image; result keyed by image_id in input key order."""
    if params is None:
        params = ClusterParams()
    return {image_id: cluster_image_annotations(list(dots), params, stats)
            for image_id, dots in dots_by_image.items()}


def aggregated_json_line(image_id: str, medoid_xy: tuple[float, float],
                         members: Iterable[tuple[str, float, float]],
                         labels: tuple[str, str, str]) -> str:
    obj = {
        "image_id": image_id,
        "medoid": [medoid_xy[0], medoid_xy[1]],
        "members": [{"user_id": u, "x": mx, "y": my} for u, mx, my in members],
        "labels": dict(zip(ATTRIBUTES, labels)),
    }
    obj["n_members"] = len(obj["members"])
    # fixed key order for stable bytes
    ordered = {k: obj[k] for k in ("image_id", "medoid", "n_members", "members", "labels")}
    return json.dumps(ordered, separators=(",", ":"))


def write_aggregated(path: str | Path,
                     per_image: Mapping[str, Sequence[AggregatedObject]]) -> None:
    """Write aggregation results as JSON lines, one object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, objects in per_image.items():
            for obj in objects:
                fh.write(aggregated_json_line(
                    image_id, obj.medoid,
                    [(m.user_id, m.x, m.y) for m in obj.members],
                    obj.labels) + "\n")


def read_aggregated(path: str | Path) -> dict[str, list[AggregatedObject]]:
    """Read aggregated objects back, grouped by image in file order.

    Member attribute responses are not stored in the file, so reconstructed
    members carry unknown responses; locations, labels, and medoids round-trip
    exactly.
    """
    out: dict[str, list[AggregatedObject]] = {}
    unknown3 = (UNKNOWN, UNKNOWN, UNKNOWN)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                image_id = rec["image_id"]
                members = tuple(
                    DotAnnotation(image_id=image_id, user_id=m["user_id"],
                                  x=float(m["x"]), y=float(m["y"]),
                                  responses=unknown3)
                    for m in rec["members"])
                labels = tuple(rec["labels"][attr] for attr in ATTRIBUTES)
                obj = AggregatedObject(
                    members=members,
                    medoid=(float(rec["medoid"][0]), float(rec["medoid"][1])),
                    labels=labels,
                )
                if rec.get("n_members") is not None and rec["n_members"] != obj.J:
                    raise ValueError(f"n_members {rec['n_members']} != member count {obj.J}")
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ValueError(f"bad aggregated record, line {line_no} [{path}]: {exc}") from None
            out.setdefault(image_id, []).append(obj)
    return out

"""Independent reference implementations used to check the real ones.

These deliberately avoid the package's algorithms: clustering recomputes
linkage distances from raw pairwise distances at every step (no incremental
updates, no spatial indexing), and the density oracle evaluates the kernel
expression directly at every pixel. Slow and simple on purpose.
"""

from __future__ import annotations

import numpy as np


def canonical_order(x, y, users, codes=None) -> np.ndarray:
    keys = (np.asarray(users), np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if codes is not None:
        c = np.asarray(codes)
        keys = (c[:, 2], c[:, 1], c[:, 0]) + keys
    return np.lexsort(keys)


def naive_cluster(x, y, users, linkage: str, threshold: float,
                  codes=None) -> list[list[int]]:
    """Constrained agglomeration, recomputed from scratch each step.

    Returns clusters as lists of original input indices (all sizes; callers
    apply any minimum-size filter). Merge rule: among pairs of live clusters
    sharing no user, take the smallest linkage distance <= threshold; ties go
    to the lexicographically smallest (i, j) by cluster creation order.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    users = list(users)
    order = canonical_order(x, y, users, codes)
    # cluster id -> member original indices; ids in creation order
    clusters: dict[int, list[int]] = {i: [int(order[i])] for i in range(len(order))}
    next_id = len(order)

    def dist(a: list[int], b: list[int]) -> float:
        ds = [float(np.hypot(x[i] - x[j], y[i] - y[j])) for i in a for j in b]
        return min(ds) if linkage == "single" else sum(ds) / len(ds)

    def shares_user(a: list[int], b: list[int]) -> bool:
        return bool({users[i] for i in a} & {users[j] for j in b})

    while True:
        best = None
        ids = sorted(clusters)
        for ai in range(len(ids)):
            for bi in range(ai + 1, len(ids)):
                i, j = ids[ai], ids[bi]
                if shares_user(clusters[i], clusters[j]):
                    continue
                d = dist(clusters[i], clusters[j])
                if d <= threshold and (best is None or d < best[0]):
                    best = (d, i, j)
        if best is None:
            break
        _, i, j = best
        clusters[next_id] = clusters.pop(i) + clusters.pop(j)
        next_id += 1
    return [sorted(members) for members in clusters.values()]


def naive_medoid(points) -> tuple[float, float]:
    """Exhaustive medoid: smallest summed distance, ties by (y, x)."""
    pts = [(float(px), float(py)) for px, py in points]
    best = None
    for px, py in pts:
        s = sum(np.hypot(px - qx, py - qy) for qx, qy in pts)
        key = (round(s, 9), py, px)
        if best is None or key < best[0]:
            best = (key, (px, py))
    return best[1]


def kernel_normalizer(sigma: float, radius: int) -> float:
    """Sum of the truncated kernel over its square window, via separability."""
    t = np.arange(-radius, radius + 1, dtype=float)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return float(g.sum()) ** 2


def naive_density(points_per_object, dims, sigma: float, trunc: float,
                  renormalize: bool = True) -> np.ndarray:
    """Direct per-pixel evaluation of the stamped, truncated, square-window
    Gaussian model: each point is rasterized with round-half-up, the kernel
    value at integer offset (dx, dy) is exp(-(dx^2+dy^2)/(2 sigma^2)) / Z
    inside |dx|,|dy| <= r, and each object is renormalized after border crops.
    """
    width, height = dims
    r = int(np.floor(trunc * sigma))
    z = kernel_normalizer(sigma, r)
    ix = np.arange(width, dtype=float)
    iy = np.arange(height, dtype=float)
    out = np.zeros((height, width))
    for pts in points_per_object:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        weight = 1.0 / len(pts)
        canvas = np.zeros((height, width))
        for px_f, py_f in pts:
            px = int(min(max(np.floor(px_f + 0.5), 0), width - 1))
            py = int(min(max(np.floor(py_f + 0.5), 0), height - 1))
            dx = ix - px
            dy = iy - py
            inside = (np.abs(dy)[:, None] <= r) & (np.abs(dx)[None, :] <= r)
            vals = np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) / (2 * sigma ** 2)) / z
            canvas += np.where(inside, weight * vals, 0.0)
        if renormalize:
            s = canvas.sum()
            if s > 0:
                canvas /= s
        out += canvas
    return out


def metric_channels(shape=(4, 4)) -> dict[str, np.ndarray]:
    """Empty channel dict in the tensor-file naming scheme."""
    names = ["overall"]
    for attr, classes in (("species", ("elephant", "fur", "unknown")),
                          ("sex", ("male", "female", "unknown")),
                          ("age", ("adult", "pup", "unknown"))):
        names += [f"density_{attr}_{c}" for c in classes]
        names.append(f"mask_{attr}")
    return {n: np.zeros(shape) for n in names}


def metric_hand_fixture():
    """Two 4x4 images with every metric value computed by hand.

    Image "a" holds three point masses: 3.0 at pixel (0,0) labeled
    elephant/male/adult, 4.0 at (1,2) labeled fur/female/pup, and 1.0 at
    (3,3) labeled unknown/male/unknown, so the species and age masks cover
    exactly pixel (3,3). The prediction for "a" has no overall channel (the
    evaluator falls back to the mean of the per-attribute known-class
    totals, 16) and known-class mass of 16 per attribute. Image "b" is a
    perfect prediction. Expected report: per-image errors 8 and 0, MAE 4;
    MMAE species (1, 0), sex (2, 2), age (2.5, 2); CMMAE 4.75/3.
    """
    gt_a = metric_channels()
    gt_a["overall"][0, 0] = 3.0
    gt_a["overall"][1, 2] = 4.0
    gt_a["overall"][3, 3] = 1.0
    gt_a["density_species_elephant"][0, 0] = 3.0
    gt_a["density_species_fur"][1, 2] = 4.0
    gt_a["density_species_unknown"][3, 3] = 1.0
    gt_a["density_sex_male"][0, 0] = 3.0
    gt_a["density_sex_male"][3, 3] = 1.0
    gt_a["density_sex_female"][1, 2] = 4.0
    gt_a["density_age_adult"][0, 0] = 3.0
    gt_a["density_age_pup"][1, 2] = 4.0
    gt_a["density_age_unknown"][3, 3] = 1.0
    gt_a["mask_species"][3, 3] = 1.0
    gt_a["mask_age"][3, 3] = 1.0

    pred_a = metric_channels()
    del pred_a["overall"]                  # exercises the fallback total
    for attr in ("species", "sex", "age"):
        del pred_a[f"mask_{attr}"]         # masks come from the gt side
    pred_a["density_species_elephant"][0, 0] = 5.0
    pred_a["density_species_fur"][1, 2] = 4.0
    pred_a["density_species_fur"][3, 3] = 7.0
    pred_a["density_sex_male"][0, 0] = 2.0
    pred_a["density_sex_male"][3, 3] = 6.0
    pred_a["density_sex_female"][1, 2] = 8.0
    pred_a["density_age_adult"][0, 0] = 3.0
    pred_a["density_age_adult"][0, 2] = 5.0
    pred_a["density_age_pup"][1, 2] = 8.0

    gt_b = metric_channels()
    gt_b["overall"][1, 1] = 2.0
    gt_b["density_species_elephant"][1, 1] = 2.0
    gt_b["density_sex_male"][1, 1] = 2.0
    gt_b["density_age_adult"][1, 1] = 2.0
    pred_b = {k: v.copy() for k, v in gt_b.items()}
    return {"a": pred_a, "b": pred_b}, {"a": gt_a, "b": gt_b}

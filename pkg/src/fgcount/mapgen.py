"""Ground-truth map rendering: densities, soft segmentation, masks.

Every aggregated object contributes unit mass to an overall density map and,
per attribute, to the channel of its voted label (class0 / class1 / unknown).
Two rendering methods share one code path:

* fixed: one truncated Gaussian stamped at the object's medoid,
* spread: weight 1/J at each member's pixel, then the same Gaussian.

Kernels are truncated at truncation_radius * sigma and each object's stamp is
renormalized to unit integral after cropping at image borders, so integrals
count objects exactly. Soft segmentation divides known-class densities by
their sum (guarded), the background channel thresholds the overall density,
and per-attribute loss masks flag foreground cells where the unknown channel
dominates both known classes.

Grids can be sum-pooled by an integer factor to match a network's output
stride; pooling is applied per object stamp, which preserves both mass and
the single-code-path guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .attributes import ATTRIBUTES, CLASS_NAMES, UNKNOWN, label_code
from .clustering import AggregatedObject

EPS_DIV = 1e-12       # guard for the segmentation division
TAU_DEFAULT = 1e-4    # objects/pixel; background threshold


@dataclass(frozen=True, slots=True)
class KernelSpec:
    sigma: float = 12.0
    truncation_radius: float = 4.0
    renormalize: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.truncation_radius >= 1:
            raise ValueError("truncation_radius must be >= 1")

    @property
    def radius_px(self) -> int:
        return int(np.floor(self.truncation_radius * self.sigma))


@lru_cache(maxsize=32)
def _kernel(sigma: float, radius_px: int) -> np.ndarray:
    """Truncated 2-D Gaussian, normalized to sum 1, read-only."""
    offsets = np.arange(-radius_px, radius_px + 1, dtype=np.float64)
    g = np.exp(-0.5 * (offsets / sigma) ** 2)
    k = np.outer(g, g)
    k /= k.sum()
    k.setflags(write=False)
    return k


def rasterize(coords: np.ndarray, dim: int) -> np.ndarray:
    """Continuous coordinate -> pixel index (round half up, clipped)."""
    return np.clip(np.floor(np.asarray(coords, dtype=np.float64) + 0.5),
                   0, dim - 1).astype(np.int64)


@dataclass
class DensityStack:
    """All density channels for one image at one grid resolution.

    per_attribute[attr] has shape (3, H, W): class0, class1, unknown.
    """

    image_id: str
    overall: np.ndarray
    per_attribute: dict[str, np.ndarray]
    downsample_factor: int = 1
    method: str = "fixed"
    kernel: KernelSpec = field(default_factory=KernelSpec)

    @property
    def grid_size(self) -> tuple[int, int]:
        """(width, height) of the stored grids."""
        h, w = self.overall.shape
        return (w, h)

    def channel(self, attribute: str, code: int) -> np.ndarray:
        return self.per_attribute[attribute][code]


@dataclass
class SegmentationStack:
    """Soft segmentation, background, and loss masks for one image."""

    image_id: str
    seg: dict[str, np.ndarray]            # attr -> (2, H, W) in [0, 1]
    background: np.ndarray                # (H, W) uint8, 1 = background
    unknown_masks: dict[str, np.ndarray]  # attr -> (H, W) uint8, 1 = masked
    tau: float = TAU_DEFAULT


def _pool(grid: np.ndarray, factor: int) -> np.ndarray:
    h, w = grid.shape
    return grid.reshape(h // factor, factor, w // factor, factor).sum(axis=(1, 3))


def downsample_preserving_count(grid: np.ndarray, factor: int) -> np.ndarray:
    """Sum-pool over factor x factor blocks; zero-pads ragged edges.

    The total sum is preserved, so counts survive any factor.
    """
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    grid = np.asarray(grid, dtype=np.float64)
    if factor == 1:
        return grid.copy()
    h, w = grid.shape
    hp = -(-h // factor) * factor
    wp = -(-w // factor) * factor
    if (hp, wp) != (h, w):
        padded = np.zeros((hp, wp))
        padded[:h, :w] = grid
        grid = padded
    return _pool(grid, factor)


def _stamp_object(points_xy: np.ndarray, weight: float, width: int, height: int,
                  kernel: KernelSpec) -> tuple[np.ndarray, int, int]:
    """Render one object's stamp, cropped to the image.

    Returns (patch, y0, x0) in full-resolution pixel coordinates.
    """
    k = _kernel(kernel.sigma, kernel.radius_px)
    r = kernel.radius_px
    px = rasterize(points_xy[:, 0], width)
    py = rasterize(points_xy[:, 1], height)
    gy0 = max(int(py.min()) - r, 0)
    gy1 = min(int(py.max()) + r + 1, height)
    gx0 = max(int(px.min()) - r, 0)
    gx1 = min(int(px.max()) + r + 1, width)
    patch = np.zeros((gy1 - gy0, gx1 - gx0))
    for x, y in zip(px, py):
        y0, x0 = y - r, x - r
        ky0 = max(gy0 - y0, 0)
        kx0 = max(gx0 - x0, 0)
        ky1 = k.shape[0] - max(y0 + k.shape[0] - gy1, 0)
        kx1 = k.shape[1] - max(x0 + k.shape[1] - gx1, 0)
        patch[y0 + ky0 - gy0:y0 + ky1 - gy0,
              x0 + kx0 - gx0:x0 + kx1 - gx0] += weight * k[ky0:ky1, kx0:kx1]
    if kernel.renormalize:
        s = patch.sum()
        if s > 0:
            patch /= s
    return patch, gy0, gx0


def _pool_patch(patch: np.ndarray, y0: int, x0: int,
                factor: int) -> tuple[np.ndarray, int, int]:
    """Sum-pool one stamp onto the factor-aligned grid; returns pooled coords."""
    if factor == 1:
        return patch, y0, x0
    y1 = y0 + patch.shape[0]
    x1 = x0 + patch.shape[1]
    ya = (y0 // factor) * factor
    xa = (x0 // factor) * factor
    yb = -(-y1 // factor) * factor
    xb = -(-x1 // factor) * factor
    tmp = np.zeros((yb - ya, xb - xa))
    tmp[y0 - ya:y1 - ya, x0 - xa:x1 - xa] = patch
    return _pool(tmp, factor), ya // factor, xa // factor


def render_density(points_per_object: Sequence[np.ndarray],
                   label_codes: np.ndarray,
                   dims: tuple[int, int],
                   kernel: KernelSpec = KernelSpec(),
                   downsample_factor: int = 1,
                   image_id: str = "",
                   method: str = "fixed") -> DensityStack:
    """Array-level renderer shared by both density methods.

    points_per_object[k] is an (J, 2) array of (x, y) stamp locations for
    object k, each stamped with weight 1/J; label_codes is (n_objects, 3).
    """
    width, height = int(dims[0]), int(dims[1])
    if width < 1 or height < 1:
        raise ValueError(f"image dims must be positive, got {dims}")
    if downsample_factor < 1:
        raise ValueError("downsample_factor must be a positive integer")
    f = downsample_factor
    hp = -(-height // f)
    wp = -(-width // f)
    overall = np.zeros((hp, wp))
    per_attr = {attr: np.zeros((3, hp, wp)) for attr in ATTRIBUTES}

    for k, pts in enumerate(points_per_object):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError("object with no stamp points")
        patch, y0, x0 = _stamp_object(pts, 1.0 / len(pts), width, height, kernel)
        pooled, py0, px0 = _pool_patch(patch, y0, x0, f)
        ph, pw = pooled.shape
        sl = (slice(py0, py0 + ph), slice(px0, px0 + pw))
        overall[sl] += pooled
        for a, attr in enumerate(ATTRIBUTES):
            per_attr[attr][int(label_codes[k, a])][sl] += pooled

    return DensityStack(image_id=image_id, overall=overall, per_attribute=per_attr,
                        downsample_factor=f, method=method, kernel=kernel)


def _object_labels(objects: Sequence[AggregatedObject]) -> np.ndarray:
    codes = np.zeros((len(objects), 3), dtype=np.int8)
    for k, obj in enumerate(objects):
        for a, attr in enumerate(ATTRIBUTES):
            codes[k, a] = label_code(attr, obj.labels[a])
    return codes


def fixed_kernel_density(objects: Sequence[AggregatedObject],
                         dims: tuple[int, int],
                         kernel: KernelSpec = KernelSpec(),
                         downsample_factor: int = 1,
                         image_id: str = "") -> DensityStack:
    """One Gaussian per object at its medoid."""
    points = [np.asarray([obj.medoid], dtype=np.float64) for obj in objects]
    return render_density(points, _object_labels(objects), dims, kernel,
                          downsample_factor, image_id, method="fixed")


def cluster_spread_density(objects: Sequence[AggregatedObject],
                           dims: tuple[int, int],
                           kernel: KernelSpec = KernelSpec(),
                           downsample_factor: int = 1,
                           image_id: str = "") -> DensityStack:
    """Weight 1/J at each member dot, then the Gaussian; mass still 1/object."""
    points = [np.asarray([(m.x, m.y) for m in obj.members], dtype=np.float64)
              for obj in objects]
    return render_density(points, _object_labels(objects), dims, kernel,
                          downsample_factor, image_id, method="cluster")


def soft_segmentation_channels(d0: np.ndarray, d1: np.ndarray,
                               eps: float = EPS_DIV) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel class fractions d_c / (d_0 + d_1), zero where the sum <= eps."""
    denom = d0 + d1
    ok = denom > eps
    s0 = np.zeros_like(denom)
    s1 = np.zeros_like(denom)
    np.divide(d0, denom, out=s0, where=ok)
    np.divide(d1, denom, out=s1, where=ok)
    return np.clip(s0, 0.0, 1.0), np.clip(s1, 0.0, 1.0)


def background_channel(density: DensityStack, tau: float = TAU_DEFAULT) -> np.ndarray:
    """1 where the overall density is below tau."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    return (density.overall < tau).astype(np.uint8)


def unknown_loss_mask(density: DensityStack, tau: float = TAU_DEFAULT) -> dict[str, np.ndarray]:
    """Per attribute, 1 on foreground cells where unknown outweighs both classes.

    Masked cells are excluded from class losses and masked metrics; the
    overall count never consults these masks.
    """
    if not tau > 0:
        raise ValueError("tau must be > 0")
    fg = density.overall >= tau
    out = {}
    for attr in ATTRIBUTES:
        d = density.per_attribute[attr]
        dominant = d[2] > np.maximum(d[0], d[1])
        out[attr] = (fg & dominant).astype(np.uint8)
    return out


def soft_segmentation(density: DensityStack, tau: float = TAU_DEFAULT,
                      eps: float = EPS_DIV) -> SegmentationStack:
    """Full segmentation bundle: class fractions, background, loss masks."""
    seg = {}
    for attr in ATTRIBUTES:
        d = density.per_attribute[attr]
        s0, s1 = soft_segmentation_channels(d[0], d[1], eps)
        seg[attr] = np.stack([s0, s1])
    return SegmentationStack(
        image_id=density.image_id,
        seg=seg,
        background=background_channel(density, tau),
        unknown_masks=unknown_loss_mask(density, tau),
        tau=tau,
    )


# channel naming for the tensor-file boundary

def density_channel_name(attribute: str, code: int) -> str:
    name = CLASS_NAMES[attribute][code] if code < 2 else UNKNOWN
    return f"density_{attribute}_{name}"


def seg_channel_name(attribute: str, code: int) -> str:
    return f"seg_{attribute}_{CLASS_NAMES[attribute][code]}"


def mask_channel_name(attribute: str) -> str:
    return f"mask_{attribute}"


def stack_channels(density: DensityStack,
                   seg: SegmentationStack | None = None) -> dict[str, np.ndarray]:
    """Flatten stacks into the channel dict used by the tensor files."""
    channels: dict[str, np.ndarray] = {"overall": density.overall}
    for attr in ATTRIBUTES:
        for code in range(3):
            channels[density_channel_name(attr, code)] = density.per_attribute[attr][code]
    if seg is not None:
        for attr in ATTRIBUTES:
            for code in range(2):
                channels[seg_channel_name(attr, code)] = seg.seg[attr][code]
            channels[mask_channel_name(attr)] = seg.unknown_masks[attr]
        channels["background"] = seg.background
    return channels


def stack_meta(density: DensityStack, tau: float | None = None) -> dict:
    """Sidecar metadata describing how a stack was generated."""
    w, h = density.grid_size
    meta = {
        "image_id": density.image_id,
        "grid_width": w,
        "grid_height": h,
        "downsample_factor": density.downsample_factor,
        "method": density.method,
        "sigma": density.kernel.sigma,
        "truncation_radius": density.kernel.truncation_radius,
        "renormalize": density.kernel.renormalize,
    }
    if tau is not None:
        meta["tau"] = tau
    return meta


def density_from_channels(channels: Mapping[str, np.ndarray],
                          meta: Mapping) -> DensityStack:
    """Rebuild a DensityStack from tensor-file channels (inverse of stack_channels)."""
    per_attr = {}
    for attr in ATTRIBUTES:
        per_attr[attr] = np.stack([
            np.asarray(channels[density_channel_name(attr, code)], dtype=np.float64)
            for code in range(3)])
    kernel = KernelSpec(sigma=float(meta.get("sigma", 12.0)),
                        truncation_radius=float(meta.get("truncation_radius", 4.0)),
                        renormalize=bool(meta.get("renormalize", True)))
    return DensityStack(
        image_id=str(meta.get("image_id", "")),
        overall=np.asarray(channels["overall"], dtype=np.float64),
        per_attribute=per_attr,
        downsample_factor=int(meta.get("downsample_factor", 1)),
        method=str(meta.get("method", "fixed")),
        kernel=kernel,
    )

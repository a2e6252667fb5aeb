"""
Unknown regions: class fractions, masks, and what they protect
==============================================================

Crowds sometimes cannot identify an animal's species, sex, or age. Those
objects still occupy space and still need counting, but their per-class
identity is unusable for training or scoring. This demo shows how the
unknown channel flows into the soft segmentation maps and the loss masks,
and why the overall count error ignores the masks entirely.
"""

import numpy as np

from fgcount import (ATTRIBUTES, ClusterParams, SimConfig, TAU_DEFAULT,
                     cluster_image_annotations, density_channel_name,
                     evaluate, fixed_kernel_density, iter_scenes,
                     mask_channel_name, soft_segmentation, stack_channels)

# Half the population gets a real species label, the rest are unknown; sex
# and age stay clean so the contrast is visible in one report.
config = SimConfig(seed=33, width=320, height=240, n_images=1,
                   objects_per_image=10.0, min_separation=55.0,
                   n_users=5, sigma_user=1.5,
                   priors={"species": (0.25, 0.25, 0.5)})

scene = next(iter_scenes(config))
objects = cluster_image_annotations(scene.annotations, ClusterParams())
labels = [obj.label("species") for obj in objects]
print(f"{len(objects)} objects, species labels: {sorted(labels)}")

dims = (config.width, config.height)
density = fixed_kernel_density(objects, dims, image_id=scene.image_id)
seg = soft_segmentation(density)

# The segmentation channels split only the known mass. Where both known
# densities vanish the fractions are defined as zero.
s = seg.seg["species"]
known = density.channel("species", 0) + density.channel("species", 1)
on = known > 0
print(f"\nknown species density covers {on.mean():.1%} of pixels")
print(f"S0+S1 on those pixels: min {(s[0] + s[1])[on].min():.6f}, "
      f"max {(s[0] + s[1])[on].max():.6f}")

# Masks flag foreground pixels where the unknown channel dominates.
mask = seg.unknown_masks["species"]
foreground = density.overall >= TAU_DEFAULT
print(f"foreground pixels: {int(foreground.sum())}, "
      f"species-masked: {int(mask.sum())}")
print(f"sex mask is empty (no unknown sex labels): "
      f"{int(seg.unknown_masks['sex'].sum()) == 0}")

# Build a deliberately bad prediction: everywhere the mask flags unknown
# species, claim that mass as elephants. The masked per-class metric
# forgives it; the overall count does not forgive a doubled total.
gt = stack_channels(density, seg)
pred = {k: v.copy() for k, v in gt.items()}
unk = gt[density_channel_name("species", 2)]
pred[density_channel_name("species", 0)] = \
    gt[density_channel_name("species", 0)] + unk * mask
pred["overall"] = gt["overall"] * 2.0

report = evaluate({scene.image_id: pred}, {scene.image_id: gt})
print(f"\nspecies MMAE (masked): {report.mmae['species']}")
print(f"overall MAE (never masked): {report.mae:.4f} "
      f"= the doubled count, {len(objects)} objects")

assert report.mmae["species"] == (0.0, 0.0)
assert abs(report.mae - len(objects)) < 1e-6
for attr in ATTRIBUTES:
    assert gt[mask_channel_name(attr)].shape == gt["overall"].shape
print("\nmasks shield class scores, never the count itself")

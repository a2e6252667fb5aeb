"""Crowd-sourced dot aggregation and fine-grained counting toolkit.

Pipeline: parse dot annotations (ingest), merge them into consensus objects
per image (clustering), render density / segmentation / mask stacks
(mapgen), and score predicted stacks against ground truth (metrics). A
seeded simulator (simulate) generates synthetic datasets that exercise the
whole pipeline, and the fgcount console script exposes each stage as a
subcommand.
"""

from importlib import metadata

try:
    __version__ = metadata.version("fgcount")
except metadata.PackageNotFoundError:
    __version__ = "0+unknown"

from .attributes import ATTRIBUTES, CLASS_NAMES, UNKNOWN, code_label, label_code
from .clustering import (AggregatedObject, ClusterParams, ClusterStats,
                         cluster_image_annotations, majority_vote_labels, medoid,
                         read_aggregated, write_aggregated)
from .ingest import (DatasetSplit, DotAnnotation, ImageRecord, IngestError,
                     load_dataset, parse_annotations_columnar, parse_image_metadata,
                     temporal_split, validate_dataset, write_annotations,
                     write_image_metadata)
from .mapgen import (DensityStack, KernelSpec, SegmentationStack, TAU_DEFAULT,
                     background_channel, cluster_spread_density,
                     density_channel_name, density_from_channels,
                     downsample_preserving_count, fixed_kernel_density,
                     mask_channel_name, render_density, seg_channel_name,
                     soft_segmentation, stack_channels, stack_meta,
                     unknown_loss_mask)
from .metrics import (EvalReport, cmmae, count_mae, evaluate, evaluate_pairs,
                      fuse_density_segmentation, loss_class_mse, loss_soft_xent,
                      loss_total_count, masked_mae, write_report_csv,
                      write_report_json)
from .simulate import (RecoveryReport, SimConfig, SimScene, generate_scene,
                       iter_scenes, oracle_evaluate, simulate_annotations,
                       write_dataset)

__all__ = [
    "ATTRIBUTES", "CLASS_NAMES", "UNKNOWN", "code_label", "label_code",
    "AggregatedObject", "ClusterParams", "ClusterStats",
    "cluster_image_annotations", "majority_vote_labels", "medoid",
    "read_aggregated", "write_aggregated",
    "DatasetSplit", "DotAnnotation", "ImageRecord", "IngestError",
    "load_dataset", "parse_annotations_columnar", "parse_image_metadata",
    "temporal_split", "validate_dataset", "write_annotations", "write_image_metadata",
    "DensityStack", "KernelSpec", "SegmentationStack", "TAU_DEFAULT",
    "background_channel", "cluster_spread_density", "density_channel_name",
    "density_from_channels", "downsample_preserving_count", "fixed_kernel_density",
    "mask_channel_name", "render_density", "seg_channel_name",
    "soft_segmentation", "stack_channels", "stack_meta", "unknown_loss_mask",
    "EvalReport", "cmmae", "count_mae", "evaluate", "evaluate_pairs",
    "fuse_density_segmentation", "loss_class_mse", "loss_soft_xent",
    "loss_total_count", "masked_mae", "write_report_csv", "write_report_json",
    "RecoveryReport", "SimConfig", "SimScene", "generate_scene", "iter_scenes",
    "oracle_evaluate", "simulate_annotations", "write_dataset",
    "__version__",
]

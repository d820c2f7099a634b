"""Road damage detection toolkit.

Annotation format conversion, large-image cropping, dataset statistics,
detector evaluation (mAP/F1/NMS), deterministic augmentations, small
neural numerics (conv+batchnorm fusion, coordinate attention), and a
batched dual-path inference pipeline with pluggable backends.
"""

from .annotations import (
    ClassRemap,
    DistributionReport,
    VocParseError,
    VocParseResult,
    YoloParseError,
    distribution_stats,
    format_voc,
    parse_voc,
    parse_yolo,
    read_manifest,
    remap_classes,
    split_dataset,
    write_manifest,
    write_stats_csv,
    write_yolo,
)
from .augment import AugmentParams, ImageBuffer, mixup, mosaic, paste_in, random_affine
from .geometry import (
    CropRegion,
    RetainPolicy,
    crop_annotations,
    iou,
    is_large,
    lower_left_region,
    remap_to_original,
    scaled_label_size,
)
from .metrics import (
    PRCurve,
    average_precision,
    best_f1_sweep,
    ensemble_fuse,
    f1_at,
    f1_sweep,
    map50,
    match_detections,
    nms,
    per_class_ap,
    pr_curve,
)
from .numerics import (
    BatchNormParams,
    CoordAttnParams,
    Conv2dParams,
    Tensor3,
    batchnorm_infer,
    conv2d,
    coord_attention,
    fuse_conv_bn,
    smooth_targets,
)
from .orchestrator import (
    BatchPlan,
    LatencyReport,
    ModelBackend,
    ModelSidecar,
    OnnxBackend,
    PipelineResult,
    PreparedImage,
    StubBackend,
    StubRule,
    TransformRecord,
    load_model_sidecar,
    measure,
    plan_batches,
    preprocess,
    run_pipeline,
    tta_run,
)
from .seeding import rng_for, splitmix64, stable_id_hash
from .types import (
    Annotation,
    Box,
    DamageClass,
    Detection,
    Frame,
    ImageRecord,
    PipelineConfig,
    Split,
    validate_config,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AugmentParams",
    "BatchNormParams",
    "BatchPlan",
    "Box",
    "ClassRemap",
    "CoordAttnParams",
    "Conv2dParams",
    "CropRegion",
    "DamageClass",
    "Detection",
    "DistributionReport",
    "Frame",
    "ImageBuffer",
    "ImageRecord",
    "LatencyReport",
    "ModelBackend",
    "ModelSidecar",
    "OnnxBackend",
    "PRCurve",
    "PipelineConfig",
    "PipelineResult",
    "PreparedImage",
    "RetainPolicy",
    "Split",
    "StubBackend",
    "StubRule",
    "Tensor3",
    "TransformRecord",
    "VocParseError",
    "VocParseResult",
    "YoloParseError",
    "average_precision",
    "batchnorm_infer",
    "best_f1_sweep",
    "conv2d",
    "coord_attention",
    "crop_annotations",
    "distribution_stats",
    "ensemble_fuse",
    "f1_at",
    "f1_sweep",
    "format_voc",
    "fuse_conv_bn",
    "iou",
    "is_large",
    "load_model_sidecar",
    "lower_left_region",
    "map50",
    "match_detections",
    "measure",
    "mixup",
    "mosaic",
    "nms",
    "parse_voc",
    "parse_yolo",
    "paste_in",
    "per_class_ap",
    "plan_batches",
    "pr_curve",
    "preprocess",
    "random_affine",
    "read_manifest",
    "remap_classes",
    "remap_to_original",
    "rng_for",
    "run_pipeline",
    "scaled_label_size",
    "smooth_targets",
    "splitmix64",
    "split_dataset",
    "stable_id_hash",
    "tta_run",
    "validate_config",
    "write_manifest",
    "write_stats_csv",
    "write_yolo",
]

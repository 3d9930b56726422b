"""Anomaly-map binarization, mask-guided region classification, and evaluation."""

from .crop import RegionCropper, SubImageRecord, crop_regions, resize_to_model
from .mebin import (
    MainElementBinarizer,
    MebinConfig,
    MebinResult,
    ThresholdRange,
    binarize,
    compute_threshold_range,
    fixed_threshold_binarize,
    otsu_threshold,
)
from .merge import MergeConfig, merge_baselines, merge_image
from .metrics import (
    ClusteringReport,
    DetectionReport,
    ari,
    clustering_report,
    detection_rates,
    hungarian_match,
    matched_f1,
    nmi,
)
from .mgvit import (
    MaskGuidedViT,
    MaskVector,
    ModelConfig,
    inspect_checkpoint,
    load_checkpoint,
    pool_mask,
    save_checkpoint,
)
from .ncd import (
    NoveltyClassifier,
    TrainConfig,
    augment,
    classification_loss,
    correct_pseudo_labels,
    entropy_regularizer,
    pseudo_labels,
    self_contrastive_loss,
    supervised_contrastive_loss,
    train,
)
from .raster import RegionSet, connected_components, erode, load_anomaly_map, save_mask
from .synth import NoiseConfig, SynthConfig, generate, write_corpus

__version__ = "0.1.0"

__all__ = [
    "MainElementBinarizer",
    "MaskGuidedViT",
    "MaskVector",
    "MebinConfig",
    "MebinResult",
    "MergeConfig",
    "ModelConfig",
    "NoiseConfig",
    "NoveltyClassifier",
    "RegionCropper",
    "RegionSet",
    "SubImageRecord",
    "SynthConfig",
    "ThresholdRange",
    "TrainConfig",
    "ClusteringReport",
    "DetectionReport",
    "ari",
    "augment",
    "binarize",
    "classification_loss",
    "clustering_report",
    "compute_threshold_range",
    "connected_components",
    "correct_pseudo_labels",
    "crop_regions",
    "detection_rates",
    "entropy_regularizer",
    "erode",
    "fixed_threshold_binarize",
    "generate",
    "hungarian_match",
    "inspect_checkpoint",
    "load_anomaly_map",
    "load_checkpoint",
    "matched_f1",
    "merge_baselines",
    "merge_image",
    "nmi",
    "otsu_threshold",
    "pool_mask",
    "pseudo_labels",
    "resize_to_model",
    "save_checkpoint",
    "save_mask",
    "self_contrastive_loss",
    "supervised_contrastive_loss",
    "train",
    "write_corpus",
]

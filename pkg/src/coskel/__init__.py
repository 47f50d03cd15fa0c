"""Skeleton-based action recognition with multimodal co-learning at training
time and skeleton-only inference.

The library trains a graph-convolutional skeleton classifier while two
auxiliary signals shape its features: a contrastive term aligning skeleton
features with features of temporal composite RGB crops, and a refinement term
steering classifier scores with per-sample text features produced by an
external exporter. Both auxiliaries vanish at inference; trained models
consume nothing but skeleton tensors.
"""

from .align import AlignmentMlp, ContrastiveConfig, align_features, contrastive_loss
from .autodiff import Tensor, cross_entropy, gradcheck
from .backbone import (
    AdjacencySet,
    BackboneConfig,
    SkeletonBackbone,
    build_adjacency_subsets,
    normalize_adjacency,
)
from .config import Config, load_config, parse_config_text
from .data import Manifest, ManifestEntry, SkeletonDataset, load_manifest, save_manifest
from .errors import ConfigError, CoskelError, DataError, NumericError, UsageError
from .refine import (
    RefinementParams,
    TextFeatureTable,
    TextFeatureVector,
    load_text_features,
    refine_scores,
    refinement_loss,
    save_text_features,
    unify_text_features,
)
from .rgb import (
    CnnConfig,
    CnnExtractor,
    FrameSet,
    TemporalCompositeImage,
    build_composite,
    concat_temporal,
    crop_and_resize,
    uniform_sample_indices,
)
from .rng import substream
from .skeleton import (
    GraphTopology,
    JointMapping,
    ModalityTensor,
    SkeletonSequence,
    derive_bone,
    derive_modality,
    derive_motion,
    identity_mapping,
    interpolate_skeleton,
    linear_index_mapping,
)
from .train import (
    LossWeights,
    Schedule,
    StreamResult,
    TrainState,
    build_state,
    ensemble_scores,
    evaluate_topk,
    fit,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    total_loss,
    train_epoch,
    zero_shot_transfer,
)

__version__ = "0.1.0"

"""Loopback perception/cognition decoding for generalized referring
segmentation, on deterministic synthetic fixtures.

The two stateful pieces wear the scikit-learn estimator API:
:class:`LoopbackDecoder` (fit materializes seeded weights, predict maps
feature bundles to target selections) and :class:`NonReferentConverter`
(fit collects the sentence pool, transform rewrites a sample list). The
rest — assignment, losses, metrics, mask codecs — are plain functions.
"""

from .decoder import (
    DecoderConfig,
    ForwardResult,
    LoopbackDecoder,
    Prediction,
    RoundOutput,
    fuse_feature_map,
    fuse_queries,
    init_decoder_params,
    loopback_forward,
    non_referent_head,
    predict_targets,
)
from .fixtures import (
    FeatureBundle,
    FeatureDims,
    FixtureConfig,
    Sample,
    gen_dataset,
    gen_sample,
    load_annotations,
    pseudo_features,
    save_annotations,
)
from .losses import (
    LossWeights,
    bce_with_logits,
    dice_loss,
    finite_diff_check,
    nonreferent_loss,
    referent_loss,
    round_loss,
    total_loss,
)
from .masks import RleMask, decode_rle, downsample_majority, encode_rle, union_masks
from .matching import MatchResult, brute_force_assign, hungarian, match_cost
from .metrics import MetricsReport, SampleEval, ciou, evaluate, giou, miou, n_acc, pr_at, sample_iou
from .nsc import (
    NonReferentConverter,
    NscConfig,
    SentencePool,
    convert_dataset,
    cosine_tf,
    jaccard,
    passes_filters,
    similarity,
    tokenize,
)
from .rng import Rng, stable_hash

__version__ = "0.1.0"

__all__ = [
    "DecoderConfig",
    "FeatureBundle",
    "FeatureDims",
    "FixtureConfig",
    "ForwardResult",
    "LoopbackDecoder",
    "LossWeights",
    "MatchResult",
    "MetricsReport",
    "NonReferentConverter",
    "NscConfig",
    "Prediction",
    "RleMask",
    "Rng",
    "RoundOutput",
    "Sample",
    "SampleEval",
    "SentencePool",
    "bce_with_logits",
    "brute_force_assign",
    "ciou",
    "convert_dataset",
    "cosine_tf",
    "decode_rle",
    "dice_loss",
    "downsample_majority",
    "encode_rle",
    "evaluate",
    "finite_diff_check",
    "fuse_feature_map",
    "fuse_queries",
    "gen_dataset",
    "gen_sample",
    "giou",
    "hungarian",
    "init_decoder_params",
    "jaccard",
    "load_annotations",
    "loopback_forward",
    "match_cost",
    "miou",
    "n_acc",
    "non_referent_head",
    "nonreferent_loss",
    "passes_filters",
    "pr_at",
    "predict_targets",
    "pseudo_features",
    "referent_loss",
    "round_loss",
    "sample_iou",
    "save_annotations",
    "similarity",
    "stable_hash",
    "tokenize",
    "total_loss",
    "union_masks",
]

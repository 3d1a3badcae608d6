"""Contrastive perturbation-based feature attribution for speech-to-text models."""

from .attribution import (
    ContrastiveExplainer,
    MaskScore,
    ScorerKind,
    aggregate_segment_scores,
    assemble_saliency,
    base_score,
    difference_score,
    explain,
    explain_many,
    relative_score,
)
from .backend import (
    Backend,
    SubprocessBackend,
    SyntheticBackend,
    SyntheticModelSpec,
    SyntheticSuite,
)
from .core import (
    ContrastCase,
    SCORER_BASE,
    SCORER_DIFFERENCE,
    SCORER_KINDS,
    SCORER_RELATIVE,
    SaliencyMap,
    Spectrogram,
    TokenizerInfo,
)
from .evaluation import (
    DeletionConfig,
    DeletionEvaluator,
    EvalCurves,
    delete_fraction,
    deletion_order,
    detect_outcome,
    paired_t_test,
    pearson,
    run_deletion_eval,
)
from .features import load_features, save_features
from .manifest import load_manifest, scan_manifest
from .perturbation import (
    PerturbationMask,
    PerturbationPlan,
    apply_mask,
    encode_mask_cells,
    sample_masks,
)
from .segmentation import (
    SegmentMap,
    SegmentationConfig,
    SlicSegmenter,
    effective_segment_count,
    multi_level_segment,
    slic_segment,
)
from .wordprob import (
    AGG_CHAIN_RULE,
    AGG_LENGTH_NORM,
    AGG_WORD_BOUNDARY,
    AGGREGATION_METHODS,
    WordSpan,
    aggregate_word_probability,
    locate_word_span,
    word_pair_probabilities,
)

__version__ = "0.1.0"

__all__ = [
    "ContrastiveExplainer", "MaskScore", "ScorerKind", "aggregate_segment_scores",
    "assemble_saliency", "base_score", "difference_score", "explain", "explain_many",
    "relative_score",
    "Backend", "SubprocessBackend", "SyntheticBackend", "SyntheticModelSpec",
    "SyntheticSuite",
    "ContrastCase", "SCORER_BASE", "SCORER_DIFFERENCE", "SCORER_KINDS",
    "SCORER_RELATIVE", "SaliencyMap", "Spectrogram", "TokenizerInfo",
    "DeletionConfig", "DeletionEvaluator", "EvalCurves", "delete_fraction",
    "deletion_order", "detect_outcome", "paired_t_test", "pearson",
    "run_deletion_eval",
    "load_features", "save_features", "load_manifest", "scan_manifest",
    "PerturbationMask", "PerturbationPlan", "apply_mask", "encode_mask_cells",
    "sample_masks",
    "SegmentMap", "SegmentationConfig", "SlicSegmenter", "effective_segment_count",
    "multi_level_segment", "slic_segment",
    "AGG_CHAIN_RULE", "AGG_LENGTH_NORM", "AGG_WORD_BOUNDARY", "AGGREGATION_METHODS",
    "WordSpan", "aggregate_word_probability", "locate_word_span",
    "word_pair_probabilities",
]

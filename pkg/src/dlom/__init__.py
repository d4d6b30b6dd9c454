"""Decision-level ordinal modeling for rubric-based scoring."""

from .dataset import (FoldPlan, SyntheticSpec, TraitRecord, generate_synthetic, load_records,
                      make_folds, save_records)
from .estimators import DLOMClassifier, GatedFusionDLOMClassifier, PoolingHeadClassifier
from .fusion import FusionTrace, GateParameters, fuse_backward, fuse_forward
from .metrics import QwkReport, macro_average, qwk
from .objectives import (LossBundle, ObjectiveConfig, combined_loss, cross_entropy,
                         expected_score, smooth_l1, softmax_stable)
from .score_space import (ScoreScale, ScoreTokenSet, decide, extract_score_logits,
                          from_external, to_external)
from ._validation import ValidationError

__all__ = [
    "DLOMClassifier", "GatedFusionDLOMClassifier", "PoolingHeadClassifier",
    "FoldPlan", "SyntheticSpec", "TraitRecord", "generate_synthetic", "load_records",
    "make_folds", "save_records", "FusionTrace", "GateParameters", "fuse_backward",
    "fuse_forward", "QwkReport", "macro_average", "qwk", "LossBundle", "ObjectiveConfig",
    "combined_loss", "cross_entropy", "expected_score", "smooth_l1", "softmax_stable",
    "ScoreScale", "ScoreTokenSet", "decide", "extract_score_logits", "from_external",
    "to_external", "ValidationError",
]

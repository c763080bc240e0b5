from .classifier import (
    ClassifierReport,
    LightSupervisionResult,
    ShallowClassifier,
    eval_classifier,
    evaluate_scores,
    light_supervision_protocol,
    segment_scores,
    train_shallow_classifier,
)
from .qbe import (
    QbEResult,
    SegmentEmbedding,
    TrialSet,
    average_precision,
    build_qbe_trials,
    cosine_distance,
    gap_recovery,
    mean_average_precision,
    qbe_evaluate,
    segment_embedding,
    segment_embeddings,
)

__all__ = [
    "ClassifierReport", "LightSupervisionResult", "QbEResult", "SegmentEmbedding", "ShallowClassifier",
    "TrialSet", "average_precision", "build_qbe_trials", "cosine_distance", "eval_classifier",
    "evaluate_scores", "gap_recovery", "light_supervision_protocol", "mean_average_precision",
    "qbe_evaluate", "segment_embedding", "segment_embeddings", "segment_scores",
    "train_shallow_classifier",
]

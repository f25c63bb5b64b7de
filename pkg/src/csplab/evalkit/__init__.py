"""Adaptation-vs-forgetting evaluation harness."""

from .evaluator import (
    ReferenceEvaluator, EvaluatorAccuracyError, train_reference_evaluator,
    held_out_accuracy,
)
from .metrics import (
    cosine_similarity, rescale_similarity, characteristic_similarity,
    levenshtein, transcript_error_rate, min_max_normalize,
)
from .adaptation import (
    EvalRow, evaluate_adaptation, generate_for_corpus, prompt_map, mean_ter,
    reference_embeddings,
)
from .bench import bench_steps

__all__ = [
    "ReferenceEvaluator", "EvaluatorAccuracyError", "train_reference_evaluator",
    "held_out_accuracy", "cosine_similarity", "rescale_similarity",
    "characteristic_similarity", "levenshtein", "transcript_error_rate",
    "min_max_normalize", "EvalRow", "evaluate_adaptation",
    "generate_for_corpus", "prompt_map", "mean_ter", "reference_embeddings",
    "bench_steps",
]

"""Stage-2 layer selection and the fine-tuning strategy zoo."""

from .strategy import (
    MeanWeights, FineTunePlan, LoraMatch, mean_weights, select_layers,
    expand_selection, match_lora_rank, lora_added_params, resolve_plan,
    PARTIAL_POLICIES, RANK_VARIANTS,
)
from .finetune import run_finetune, frozen_param_names

__all__ = [
    "MeanWeights", "FineTunePlan", "LoraMatch", "mean_weights",
    "select_layers", "expand_selection", "match_lora_rank",
    "lora_added_params", "resolve_plan", "run_finetune",
    "frozen_param_names", "PARTIAL_POLICIES", "RANK_VARIANTS",
]

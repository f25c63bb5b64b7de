"""Toy decoder-only codec language model with capture, freezing, and LoRA."""

from .model import (
    ModelConfig, TokenSequence, CodecLM, paper_shaped_config,
    forward_with_layer_capture, lm_loss, count_params, set_trainable,
    inject_lora,
)
from .generate import generate, generate_batch, stacked_weights

__all__ = [
    "ModelConfig", "TokenSequence", "CodecLM", "paper_shaped_config",
    "forward_with_layer_capture", "lm_loss", "count_params", "set_trainable",
    "inject_lora", "generate", "generate_batch", "stacked_weights",
]

"""Stage-1 characteristic-specific analysis (weighted-sum layer probing)."""

from .probe import (
    LayerWeights, ProbeHead, ProbeHeadConfig, ProbeResult, asp_pool,
    weighted_sum, mix_layers, layernormed_stack, train_probe,
    extract_layer_weights, save_layer_weights, load_layer_weights,
    embed_utterance, ASP_EPS,
)

__all__ = [
    "LayerWeights", "ProbeHead", "ProbeHeadConfig", "ProbeResult", "asp_pool",
    "weighted_sum", "mix_layers", "layernormed_stack", "train_probe",
    "extract_layer_weights", "save_layer_weights", "load_layer_weights",
    "embed_utterance", "ASP_EPS",
]

"""Experiment configuration: one strict JSON document, hashed everywhere.

Unknown keys are rejected; dotted-path --set overrides edit the parsed
document before validation. The config hash is embedded in every artifact
and checked across pipeline stages.
"""

import hashlib
import json
from dataclasses import dataclass, field, fields, asdict


class ConfigError(Exception):
    pass


def _build(cls, doc, path):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)} under '{path}'")
    kwargs = {}
    for f in fields(cls):
        if f.name in doc:
            val = doc[f.name]
            sub = _SECTIONS.get((cls, f.name))
            kwargs[f.name] = _build(sub, val, f"{path}.{f.name}") if sub else val
    return cls(**kwargs)


@dataclass
class DomainSection:
    v_t: int = 32
    v_s: int = 64
    segment_len: int = 5
    content_scale: float = 3.0
    tau_lo: float = 0.5
    tau_hi: float = 0.9
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5


@dataclass
class LayoutSection:
    source_speakers: int = 32
    source_emotions: int = 4
    target_speakers: int = 4
    target_emotions: int = 2
    n_source: int = 20000
    source_heldout_ratio: float = 0.1
    target_train: int = 500
    target_test: int = 100
    text_len_min: int = 3
    text_len_max: int = 8
    target_text_vocab: int = 8


@dataclass
class ModelSection:
    n_layers: int = 8
    model_dim: int = 64
    inner_dim: int = 256
    n_heads: int = 4
    max_seq_len: int = 256


@dataclass
class PretrainSection:
    epochs: int = 3
    batch_size: int = 32
    peak_lr: float = 1e-3
    single_epochs: int = 0      # alignment curriculum before prompt pairs
    checkpoint_every: int = 1   # epochs between resume checkpoints


@dataclass
class ProbeSection:
    utterances: int = 2000
    epochs: int = 6
    batch_size: int = 16
    peak_lr: float = 5e-4
    channels: int = 64
    attn_dim: int = 64


@dataclass
class EvaluatorSection:
    source_utterances: int = 4000
    epochs: int = 8
    batch_size: int = 16
    peak_lr: float = 1e-3
    emb_dim: int = 64
    channels: int = 64
    attn_dim: int = 64
    accuracy_floor: float = 0.90


@dataclass
class FinetuneSection:
    epochs: int = 10
    batch_size: int = 16
    lr_peak_fraction: float = 0.05
    pair_prompts: bool = False   # singles adapt (s, e) at half the cost


@dataclass
class EvalSection:
    decode: str = "sample"
    temperature: float = 1.0
    every_epochs: int = 1
    source_ter_utterances: int = 100


@dataclass
class BenchSection:
    n_steps: int = 100
    warmup: int = 10
    batch_size: int = 16
    plans: list = field(default_factory=lambda: ["full", "lora_2layer", "csp"])


@dataclass
class TransferSection:
    enabled: bool = True
    strategies: list = field(default_factory=lambda: ["full", "lora_2layer", "csp"])


DEFAULT_STRATEGIES = [
    "origin", "full", "lora_1layer", "lora_2layer", "lora_3layer",
    "first_half", "second_half", "shallowest_two", "deepest_two",
    "lowest_two", "highest_two", "csp",
]


@dataclass
class ExperimentConfig:
    seed: int = 17
    out_dir: str = "runs/ref"
    float_mode: str = "float64"
    domain: DomainSection = field(default_factory=DomainSection)
    layout: LayoutSection = field(default_factory=LayoutSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    evaluator: EvaluatorSection = field(default_factory=EvaluatorSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)
    bench: BenchSection = field(default_factory=BenchSection)
    transfer: TransferSection = field(default_factory=TransferSection)
    strategies: list = field(default_factory=lambda: list(DEFAULT_STRATEGIES))
    seeds: list = field(default_factory=lambda: [101, 102, 103])
    keep_checkpoints: bool = False

    def to_dict(self):
        return asdict(self)

    def canonical_json(self):
        doc = self.to_dict()
        doc.pop("out_dir")   # the hash identifies the experiment, not its path
        return json.dumps(doc, sort_keys=True)

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=1)


_SECTIONS = {
    (ExperimentConfig, "domain"): DomainSection,
    (ExperimentConfig, "layout"): LayoutSection,
    (ExperimentConfig, "model"): ModelSection,
    (ExperimentConfig, "pretrain"): PretrainSection,
    (ExperimentConfig, "probe"): ProbeSection,
    (ExperimentConfig, "evaluator"): EvaluatorSection,
    (ExperimentConfig, "finetune"): FinetuneSection,
    (ExperimentConfig, "eval"): EvalSection,
    (ExperimentConfig, "bench"): BenchSection,
    (ExperimentConfig, "transfer"): TransferSection,
}


def config_from_dict(doc):
    cfg = _build(ExperimentConfig, doc, "config")
    if cfg.float_mode not in ("float64", "float32"):
        raise ConfigError(f"float_mode must be float64 or float32, got {cfg.float_mode!r}")
    if cfg.eval.decode not in ("sample", "greedy"):
        raise ConfigError(f"eval.decode must be sample or greedy, got {cfg.eval.decode!r}")
    return cfg


def load_config(path, overrides=()):
    with open(path) as f:
        doc = json.load(f)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-object")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node[parts[-1]] = val
    return config_from_dict(doc)

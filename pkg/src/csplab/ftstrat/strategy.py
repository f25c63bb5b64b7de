"""Layer selection from mean characteristic weights and the strategy zoo."""

import json
from dataclasses import dataclass, field

import numpy as np

from csplab.codeclm import count_params

PARTIAL_POLICIES = ("csp", "lowest_two", "highest_two", "shallowest_two",
                    "deepest_two", "first_half", "second_half")
RANK_VARIANTS = ("smallest", "2nd_smallest", "3rd_smallest",
                 "largest", "2nd_largest", "3rd_largest")


@dataclass
class MeanWeights:
    w_m: np.ndarray

    def __post_init__(self):
        self.w_m = np.asarray(self.w_m, dtype=np.float64)


def mean_weights(w_e, w_s):
    """Elementwise mean of the two characteristic weight vectors."""
    w_e = np.asarray(w_e, dtype=np.float64)
    w_s = np.asarray(w_s, dtype=np.float64)
    if w_e.shape != w_s.shape:
        raise ValueError(f"length mismatch: {w_e.shape} vs {w_s.shape}")
    return MeanWeights((w_e + w_s) / 2.0)


def _as_weights(w):
    return w.w_m if isinstance(w, MeanWeights) else np.asarray(w, dtype=np.float64)


def _k_smallest(w, k):
    return np.argsort(w, kind="stable")[:k]          # ties -> lowest index


def _k_largest(w, k):
    return np.argsort(-w, kind="stable")[:k]


def select_layers(w_m, policy="csp"):
    """Resolve a policy name to a sorted set of 0-based layer indices.

    csp picks {argmin, argmax} of the mean weights; rank variants swap one
    endpoint for the 2nd/3rd smallest or largest pick while holding the
    other endpoint at the csp choice.
    """
    w = _as_weights(w_m)
    n = w.shape[0]
    if policy in ("csp", *RANK_VARIANTS) and n < 2:
        raise ValueError("csp selection needs at least 2 layers")
    lo = int(_k_smallest(w, 1)[0])
    hi = int(_k_largest(w, 1)[0])
    if policy in ("csp", "smallest", "largest"):
        picked = {lo, hi}
    elif policy in ("2nd_smallest", "3rd_smallest"):
        rank = 1 if policy.startswith("2nd") else 2
        if n <= rank:
            raise ValueError(f"{policy} needs more than {rank} layers")
        picked = {int(_k_smallest(w, rank + 1)[rank]), hi}
    elif policy in ("2nd_largest", "3rd_largest"):
        rank = 1 if policy.startswith("2nd") else 2
        if n <= rank:
            raise ValueError(f"{policy} needs more than {rank} layers")
        picked = {lo, int(_k_largest(w, rank + 1)[rank])}
    elif policy == "lowest_two":
        picked = set(_k_smallest(w, 2).tolist())
    elif policy == "highest_two":
        picked = set(_k_largest(w, 2).tolist())
    elif policy == "shallowest_two":
        picked = {0, 1} if n >= 2 else {0}
    elif policy == "deepest_two":
        picked = {n - 2, n - 1} if n >= 2 else {0}
    elif policy == "first_half":
        picked = set(range(n // 2))
    elif policy == "second_half":
        picked = set(range(n // 2, n))
    elif policy == "full":
        picked = set(range(n))
    else:
        raise ValueError(f"unknown selection policy {policy!r}")
    return sorted(int(i) for i in picked)


def expand_selection(w_m, k):
    """Ours+k/6: the (1 + floor(k*N/12)) lowest and highest weighted layers.

    k=0 reduces to the csp pair; k=6 covers the whole stack; overlapping
    picks deduplicate.
    """
    w = _as_weights(w_m)
    n = w.shape[0]
    if not 0 <= k <= 6:
        raise ValueError(f"k must lie in [0, 6], got {k}")
    m = 1 + (k * n) // 12
    picked = set(_k_smallest(w, min(m, n)).tolist())
    picked |= set(_k_largest(w, min(m, n)).tolist())
    return sorted(int(i) for i in picked)


@dataclass
class LoraMatch:
    rank: int
    achieved: int
    budget: int
    rel_gap: float
    clamped: bool = False   # set when even rank 1 exceeds the budget


def lora_added_params(config, rank):
    """Adapters on q,k,v,o of every layer: N * 4 * r * (d_in + d_out)."""
    return config.n_layers * 4 * rank * (2 * config.model_dim)


def match_lora_rank(config, budget_params):
    """Largest rank whose added parameter count fits within the budget."""
    if budget_params <= 0:
        raise ValueError("budget must be positive")
    per_rank = config.n_layers * 4 * (2 * config.model_dim)
    rank = int(budget_params // per_rank)
    clamped = False
    if rank < 1:
        rank = 1
        clamped = True
    if rank > config.model_dim:
        rank = config.model_dim
    achieved = lora_added_params(config, rank)
    rel_gap = abs(budget_params - achieved) / budget_params
    return LoraMatch(rank=rank, achieved=achieved, budget=int(budget_params),
                     rel_gap=rel_gap, clamped=clamped)


@dataclass
class FineTunePlan:
    """A strategy resolved to concrete trainable parameter groups."""
    name: str
    kind: str                    # none | full | layers | lora
    layers: list = field(default_factory=list)   # 0-based internally
    lora_rank: int | None = None
    trainable: int = 0
    total: int = 0
    epochs: int = 10
    lr_peak_fraction: float = 0.05   # of the pretraining peak
    weights_file: str | None = None

    @property
    def layers_1based(self):
        return [i + 1 for i in self.layers]

    def to_dict(self, config_hash=""):
        return {
            "policy": self.name,
            "layers_1based": self.layers_1based,
            "lora_rank": self.lora_rank,
            "trainable": self.trainable,
            "total": self.total,
            "weights_file": self.weights_file,
            "config_hash": config_hash,
        }

    def save(self, path, config_hash=""):
        with open(path, "w") as f:
            json.dump(self.to_dict(config_hash), f, sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, doc, name=None, epochs=10, lr_peak_fraction=0.05):
        layers = [i - 1 for i in doc["layers_1based"]]
        rank = doc.get("lora_rank")
        if rank:
            kind = "lora"
        elif doc["policy"] == "full":
            kind = "full"
        elif doc["policy"] == "origin":
            kind = "none"
        else:
            kind = "layers"
        return cls(name=name or doc["policy"], kind=kind, layers=layers,
                   lora_rank=rank, trainable=doc["trainable"],
                   total=doc["total"], epochs=epochs,
                   lr_peak_fraction=lr_peak_fraction,
                   weights_file=doc.get("weights_file"))


def resolve_plan(model, policy, w_m=None, weights_file=None,
                 epochs=10, lr_peak_fraction=0.05):
    """Turn a policy name into a FineTunePlan with exact parameter counts.

    lora budgets are written "lora_<n>layer" and matched against the
    parameter count of n transformer layers.
    """
    cfg = model.config
    if policy == "origin":
        plan = FineTunePlan(name=policy, kind="none")
    elif policy == "full":
        plan = FineTunePlan(name=policy, kind="full")
    elif policy.startswith("lora_"):
        n_layers_budget = int(policy.split("_")[1].rstrip("layer"))
        per_layer = count_params(model, "transformer") // cfg.n_layers
        match = match_lora_rank(cfg, n_layers_budget * per_layer)
        plan = FineTunePlan(name=policy, kind="lora", lora_rank=match.rank)
    elif policy.startswith("csp_plus_"):
        k = int(policy.rsplit("_", 1)[1])
        plan = FineTunePlan(name=policy, kind="layers",
                            layers=expand_selection(w_m, k))
    elif policy.startswith("manual:"):
        layers = sorted(int(x) for x in policy.split(":", 1)[1].split(","))
        plan = FineTunePlan(name=policy, kind="layers", layers=layers)
    else:
        plan = FineTunePlan(name=policy, kind="layers",
                            layers=select_layers(w_m, policy))
    plan.epochs = epochs
    plan.lr_peak_fraction = lr_peak_fraction
    plan.weights_file = weights_file
    plan.trainable = count_params(model, "plan", plan)
    plan.total = count_params(model, "all") + (
        lora_added_params(cfg, plan.lora_rank) if plan.kind == "lora" else 0)
    return plan

"""Decoder-only codec language model over text + BOS + speech tokens.

Pre-norm transformer blocks with residual connections; per-layer residual
stream capture; loss over speech positions only. Parameters live in named
ParamGroups so freezing plans and checkpoints address them by path.
"""

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

from csplab.gradcore import (
    Tensor, ParamGroup,
    add, attention_block, ffn_block, causal_mask, concat, embedding,
    layernorm, linear, slice_time, reshape, cross_entropy_rows,
)


@dataclass
class ModelConfig:
    n_layers: int = 8
    model_dim: int = 64
    inner_dim: int = 256
    n_heads: int = 4
    text_vocab: int = 32
    speech_vocab: int = 64
    max_seq_len: int = 256
    ln_eps: float = 1e-5
    dtype: str = "float64"   # float64 for tests/oracles, float32 for speed

    def __post_init__(self):
        if self.model_dim % self.n_heads:
            raise ValueError("model_dim must be divisible by n_heads")
        if self.text_vocab < 2 or self.speech_vocab < 2:
            raise ValueError("vocab sizes must be at least 2")

    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        doc = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass
class TokenSequence:
    text: list
    speech: list


def paper_shaped_config():
    """The 24x512 configuration used only for parameter accounting."""
    return ModelConfig(n_layers=24, model_dim=512, inner_dim=2048, n_heads=16)


class CodecLM:
    def __init__(self, config, seed=0):
        self.config = config
        self.params = {}
        self.adapters = {}   # target path -> (a_group, b_group, scale)
        self._init_params(seed)

    # ------------------------------------------------------------- build

    def _add(self, name, shape, std, rng, dtype):
        data = rng.normal(0.0, std, size=shape).astype(dtype) if std > 0 \
            else np.zeros(shape, dtype=dtype)
        self.params[name] = ParamGroup(name, Tensor(data, requires_grad=True))

    def _init_params(self, seed):
        cfg = self.config
        d, inner = cfg.model_dim, cfg.inner_dim
        dt = cfg.np_dtype()
        counter = [0]

        def rng():
            counter[0] += 1
            return np.random.default_rng(np.random.SeedSequence([seed, 11, counter[0]]))

        w_std = 1.0 / np.sqrt(d)
        out_std = w_std / np.sqrt(2.0 * cfg.n_layers)
        self._add("embed.text.w", (cfg.text_vocab, d), 0.1, rng(), dt)
        self._add("embed.speech.w", (cfg.speech_vocab, d), 0.1, rng(), dt)
        self._add("embed.bos.w", (1, d), 0.1, rng(), dt)
        self._add("embed.pos.w", (cfg.max_seq_len, d), 0.1, rng(), dt)
        for i in range(cfg.n_layers):
            pre = f"transformer.layer.{i}"
            ones = np.ones(d, dtype=dt)
            self.params[f"{pre}.ln1.g"] = ParamGroup(f"{pre}.ln1.g", Tensor(ones.copy(), True))
            self._add(f"{pre}.ln1.b", (d,), 0.0, rng(), dt)
            for nm in ("wq", "wk", "wv"):
                self._add(f"{pre}.attn.{nm}", (d, d), w_std, rng(), dt)
                self._add(f"{pre}.attn.b{nm[-1]}", (d,), 0.0, rng(), dt)
            self._add(f"{pre}.attn.wo", (d, d), out_std, rng(), dt)
            self._add(f"{pre}.attn.bo", (d,), 0.0, rng(), dt)
            self.params[f"{pre}.ln2.g"] = ParamGroup(f"{pre}.ln2.g", Tensor(ones.copy(), True))
            self._add(f"{pre}.ln2.b", (d,), 0.0, rng(), dt)
            self._add(f"{pre}.ffn.w1", (d, inner), w_std, rng(), dt)
            self._add(f"{pre}.ffn.b1", (inner,), 0.0, rng(), dt)
            self._add(f"{pre}.ffn.w2", (inner, d), 1.0 / np.sqrt(inner) / np.sqrt(2.0 * cfg.n_layers), rng(), dt)
            self._add(f"{pre}.ffn.b2", (d,), 0.0, rng(), dt)
        self.params["final_ln.g"] = ParamGroup("final_ln.g", Tensor(np.ones(d, dtype=dt), True))
        self._add("final_ln.b", (d,), 0.0, rng(), dt)
        # zero head: untrained logits are exactly uniform (loss = ln V_s)
        self._add("lm_head.w", (d, cfg.speech_vocab), 0.0, rng(), dt)
        self._add("lm_head.b", (cfg.speech_vocab,), 0.0, rng(), dt)

    # -------------------------------------------------------- accessors

    def t(self, name):
        return self.params[name].tensor

    def all_groups(self):
        groups = list(self.params.values())
        for a, b, _ in self.adapters.values():
            groups.extend([a, b])
        return groups

    def layer_param_names(self, i):
        return [n for n in self.params if n.startswith(f"transformer.layer.{i}.")]

    def param_hash(self, names=None):
        """SHA-256 over the raw bytes of the selected parameter tensors."""
        h = hashlib.sha256()
        for n in sorted(names if names is not None else self.params):
            h.update(n.encode())
            h.update(np.ascontiguousarray(self.params[n].tensor.data).tobytes())
        return h.hexdigest()

    def state_items(self):
        for n, g in self.params.items():
            yield n, g.tensor.data
        for tgt in sorted(self.adapters):
            a, b, _ = self.adapters[tgt]
            yield a.name, a.tensor.data
            yield b.name, b.tensor.data

    # ---------------------------------------------------------- forward

    def _layer_params(self, i, which):
        pre = f"transformer.layer.{i}"
        if which == "attn":
            p = {"ln_g": self.t(f"{pre}.ln1.g"), "ln_b": self.t(f"{pre}.ln1.b")}
            for nm, b in (("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")):
                path = f"{pre}.attn.{nm}"
                p[nm] = self.t(path)
                p[b] = self.t(f"{pre}.attn.{b}")
                if path in self.adapters:
                    a_g, b_g, s = self.adapters[path]
                    p[f"lora_{nm[-1]}"] = (a_g.tensor, b_g.tensor, s)
            return p
        return {"ln_g": self.t(f"{pre}.ln2.g"), "ln_b": self.t(f"{pre}.ln2.b"),
                "w1": self.t(f"{pre}.ffn.w1"), "b1": self.t(f"{pre}.ffn.b1"),
                "w2": self.t(f"{pre}.ffn.w2"), "b2": self.t(f"{pre}.ffn.b2")}

    def _trunk(self, text_ids, speech_ids, capture=False):
        """Embed text+BOS+speech and run the block stack (no head)."""
        cfg = self.config
        text_ids = np.asarray(text_ids, dtype=np.int64)
        speech_ids = np.asarray(speech_ids, dtype=np.int64)
        bsz, t_s = text_ids.shape
        t_a = speech_ids.shape[1]
        total = t_s + 1 + t_a
        if total > cfg.max_seq_len:
            raise ValueError(f"sequence length {total} exceeds max_seq_len {cfg.max_seq_len}")
        parts = [embedding(self.t("embed.text.w"), text_ids),
                 embedding(self.t("embed.bos.w"), np.zeros((bsz, 1), dtype=np.int64))]
        if t_a:
            parts.append(embedding(self.t("embed.speech.w"), speech_ids))
        x = concat(parts, axis=-2)
        pos = embedding(self.t("embed.pos.w"), np.arange(total))
        x = add(x, pos)
        caps = [] if capture else None
        for i in range(cfg.n_layers):
            x = attention_block(x, self._layer_params(i, "attn"), None,
                                cfg.n_heads, cfg.ln_eps)
            x = ffn_block(x, self._layer_params(i, "ffn"), cfg.ln_eps)
            if capture:
                caps.append(np.array(x.data))
        return caps, x

    def _head(self, x):
        h = layernorm(x, self.config.ln_eps, self.t("final_ln.g"), self.t("final_ln.b"))
        return linear(h, self.t("lm_head.w"), self.t("lm_head.b"))

    def forward_batch(self, text_ids, speech_ids, capture=False):
        """Forward a same-shape batch; returns (captures | None, logits Tensor).

        text_ids (B, T_S), speech_ids (B, T_A possibly 0 columns). Sequence is
        text + BOS + speech; captures are the residual-stream outputs of each
        block, detached (B, T, D) arrays.
        """
        caps, x = self._trunk(text_ids, speech_ids, capture)
        return caps, self._head(x)

    def lm_loss_batch(self, text_ids, speech_ids):
        """Mean next-speech-token cross entropy over all speech positions.

        The head runs only on the rows that predict speech tokens (positions
        T_S .. T_S+T_A-1), which also masks text positions out of the loss.
        """
        t_s = np.asarray(text_ids).shape[1]
        t_a = np.asarray(speech_ids).shape[1]
        if t_a < 1:
            raise ValueError("lm loss needs at least one speech token")
        _, x = self._trunk(text_ids, speech_ids)
        pred = self._head(slice_time(x, t_s, t_s + t_a))
        flat = reshape(pred, (-1, self.config.speech_vocab))
        targets = np.asarray(speech_ids, dtype=np.int64).reshape(-1)
        return cross_entropy_rows(flat, targets)


# ------------------------------------------------------------- spec surface

def forward_with_layer_capture(model, seq):
    """LayerOutputs (N arrays of (T_S+1+T_A, D)) plus logits for one sequence."""
    text = np.asarray(seq.text, dtype=np.int64)[None, :]
    speech = np.asarray(seq.speech, dtype=np.int64).reshape(1, -1)
    caps, logits = model.forward_batch(text, speech, capture=True)
    return [c[0] for c in caps], logits.data[0]


def lm_loss(model, seq):
    text = np.asarray(seq.text, dtype=np.int64)[None, :]
    speech = np.asarray(seq.speech, dtype=np.int64).reshape(1, -1)
    return float(model.lm_loss_batch(text, speech).data)


def count_params(model, scope="all", plan=None):
    """Exact element counts: scope in {all, transformer, plan, trainable}."""
    if scope == "all":
        return sum(g.size for g in model.all_groups())
    if scope == "transformer":
        return sum(g.size for n, g in model.params.items()
                   if n.startswith("transformer.layer."))
    if scope == "trainable":
        return sum(g.size for g in model.all_groups() if g.trainable)
    if scope == "plan":
        if plan is None:
            raise ValueError("plan scope needs a plan")
        return _plan_param_count(model, plan)
    raise ValueError(f"unknown scope {scope!r}")


def _plan_param_count(model, plan):
    kind = plan.kind
    if kind == "none":
        return 0
    if kind == "full":
        return sum(g.size for g in model.all_groups())
    if kind == "layers":
        return sum(model.params[n].size for i in plan.layers
                   for n in model.layer_param_names(i))
    if kind == "lora":
        cfg = model.config
        return cfg.n_layers * 4 * plan.lora_rank * (2 * cfg.model_dim)
    raise ValueError(f"unknown plan kind {kind!r}")


def set_trainable(model, plan):
    """Mark exactly the plan's parameter groups trainable; freeze the rest.

    Partial plans freeze embeddings, LM head and the final layernorm; full
    fine-tuning trains everything. LoRA plans train only adapter groups
    (inject_lora must have run first).
    """
    kind = plan.kind
    if kind == "layers":
        for i in plan.layers:
            if not 0 <= i < model.config.n_layers:
                raise IndexError(f"layer index {i} out of range")
    allowed = set()
    if kind == "full":
        allowed = {n for n in model.params}
    elif kind == "layers":
        for i in plan.layers:
            allowed.update(model.layer_param_names(i))
    elif kind == "lora":
        if not model.adapters:
            raise ValueError("lora plan without injected adapters")
    elif kind != "none":
        raise ValueError(f"unknown plan kind {kind!r}")
    for n, g in model.params.items():
        g.trainable = n in allowed
        g.tensor.requires_grad = g.trainable
        g.reset_slots()
    lora_on = kind in ("full", "lora")
    for a, b, _ in model.adapters.values():
        for g in (a, b):
            g.trainable = lora_on
            g.tensor.requires_grad = lora_on
            g.reset_slots()


def inject_lora(model, rank, targets=("wq", "wk", "wv", "wo"), scale=1.0, seed=0):
    """Attach low-rank adapters to attention projections of every layer.

    a is small random, b is zeros, so injection leaves the forward outputs
    bit-identical until training moves b. Base weights are frozen.
    """
    d = model.config.model_dim
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if rank > d:
        raise ValueError(f"rank {rank} exceeds min(d_in, d_out) = {d}")
    dt = model.config.np_dtype()
    groups = []
    counter = 0
    for i in range(model.config.n_layers):
        for nm in targets:
            path = f"transformer.layer.{i}.attn.{nm}"
            if path not in model.params:
                raise KeyError(f"unknown lora target {path}")
            counter += 1
            rng = np.random.default_rng(np.random.SeedSequence([seed, 13, counter]))
            a = ParamGroup(f"lora.{path}.a",
                           Tensor(rng.normal(0.0, 0.01, size=(d, rank)).astype(dt), True))
            b = ParamGroup(f"lora.{path}.b",
                           Tensor(np.zeros((rank, d), dtype=dt), True))
            model.adapters[path] = (a, b, float(scale))
            groups.extend([a, b])
    return groups

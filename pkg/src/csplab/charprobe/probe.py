"""Characteristic-specific probing: softmax layer weights over layernormed
layer outputs, conv + attentive-stat-pooling heads, multi-task training.

The backbone never enters the graph: probes consume detached capture stacks,
so backbone gradients are not merely zero but never computed.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from csplab import kernels
from csplab.gradcore import (
    Tensor, Tape, ParamGroup, AdamOptimizer, LrSchedule,
    add, avg_pool1d, clamp_min, concat, conv1d, cross_entropy_rows, linear,
    matmul, mul, relu, reshape, softmax, sqrt, sub, tanh,
)

ASP_EPS = 1e-6


@dataclass
class LayerWeights:
    task: str
    raw: np.ndarray

    def normalized(self):
        e = np.exp(self.raw - self.raw.max())
        return e / e.sum()


@dataclass
class ProbeHeadConfig:
    in_dim: int
    n_classes: int
    channels: int = 256
    kernel_width: int = 5
    pool_kernel: int = 5
    attn_dim: int = 64


class ProbeHead:
    """Three same-padded convs with ReLU, avg-pool, ASP, linear classifier."""

    def __init__(self, cfg, seed, dtype=np.float64):
        self.cfg = cfg
        self.params = {}
        c, w, a = cfg.channels, cfg.kernel_width, cfg.attn_dim
        shapes = [
            ("conv1.w", (w, cfg.in_dim, c)), ("conv1.b", (c,)),
            ("conv2.w", (w, c, c)), ("conv2.b", (c,)),
            ("conv3.w", (w, c, c)), ("conv3.b", (c,)),
            ("asp.w", (c, a)), ("asp.b", (a,)), ("asp.v", (a, 1)),
            ("cls.w", (2 * c, cfg.n_classes)), ("cls.b", (cfg.n_classes,)),
        ]
        for idx, (name, shape) in enumerate(shapes):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 21, idx]))
            if name.endswith(".b") or name == "asp.v":
                data = np.zeros(shape, dtype=dtype)
                if name == "asp.v":
                    data = rng.normal(0.0, 0.2, size=shape).astype(dtype)
            else:
                fan_in = shape[0] * (shape[1] if len(shape) > 2 else 1)
                data = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(dtype)
            self.params[name] = ParamGroup(name, Tensor(data, requires_grad=True))

    def groups(self):
        return list(self.params.values())

    def t(self, name):
        return self.params[name].tensor

    def embed(self, frames):
        """(B, T, in_dim) -> ASP output (B, 2C), the penultimate embedding.

        A single (T, in_dim) utterance is accepted and returns (2C,)."""
        squeeze = frames.data.ndim == 2
        x = reshape(frames, (1,) + frames.data.shape) if squeeze else frames
        for i in (1, 2, 3):
            x = relu(conv1d(x, self.t(f"conv{i}.w"), self.t(f"conv{i}.b"),
                            stride=1, padding="same"))
        x = avg_pool1d(x, self.cfg.pool_kernel)
        out = asp_pool(x, {"w": self.t("asp.w"), "b": self.t("asp.b"),
                           "v": self.t("asp.v")})
        return reshape(out, (out.data.shape[-1],)) if squeeze else out

    def logits(self, frames):
        return linear(self.embed(frames), self.t("cls.w"), self.t("cls.b"))

    def state_items(self):
        for n, g in self.params.items():
            yield n, g.tensor.data

    def load_state(self, items):
        for n, arr in items:
            self.params[n].tensor.data = np.array(arr, dtype=self.params[n].tensor.data.dtype)


def asp_pool(frames, attn_params):
    """Attentive statistics pooling: [mu; sigma] under learned frame weights.

    alpha_t = softmax_t(v . tanh(W h_t + b)); sigma uses the eps-floored
    variance so identical frames give sqrt(eps), not NaN.
    """
    squeeze = frames.data.ndim == 2
    h = reshape(frames, (1,) + frames.data.shape) if squeeze else frames
    bsz, t, c = h.data.shape
    scores = matmul(tanh(add(matmul(h, attn_params["w"]), attn_params["b"])),
                    attn_params["v"])                      # (B, T, 1)
    alpha = softmax(reshape(scores, (bsz, t)))             # over frames
    alpha = reshape(alpha, (bsz, 1, t))
    mu = matmul(alpha, h)                                  # (B, 1, C)
    m2 = matmul(alpha, mul(h, h))
    var = clamp_min(sub(m2, mul(mu, mu)), ASP_EPS)
    out = reshape(concat([mu, sqrt(var)], axis=-1), (bsz, 2 * c))
    return reshape(out, (2 * c,)) if squeeze else out


def layernormed_stack(captures, eps=1e-5):
    """Parameter-free per-frame layernorm of an (N, T, D) capture stack."""
    n, t, d = captures.shape
    rows = np.ascontiguousarray(captures.reshape(-1, d))
    ones = np.ones(d, dtype=captures.dtype)
    zeros = np.zeros(d, dtype=captures.dtype)
    y, _, _ = kernels.ln_fwd(rows, ones, zeros, eps)
    return y.reshape(n, t, d)


def weighted_sum(outputs, weights):
    """Z = sum_i softmax(omega)_i * layernorm(O_i).

    outputs: (N, T, D) stack (already captured); weights: LayerWeights or a
    raw-logit Tensor. Returns a plain (T, D) array when called outside
    training (the spec-facing form).
    """
    stack = np.asarray(outputs)
    raw = weights.raw if isinstance(weights, LayerWeights) else weights
    n = stack.shape[0]
    if (raw.shape[0] if hasattr(raw, "shape") else len(raw)) != n:
        raise ValueError("weight length does not match layer count")
    ln = layernormed_stack(stack)
    if isinstance(raw, Tensor):
        return mix_layers(raw, ln)
    e = np.exp(raw - raw.max())
    w = e / e.sum()
    return np.tensordot(w, ln, axes=1)


def mix_layers(omega, ln_stack_batch):
    """Differentiable weighted sum for a batch: (N, B, T, D) const stack."""
    n = ln_stack_batch.shape[0]
    w = softmax(reshape(omega, (1, n)))
    flat = matmul(w, Tensor(ln_stack_batch.reshape(n, -1)))
    return reshape(flat, ln_stack_batch.shape[1:])


@dataclass
class ProbeResult:
    w_emotion: LayerWeights
    w_speaker: LayerWeights
    speaker_accuracy: float
    emotion_accuracy: float
    speaker_head: ProbeHead
    emotion_head: ProbeHead
    probe_seed: int
    loss_curve: list = field(default_factory=list)


def train_probe(dataset, n_layers, speaker_classes, emotion_classes,
                seed=0, epochs=6, batch_size=16, peak_lr=5e-4,
                channels=256, attn_dim=64, dtype=np.float64,
                adam_eps=1e-8, pre_layernormed=False, log=None):
    """Multi-task probe training over detached capture stacks.

    dataset: list of (captures (N, T, D), speaker_class, emotion_class);
    speaker/emotion classes are contiguous 0-based indices. Loss is
    CE_speaker + CE_emotion with unit weights; only the two omega vectors
    and the two heads receive gradients. Set pre_layernormed when the caller
    already applied layernormed_stack (saves a second copy of the cache).
    """
    if not dataset:
        raise ValueError("empty probe dataset")
    d = dataset[0][0].shape[-1]
    omega_e = ParamGroup("omega.emotion", Tensor(np.zeros(n_layers, dtype=dtype), True))
    omega_s = ParamGroup("omega.speaker", Tensor(np.zeros(n_layers, dtype=dtype), True))
    head_cfg = dict(channels=channels, attn_dim=attn_dim)
    sp_head = ProbeHead(ProbeHeadConfig(d, speaker_classes, **head_cfg), seed + 1, dtype)
    em_head = ProbeHead(ProbeHeadConfig(d, emotion_classes, **head_cfg), seed + 2, dtype)
    groups = [omega_e, omega_s] + sp_head.groups() + em_head.groups()

    # layernormed stacks are constants; the backbone stays out of the graph
    if pre_layernormed:
        ln_data = [(np.asarray(c, dtype=dtype), ys, ye) for c, ys, ye in dataset]
    else:
        ln_data = [(layernormed_stack(np.asarray(c, dtype=dtype)), ys, ye)
                   for c, ys, ye in dataset]
    buckets = {}
    for idx, (ln, _, _) in enumerate(ln_data):
        buckets.setdefault(ln.shape[1], []).append(idx)

    steps_per_epoch = sum(int(np.ceil(len(v) / batch_size)) for v in buckets.values())
    schedule = LrSchedule(peak_lr, max(steps_per_epoch * epochs, 2))
    opt = AdamOptimizer(groups, schedule, eps=adam_eps)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    losses = []
    for epoch in range(epochs):
        batches = []
        for t in sorted(buckets):
            idxs = np.array(buckets[t])
            rng.shuffle(idxs)
            batches.extend(idxs[i:i + batch_size] for i in range(0, len(idxs), batch_size))
        order = rng.permutation(len(batches))
        ep_loss = 0.0
        for bi in order:
            batch = batches[bi]
            stack = np.stack([ln_data[i][0] for i in batch], axis=1)  # (N,B,T,D)
            ys = np.array([ln_data[i][1] for i in batch])
            ye = np.array([ln_data[i][2] for i in batch])
            with Tape() as tape:
                z_s = mix_layers(omega_s.tensor, stack)
                z_e = mix_layers(omega_e.tensor, stack)
                loss = add(cross_entropy_rows(sp_head.logits(z_s), ys),
                           cross_entropy_rows(em_head.logits(z_e), ye))
                tape.backward(loss)
            opt.step()
            ep_loss += float(loss.data)
        losses.append(ep_loss / max(len(batches), 1))
        if log:
            log(f"probe epoch {epoch + 1}/{epochs} loss {losses[-1]:.4f}")

    # final train accuracies (inference pass, no tape)
    correct_s = correct_e = 0
    for t in sorted(buckets):
        idxs = buckets[t]
        for i0 in range(0, len(idxs), batch_size):
            batch = idxs[i0:i0 + batch_size]
            stack = np.stack([ln_data[i][0] for i in batch], axis=1)
            ys = np.array([ln_data[i][1] for i in batch])
            ye = np.array([ln_data[i][2] for i in batch])
            ls = sp_head.logits(mix_layers(omega_s.tensor, stack)).data
            le = em_head.logits(mix_layers(omega_e.tensor, stack)).data
            correct_s += int((ls.argmax(axis=1) == ys).sum())
            correct_e += int((le.argmax(axis=1) == ye).sum())
    n = len(ln_data)
    return ProbeResult(
        w_emotion=LayerWeights("emotion", np.array(omega_e.tensor.data)),
        w_speaker=LayerWeights("speaker", np.array(omega_s.tensor.data)),
        speaker_accuracy=correct_s / n,
        emotion_accuracy=correct_e / n,
        speaker_head=sp_head, emotion_head=em_head,
        probe_seed=seed, loss_curve=losses,
    )


def extract_layer_weights(result):
    """The two normalized attribution vectors (emotion, speaker)."""
    return result.w_emotion.normalized(), result.w_speaker.normalized()


def save_layer_weights(result, backbone_config_hash, path):
    w_e, w_s = extract_layer_weights(result)
    doc = {
        "backbone_config_hash": backbone_config_hash,
        "w_emotion": w_e.tolist(),
        "w_speaker": w_s.tolist(),
        "probe_seed": result.probe_seed,
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)


def load_layer_weights(path):
    with open(path) as f:
        return json.load(f)


def embed_utterance(head, omega, captures, speech_start):
    """Penultimate ASP embedding of one utterance's speech frames."""
    stack = np.asarray(captures)[:, speech_start:, :]
    z = weighted_sum(stack, omega)
    return np.asarray(head.embed(Tensor(z)).data)

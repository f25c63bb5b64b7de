"""Autoregressive speech-token generation with a KV cache.

Prefill runs as one batched matmul-bound numpy pass; the per-token decode
loop goes through the kernel backend (numba or numpy). LoRA deltas are
merged into effective weights for inference only; the stored base weights
are never touched.
"""

import numpy as np

from csplab import kernels


def _ln_rows(x, g, b, eps):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * g + b


def stacked_weights(model):
    """Per-layer weights stacked on a leading layer axis, LoRA merged in."""
    cfg = model.config
    n = cfg.n_layers

    def eff(path):
        w = model.params[path].tensor.data
        if path in model.adapters:
            a, b, s = model.adapters[path]
            w = w + s * (a.tensor.data @ b.tensor.data)
        return w

    def stack(fmt):
        return np.ascontiguousarray(np.stack([eff(fmt.format(i)) for i in range(n)]))

    def stack_plain(fmt):
        return np.ascontiguousarray(
            np.stack([model.params[fmt.format(i)].tensor.data for i in range(n)]))

    sw = {
        "wq": stack("transformer.layer.{}.attn.wq"),
        "wk": stack("transformer.layer.{}.attn.wk"),
        "wv": stack("transformer.layer.{}.attn.wv"),
        "wo": stack("transformer.layer.{}.attn.wo"),
    }
    for nm in ("bq", "bk", "bv", "bo"):
        sw[nm] = stack_plain("transformer.layer.{}.attn." + nm)
    for nm, path in (("ln1g", "ln1.g"), ("ln1b", "ln1.b"),
                     ("ln2g", "ln2.g"), ("ln2b", "ln2.b")):
        sw[nm] = stack_plain("transformer.layer.{}." + path)
    for nm, path in (("w1", "ffn.w1"), ("b1", "ffn.b1"),
                     ("w2", "ffn.w2"), ("b2", "ffn.b2")):
        sw[nm] = stack_plain("transformer.layer.{}." + path)
    for nm, path in (("lnfg", "final_ln.g"), ("lnfb", "final_ln.b"),
                     ("head_w", "lm_head.w"), ("head_b", "lm_head.b"),
                     ("speech_emb", "embed.speech.w"), ("pos_emb", "embed.pos.w"),
                     ("text_emb", "embed.text.w"), ("bos", "embed.bos.w")):
        sw[nm] = model.params[path].tensor.data
    return sw


def _prefill(model, sw, contexts):
    """Run the padded batch through the stack, filling KV caches.

    contexts: list of (text_ids, prompt_speech_ids). Returns
    (kc, vc, lens, x_last) with caches sized for later decoding.
    """
    cfg = model.config
    dt = cfg.np_dtype()
    bsz = len(contexts)
    d, h = cfg.model_dim, cfg.n_heads
    dh = d // h
    lens = np.array([len(t) + 1 + len(s) for t, s in contexts], dtype=np.int64)
    pmax = int(lens.max())
    x = np.zeros((bsz, pmax, d), dtype=dt)
    for i, (text, speech) in enumerate(contexts):
        rows = [sw["text_emb"][np.asarray(text, dtype=np.int64)], sw["bos"]]
        if len(speech):
            rows.append(sw["speech_emb"][np.asarray(speech, dtype=np.int64)])
        emb = np.concatenate(rows, axis=0)
        x[i, :emb.shape[0]] = emb + sw["pos_emb"][:emb.shape[0]]
    mask = np.zeros((pmax, pmax), dtype=dt)
    mask[np.triu_indices(pmax, k=1)] = -1e30
    kc = np.zeros((bsz, cfg.n_layers, cfg.max_seq_len, d), dtype=dt)
    vc = np.zeros_like(kc)
    for l in range(cfg.n_layers):
        hx = _ln_rows(x, sw["ln1g"][l], sw["ln1b"][l], cfg.ln_eps)
        q = hx @ sw["wq"][l] + sw["bq"][l]
        k = hx @ sw["wk"][l] + sw["bk"][l]
        v = hx @ sw["wv"][l] + sw["bv"][l]
        kc[:, l, :pmax] = k
        vc[:, l, :pmax] = v
        qh = q.reshape(bsz, pmax, h, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(bsz, pmax, h, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(bsz, pmax, h, dh).transpose(0, 2, 1, 3)
        scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh) + mask
        flat = scores.reshape(-1, pmax)
        attn = (np.exp(flat - flat.max(axis=1, keepdims=True)))
        attn /= attn.sum(axis=1, keepdims=True)
        ctx = (attn.reshape(bsz, h, pmax, pmax) @ vh)
        ctx = ctx.transpose(0, 2, 1, 3).reshape(bsz, pmax, d)
        x = x + ctx @ sw["wo"][l] + sw["bo"][l]
        h2 = _ln_rows(x, sw["ln2g"][l], sw["ln2b"][l], cfg.ln_eps)
        f = np.maximum(h2 @ sw["w1"][l] + sw["b1"][l], 0.0) @ sw["w2"][l] + sw["b2"][l]
        x = x + f
    x_last = np.ascontiguousarray(
        x[np.arange(bsz), lens - 1])
    return kc, vc, lens, x_last


def generate_batch(model, items, mode="greedy", temperature=1.0, seeds=None,
                   weights=None):
    """Generate speech tokens for a batch of prompts.

    items: list of (text_ids, prompt_speech_ids, out_len). All samples in a
    call share the emitted length (group callers by out_len). mode is
    "greedy" or "sample"; sampling draws per-item uniforms from the given
    seeds so results do not depend on batch composition.
    """
    if not items:
        return []
    cfg = model.config
    out_len = int(items[0][2])
    if out_len < 1:
        raise ValueError("out_len must be >= 1")
    if any(int(o) != out_len for _, _, o in items):
        raise ValueError("generate_batch needs a uniform out_len per call")
    for text, speech, _ in items:
        total = len(text) + 1 + len(speech) + out_len
        if total > cfg.max_seq_len:
            raise ValueError(f"context + output length {total} exceeds max_seq_len")
    sw = weights if weights is not None else stacked_weights(model)
    kc, vc, lens, x_last = _prefill(model, sw, [(t, s) for t, s, _ in items])
    bsz = len(items)
    out = np.zeros((bsz, out_len), dtype=np.int64)
    if mode == "greedy":
        inv_temp = 0.0
        uniforms = np.zeros((bsz, out_len), dtype=np.float64)
    elif mode == "sample":
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        inv_temp = 1.0 / float(temperature)
        if seeds is None or len(seeds) != bsz:
            raise ValueError("sample mode needs one seed per item")
        uniforms = np.stack([
            np.random.default_rng(np.random.SeedSequence(s)).random(out_len)
            for s in seeds])
    else:
        raise ValueError(f"unknown decode mode {mode!r}")
    kernels.decode_steps(
        kc, vc, lens, x_last, out, uniforms, inv_temp,
        sw["wq"], sw["bq"], sw["wk"], sw["bk"], sw["wv"], sw["bv"],
        sw["wo"], sw["bo"], sw["ln1g"], sw["ln1b"], sw["ln2g"], sw["ln2b"],
        sw["w1"], sw["b1"], sw["w2"], sw["b2"], sw["lnfg"], sw["lnfb"],
        sw["head_w"], sw["head_b"], sw["speech_emb"], sw["pos_emb"],
        cfg.n_heads, cfg.ln_eps)
    return [row.tolist() for row in out]


def generate(model, text, prompt=None, out_len=1, mode="greedy",
             temperature=1.0, seed=None):
    """Spec surface: prompt_text + target_text + BOS + prompt_speech context.

    prompt is an Utterance-like object (or None for an unprompted start);
    returns exactly out_len emitted speech-token ids.
    """
    if prompt is not None:
        ctx_text = list(prompt.text) + list(text)
        ctx_speech = list(prompt.speech)
    else:
        ctx_text = list(text)
        ctx_speech = []
    seeds = [seed if seed is not None else 0] if mode == "sample" else None
    return generate_batch(model, [(ctx_text, ctx_speech, out_len)],
                          mode=mode, temperature=temperature, seeds=seeds)[0]

"""Shared LM training loop: prompt-pair batching, Adam, divergence checks.

Training examples are prompted pairs: two same-(speaker, emotion) utterances
concatenated as prompt_text + target_text + BOS + prompt_speech + target
speech, which is exactly the layout generation uses. Sequences bucket by
total text length, so batches are rectangular with no padding.
"""

import numpy as np

from .gradcore import Tape, AdamOptimizer, LrSchedule


class NumericError(Exception):
    """Training diverged (non-finite loss)."""


def _pair_plan(utterances, rng, pair_prompts=True):
    """One (target, partner) index pair per utterance, partner same (s, e)."""
    if not pair_prompts:
        return [(i, None) for i in range(len(utterances))]
    groups = {}
    for i, u in enumerate(utterances):
        groups.setdefault((u.speaker, u.emotion), []).append(i)
    plan = []
    for i, u in enumerate(utterances):
        pool = groups[(u.speaker, u.emotion)]
        j = pool[int(rng.integers(len(pool)))]
        plan.append((i, j))
    return plan


def _plan_epoch(utterances, batch_size, rng, pair_prompts):
    pairs = _pair_plan(utterances, rng, pair_prompts)
    buckets = {}
    for tgt, par in pairs:
        tl = len(utterances[tgt].text) + (len(utterances[par].text) if par is not None else 0)
        buckets.setdefault(tl, []).append((tgt, par))
    batches = []
    for tl in sorted(buckets):
        entries = buckets[tl]
        order = rng.permutation(len(entries))
        for i0 in range(0, len(entries), batch_size):
            batches.append([entries[int(k)] for k in order[i0:i0 + batch_size]])
    order = rng.permutation(len(batches))
    return [batches[int(k)] for k in order]


def materialize_batch(utterances, batch):
    texts, speeches = [], []
    for tgt, par in batch:
        u = utterances[tgt]
        if par is None:
            texts.append(u.text)
            speeches.append(u.speech)
        else:
            p = utterances[par]
            texts.append(p.text + u.text)
            speeches.append(p.speech + u.speech)
    return (np.asarray(texts, dtype=np.int64),
            np.asarray(speeches, dtype=np.int64))


def train_lm(model, utterances, epochs, batch_size, peak_lr, seed,
             pair_prompts=True, single_epochs=0, warmup_fraction=0.08,
             beta1=0.9, beta2=0.999, adam_eps=1e-8,
             start_epoch=0, opt_state=None, on_epoch=None, log=None):
    """Train lm_loss over the corpus; returns per-epoch mean losses.

    Deterministic for fixed (seed, config): batch plans for every epoch are
    derived up front from per-epoch seed streams, which also sizes the LR
    schedule exactly and makes epoch-boundary resume bit-exact.
    single_epochs > 0 trains the first epochs on unprompted single
    utterances (a cheap alignment curriculum) before switching to pairs.
    """
    if epochs == 0:
        return []
    plans = [_plan_epoch(utterances, batch_size,
                         np.random.default_rng(np.random.SeedSequence([seed, 31, ep])),
                         pair_prompts and ep >= single_epochs)
             for ep in range(epochs)]
    total_steps = sum(len(p) for p in plans)
    schedule = LrSchedule(peak_lr, total_steps, warmup_fraction)
    groups = [g for g in model.all_groups() if g.trainable]
    opt = AdamOptimizer(groups, schedule, beta1, beta2, adam_eps)
    if opt_state is not None:
        opt.step_count = opt_state["step_count"]
        slots = opt_state["slots"]
        for g in groups:
            if g.name in slots:
                m, v = slots[g.name]
                g.m = np.array(m, dtype=g.tensor.dtype)
                g.v = np.array(v, dtype=g.tensor.dtype)
    losses = []
    for ep in range(start_epoch, epochs):
        total = 0.0
        for batch in plans[ep]:
            text, speech = materialize_batch(utterances, batch)
            with Tape() as tape:
                loss = model.lm_loss_batch(text, speech)
                val = float(loss.data)
                if not np.isfinite(val):
                    raise NumericError(f"non-finite loss at epoch {ep}")
                tape.backward(loss)
            opt.step()
            total += val
        losses.append(total / len(plans[ep]))
        if log:
            log(f"epoch {ep + 1}/{epochs} loss {losses[-1]:.4f}")
        if on_epoch:
            on_epoch(ep, model, losses[-1], opt)
    return losses


def optimizer_state(opt):
    """Snapshot Adam slots for checkpoint-based resume."""
    return {
        "step_count": opt.step_count,
        "slots": {g.name: (np.array(g.m), np.array(g.v))
                  for g in opt.groups if g.m is not None},
    }

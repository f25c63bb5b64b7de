"""Wall-clock benchmark: optimizer steps under a plan at fixed batch size."""

import time

import numpy as np

from csplab.codeclm import inject_lora, set_trainable
from csplab.gradcore import Tape, adam_step
from csplab.lmtrain import _plan_epoch, materialize_batch


def bench_steps(model, plan, corpus, n_steps=100, warmup=10, batch_size=16,
                lr=1e-4, seed=0, pair_prompts=False):
    """Seconds of wall clock for n_steps training steps under the plan.

    Ten untimed warmup steps run first (kernel JIT, cache warmth). The batch
    stream is derived from the same seed for every plan so strategies see
    identical work. Returns {"seconds", "steps_per_sec"}.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if plan.kind == "lora" and not model.adapters:
        inject_lora(model, plan.lora_rank, seed=seed)
    set_trainable(model, plan)
    groups = [g for g in model.all_groups() if g.trainable]
    if not groups:
        raise ValueError(f"plan {plan.name} has no trainable parameters to time")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 51]))
    batches = _plan_epoch(corpus, batch_size, rng, pair_prompts=pair_prompts)
    mats = [materialize_batch(corpus, b) for b in batches[:max(1, min(len(batches), 32))]]
    step_index = 0
    t0 = None
    for step in range(warmup + n_steps):
        if step == warmup:
            t0 = time.perf_counter()
        text, speech = mats[step % len(mats)]
        with Tape() as tape:
            loss = model.lm_loss_batch(text, speech)
            tape.backward(loss)
        step_index += 1
        for g in groups:
            grad = g.tensor._grad
            if grad is not None:
                adam_step(g, grad, lr, step_index=step_index)
                g.tensor.clear_grad()
    seconds = time.perf_counter() - t0
    return {"seconds": seconds, "steps_per_sec": n_steps / seconds}

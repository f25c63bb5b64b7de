"""Target-domain fine-tuning runs under a resolved plan."""

import numpy as np

from csplab.codeclm import inject_lora, set_trainable
from csplab.lmtrain import train_lm


def frozen_param_names(model):
    return [n for n, g in model.params.items() if not g.trainable]


def run_finetune(model, plan, corpus, seed, peak_lr, batch_size=16,
                 pair_prompts=False, on_epoch=None, log=None):
    """Apply the plan and fine-tune lm_loss on the target corpus.

    Emits one on_epoch callback per epoch (the pipeline writes checkpoints
    there) and re-verifies the frozen-parameter hash every epoch. Zero-epoch
    plans return immediately with the model untouched.
    """
    if plan.kind == "lora":
        inject_lora(model, plan.lora_rank, seed=seed)
    set_trainable(model, plan)
    if plan.epochs == 0 or plan.kind == "none":
        return []
    frozen = frozen_param_names(model)
    frozen_hash = model.param_hash(frozen)

    def check_and_forward(ep, m, loss, opt):
        if m.param_hash(frozen) != frozen_hash:
            raise RuntimeError(f"frozen parameters changed at epoch {ep} under plan {plan.name}")
        if on_epoch:
            on_epoch(ep, m, loss, opt)

    return train_lm(model, corpus, epochs=plan.epochs, batch_size=batch_size,
                    peak_lr=peak_lr * plan.lr_peak_fraction, seed=seed,
                    pair_prompts=pair_prompts,
                    on_epoch=check_and_forward, log=log)

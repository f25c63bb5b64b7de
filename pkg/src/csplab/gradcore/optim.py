"""Adam with bias correction, trainable-parameter groups, warmup/decay LR."""

from dataclasses import dataclass, field

import numpy as np

from csplab import kernels
from .tensor import Tensor


class FrozenParamError(Exception):
    pass


@dataclass
class ParamGroup:
    """One named parameter tensor plus its optimizer slots.

    Frozen groups (trainable=False) must stay bit-identical across any number
    of optimizer steps; adam_step refuses to touch them.
    """
    name: str
    tensor: Tensor
    trainable: bool = True
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def ensure_slots(self):
        if self.m is None:
            self.m = np.zeros_like(self.tensor.data)
            self.v = np.zeros_like(self.tensor.data)

    def reset_slots(self):
        self.m = None
        self.v = None

    @property
    def size(self):
        return self.tensor.data.size


def adam_step(group, grad, lr, beta1=0.9, beta2=0.999, eps=1e-8, step_index=1):
    """One in-place Adam update; step_index is 1-based for bias correction."""
    if not group.trainable:
        raise FrozenParamError(f"adam_step on frozen group {group.name!r}")
    if step_index < 1:
        raise ValueError("step_index must be >= 1")
    group.ensure_slots()
    bc1 = 1.0 - beta1 ** step_index
    bc2 = 1.0 - beta2 ** step_index
    p = group.tensor.data.reshape(-1)
    g = np.ascontiguousarray(np.asarray(grad, dtype=p.dtype).reshape(-1))
    kernels.adam_update(p, g, group.m.reshape(-1), group.v.reshape(-1),
                        float(lr), float(beta1), float(beta2), float(eps),
                        bc1, bc2)


@dataclass
class LrSchedule:
    """Linear warmup to peak, then linear decay to zero.

    The maximum is reached exactly at floor(warmup_fraction * total_steps).
    """
    peak: float
    total_steps: int
    warmup_fraction: float = 0.08

    warmup_steps: int = field(init=False)

    def __post_init__(self):
        if self.peak <= 0 or self.total_steps <= 0:
            raise ValueError("peak and total_steps must be positive")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")
        self.warmup_steps = int(np.floor(self.warmup_fraction * self.total_steps))


def lr_at_step(schedule, step):
    if step < 0 or step > schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    w = schedule.warmup_steps
    if w == 0:
        w = 1  # degenerate short runs: treat step 0 as the peak onset
        if step == 0:
            return 0.0
    if step <= w:
        return schedule.peak * step / w
    return schedule.peak * (schedule.total_steps - step) / (schedule.total_steps - w)


class AdamOptimizer:
    """Convenience driver for a set of ParamGroups with a shared schedule."""

    def __init__(self, groups, schedule, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = [g for g in groups if g.trainable]
        self.schedule = schedule
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0

    def step(self):
        """Apply grads accumulated on each trainable group's tensor."""
        lr = lr_at_step(self.schedule, min(self.step_count, self.schedule.total_steps))
        self.step_count += 1
        for g in self.groups:
            grad = g.tensor._grad
            if grad is None:
                continue
            adam_step(g, grad, lr, self.beta1, self.beta2, self.eps,
                      step_index=self.step_count)
            g.tensor.clear_grad()

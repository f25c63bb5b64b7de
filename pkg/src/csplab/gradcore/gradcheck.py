"""Central finite-difference gradient checking (the independent oracle)."""

import numpy as np

from .tensor import Tape


def finite_difference_check(loss_fn, params, h=1e-4, tol=1e-4):
    """Compare analytic gradients of loss_fn against central differences.

    loss_fn takes no arguments and returns a scalar Tensor built from the
    given parameter Tensors (all float64, requires_grad=True). Returns the
    max relative error over every element of every parameter, with the
    relative denominator max(|analytic|, |numeric|, 1e-8).
    """
    for p in params:
        p.clear_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = []
    for p in params:
        g = p._grad
        analytic.append(np.zeros_like(p.data) if g is None else np.array(g))

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            dn = float(loss_fn().data)
            flat[i] = orig
            num = (up - dn) / (2.0 * h)
            denom = max(abs(gflat[i]), abs(num), 1e-8)
            rel = abs(gflat[i] - num) / denom
            if rel > worst:
                worst = rel
    for p in params:
        p.clear_grad()
    return worst


def assert_gradients_match(loss_fn, params, h=1e-4, tol=1e-4):
    worst = finite_difference_check(loss_fn, params, h=h, tol=tol)
    if worst > tol:
        raise AssertionError(f"finite-difference mismatch: rel err {worst:.3e} > {tol:.0e}")
    return worst

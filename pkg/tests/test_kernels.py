"""Backend equivalence: every kernel agrees between numba and numpy."""

import numpy as np
import pytest

from csplab import backend, kernels


@pytest.fixture
def both_backends():
    """Run the wrapped call under each backend and return both results."""
    def run(fn):
        out = {}
        prev = backend.active_backend()
        try:
            for be in ("numpy", "numba"):
                backend.use_backend(be)
                out[be] = fn()
        finally:
            backend.use_backend(prev)
        return out["numpy"], out["numba"]
    return run


def assert_close(a, b, tol=1e-12):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            assert_close(x, y, tol)
    else:
        np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


def test_ln_kernels(rng, both_backends):
    x = rng.normal(size=(37, 16))
    g = rng.normal(size=16) + 1.0
    b = rng.normal(size=16)
    dy = rng.normal(size=x.shape)
    fwd = both_backends(lambda: kernels.ln_fwd(x, g, b, 1e-5))
    assert_close(*fwd)
    y, mean, rstd = fwd[0]
    assert_close(*both_backends(lambda: kernels.ln_bwd(dy, x, g, mean, rstd)))


def test_softmax_kernels(rng, both_backends):
    x = rng.normal(size=(19, 23)) * 3
    dy = rng.normal(size=x.shape)
    fwd = both_backends(lambda: kernels.softmax_fwd(x))
    assert_close(*fwd)
    assert_close(*both_backends(lambda: kernels.softmax_bwd(dy, fwd[0])))
    valid = rng.integers(1, 24, size=19)
    assert_close(*both_backends(lambda: kernels.softmax_causal_fwd(x, valid)))


def test_ce_kernels(rng, both_backends):
    logits = rng.normal(size=(21, 9)) * 2
    targets = rng.integers(0, 9, size=21)
    fwd = both_backends(lambda: kernels.ce_fwd(logits, targets))
    assert_close(*fwd)
    assert_close(*both_backends(lambda: kernels.ce_bwd(fwd[0][1], targets, 0.37)))


@pytest.mark.parametrize("stride,pl,pr", [(1, 2, 2), (1, 0, 0), (2, 0, 0), (3, 1, 1)])
def test_conv_kernels(rng, both_backends, stride, pl, pr):
    x = rng.normal(size=(3, 11, 5))
    w = rng.normal(size=(5, 5, 7))
    b = rng.normal(size=7)
    fwd = both_backends(lambda: kernels.conv1d_fwd(x, w, b, stride, pl, pr))
    assert_close(*fwd)
    dy = rng.normal(size=fwd[0].shape)
    assert_close(*both_backends(lambda: kernels.conv1d_bwd(dy, x, w, stride, pl, pr)))


def test_adam_kernel(rng, both_backends):
    def run():
        p = np.linspace(-1, 1, 64)
        g = np.sin(p) * 0.3
        m = np.zeros(64)
        v = np.zeros(64)
        kernels.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
        return p, m, v
    assert_close(*both_backends(run))


def test_sampling_kernels(rng, both_backends):
    g_rows = rng.normal(size=(24, 16)) * 2
    bias = rng.normal(size=16)
    trans = rng.normal(size=(16, 16)) * 0.5
    uni = rng.random(24)
    a, b = both_backends(lambda: kernels.sample_speech(g_rows, bias, trans, 0.5, 1.4, uni))
    np.testing.assert_array_equal(a, b)
    speech = a
    prevs = np.concatenate([[0], speech[:-1]])
    assert_close(*both_backends(
        lambda: kernels.token_loglik_sum(speech, g_rows, bias, trans, prevs, 0.5, 1.4)))
    content = rng.normal(size=(6, 16)) * 2
    assert_close(*both_backends(
        lambda: kernels.text_scores(speech, prevs, content, bias, trans, 0.5, 1.4)))


def test_decode_kernel_backends_agree():
    from csplab import codeclm as clm
    model = clm.CodecLM(clm.ModelConfig(n_layers=3, model_dim=16, inner_dim=32,
                                        n_heads=2, text_vocab=8, speech_vocab=12,
                                        max_seq_len=64), seed=11)
    prompt = clm.TokenSequence(text=[1, 2], speech=[3, 4, 5, 6])
    outs = {}
    prev = backend.active_backend()
    try:
        for be in ("numpy", "numba"):
            backend.use_backend(be)
            greedy = clm.generate(model, [5, 6], prompt=prompt, out_len=7)
            sampled = clm.generate(model, [5, 6], prompt=prompt, out_len=7,
                                   mode="sample", temperature=0.9, seed=99)
            outs[be] = (greedy, sampled)
    finally:
        backend.use_backend(prev)
    assert outs["numpy"] == outs["numba"]

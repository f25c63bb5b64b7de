"""Benchmark the numba kernels against the pure-numpy fallback."""

import time

import numpy as np

from csplab import backend, kernels


def _time(fn, reps):
    fn()  # warmup (numba compiles here)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def _workloads(dtype=np.float64):
    rng = np.random.default_rng(0)
    d, v, inner, n_layers, heads = 64, 64, 256, 8, 4
    rows = rng.normal(size=(2048, d)).astype(dtype)
    g = np.ones(d, dtype=dtype)
    b = np.zeros(d, dtype=dtype)
    dy = rng.normal(size=rows.shape).astype(dtype)
    targets = rng.integers(0, d, size=2048)
    conv_x = rng.normal(size=(16, 30, d)).astype(dtype)
    conv_w = (rng.normal(size=(5, d, d)) * 0.1).astype(dtype)
    conv_b = np.zeros(d, dtype=dtype)
    conv_dy = rng.normal(size=(16, 30, d)).astype(dtype)
    flat = rng.normal(size=500_000).astype(dtype)
    grows = rng.normal(size=(40, v)).astype(np.float64)
    bias = rng.normal(size=v)
    trans = rng.normal(size=(v, v)) * 0.5
    uni = rng.random(40)
    speech = rng.integers(0, v, size=40)
    prevs = np.concatenate([[0], speech[:-1]])
    content = rng.normal(size=(32, v))

    def decode_args():
        bsz, pre, emit = 64, 50, 20
        kc = np.zeros((bsz, n_layers, 128, d), dtype=dtype)
        vc = np.zeros_like(kc)
        kc[:, :, :pre] = rng.normal(size=(bsz, n_layers, pre, d)).astype(dtype)
        vc[:, :, :pre] = rng.normal(size=(bsz, n_layers, pre, d)).astype(dtype)
        lens = np.full(bsz, pre, dtype=np.int64)
        x_last = rng.normal(size=(bsz, d)).astype(dtype)
        out = np.zeros((bsz, emit), dtype=np.int64)
        uniforms = rng.random((bsz, emit))
        mk = lambda *s: (rng.normal(size=s) * 0.05).astype(dtype)
        return [kc, vc, lens, x_last, out, uniforms, 1.0,
                mk(n_layers, d, d), mk(n_layers, d), mk(n_layers, d, d), mk(n_layers, d),
                mk(n_layers, d, d), mk(n_layers, d), mk(n_layers, d, d), mk(n_layers, d),
                np.ones((n_layers, d), dtype=dtype), np.zeros((n_layers, d), dtype=dtype),
                np.ones((n_layers, d), dtype=dtype), np.zeros((n_layers, d), dtype=dtype),
                mk(n_layers, d, inner), mk(n_layers, inner), mk(n_layers, inner, d),
                mk(n_layers, d), np.ones(d, dtype=dtype), np.zeros(d, dtype=dtype),
                mk(d, v), mk(v), mk(v, d), mk(256, d), heads, 1e-5]

    gflat = rng.normal(size=flat.size).astype(dtype)
    m = np.zeros_like(flat)
    vv = np.zeros_like(flat)
    return [
        ("ln_fwd", lambda: kernels.ln_fwd(rows, g, b, 1e-5), 20),
        ("ln_bwd", lambda: kernels.ln_bwd(dy, rows, g, *kernels.ln_fwd(rows, g, b, 1e-5)[1:]), 10),
        ("softmax_fwd", lambda: kernels.softmax_fwd(rows), 20),
        ("ce_fwd", lambda: kernels.ce_fwd(rows, targets), 20),
        ("conv1d_fwd", lambda: kernels.conv1d_fwd(conv_x, conv_w, conv_b, 1, 2, 2), 10),
        ("conv1d_bwd", lambda: kernels.conv1d_bwd(conv_dy, conv_x, conv_w, 1, 2, 2), 10),
        ("adam_update", lambda: kernels.adam_update(flat, gflat, m, vv, 1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001), 10),
        ("sample_speech", lambda: kernels.sample_speech(grows, bias, trans, 0.5, 1.3, uni), 50),
        ("token_loglik_sum", lambda: kernels.token_loglik_sum(speech, grows, bias, trans, prevs, 0.5, 1.3), 50),
        ("text_scores", lambda: kernels.text_scores(speech, prevs, content, bias, trans, 0.5, 1.3), 20),
        ("decode_steps(B=64,T=20)", lambda args=decode_args(): kernels.decode_steps(*[
            a.copy() if isinstance(a, np.ndarray) else a for a in args]), 3),
    ]


def run_kernel_bench(out=print):
    """Print per-kernel timings for both backends and their ratio."""
    results = {}
    original = backend.active_backend()
    try:
        for be in ("numpy", "numba"):
            backend.use_backend(be)
            for name, fn, reps in _workloads():
                results.setdefault(name, {})[be] = _time(fn, reps)
    finally:
        backend.use_backend(original)
    out(f"{'kernel':28s} {'numpy':>12s} {'numba':>12s} {'numpy/numba':>12s}")
    for name, r in results.items():
        ratio = r["numpy"] / r["numba"] if r["numba"] > 0 else float("inf")
        out(f"{name:28s} {r['numpy'] * 1e3:10.3f}ms {r['numba'] * 1e3:10.3f}ms "
            f"{ratio:11.2f}x")
    return results

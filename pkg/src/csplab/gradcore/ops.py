"""Differentiable operations over Tensors.

Forward math runs on numpy arrays; row-oriented inner loops (layernorm,
softmax, cross entropy, conv1d) route through csplab.kernels so the numba
and numpy backends share one autodiff layer. Every op records its backward
closure on the active tape when an input requires grad.
"""

import numpy as np

from csplab import kernels
from .tensor import Tensor, accumulate, active_tape, as_tensor


def _record(out, fn):
    tape = active_tape()
    if tape is not None:
        tape.record(out, fn)


def _wants_grad(*tensors):
    if active_tape() is None:
        return False
    return any(isinstance(t, Tensor) and t.requires_grad for t in tensors)


def _unbroadcast(grad, shape):
    """Sum a broadcasted gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ------------------------------------------------------------- arithmetic

def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    out = Tensor(a.data + b.data, requires_grad=_wants_grad(a, b))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, _unbroadcast(g, a.data.shape))
            accumulate(b, _unbroadcast(g, b.data.shape))
        _record(out, bwd)
    return out


def sub(a, b):
    return add(a, scale(as_tensor(b), -1.0))


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    out = Tensor(a.data * b.data, requires_grad=_wants_grad(a, b))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, _unbroadcast(g * b.data, a.data.shape))
            accumulate(b, _unbroadcast(g * a.data, b.data.shape))
        _record(out, bwd)
    return out


def scale(a, s):
    s = float(s)
    out = Tensor(a.data * s, requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, g * s)
        _record(out, bwd)
    return out


def add_const(a, arr):
    """Add a non-differentiable array (e.g. an attention mask)."""
    out = Tensor(a.data + arr, requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, _unbroadcast(g, a.data.shape))
        _record(out, bwd)
    return out


def matmul(a, b, bias=None):
    """a @ b with optional fused bias over the last axis.

    The common (..., K) @ (K, N) case collapses leading axes into one GEMM
    instead of a strided batched product.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    ad, bd = a.data, b.data
    flat = ad.ndim > 2 and bd.ndim == 2
    if flat:
        lead = ad.shape[:-1]
        y = np.matmul(ad.reshape(-1, ad.shape[-1]), bd)
        y = y.reshape(lead + (bd.shape[1],))
    else:
        y = np.matmul(ad, bd)
    if bias is not None:
        y += bias.data
    out = Tensor(y, requires_grad=_wants_grad(a, b, bias))
    if out.requires_grad:
        def bwd(g):
            if flat:
                g2 = g.reshape(-1, g.shape[-1])
                if a.requires_grad:
                    accumulate(a, np.matmul(g2, bd.T).reshape(ad.shape))
                if b.requires_grad:
                    accumulate(b, np.matmul(ad.reshape(-1, ad.shape[-1]).T, g2))
            else:
                if a.requires_grad:
                    ga = np.matmul(g, np.swapaxes(bd, -1, -2))
                    accumulate(a, _unbroadcast(ga, ad.shape))
                if b.requires_grad:
                    gb = np.matmul(np.swapaxes(ad, -1, -2), g)
                    accumulate(b, _unbroadcast(gb, bd.shape))
            if bias is not None and bias.requires_grad:
                accumulate(bias, g.reshape(-1, g.shape[-1]).sum(axis=0))
        _record(out, bwd)
    return out


def relu(a):
    out = Tensor(np.maximum(a.data, 0.0), requires_grad=_wants_grad(a))
    if out.requires_grad:
        mask = a.data > 0.0
        def bwd(g):
            accumulate(a, g * mask)
        _record(out, bwd)
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor(y, requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, g * (1.0 - y * y))
        _record(out, bwd)
    return out


def sqrt(a):
    y = np.sqrt(a.data)
    out = Tensor(y, requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, g * (0.5 / y))
        _record(out, bwd)
    return out


def clamp_min(a, floor):
    floor = float(floor)
    out = Tensor(np.maximum(a.data, floor), requires_grad=_wants_grad(a))
    if out.requires_grad:
        mask = a.data > floor
        def bwd(g):
            accumulate(a, g * mask)
        _record(out, bwd)
    return out


def sum_all(a):
    out = Tensor(np.asarray(a.data.sum()), requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype))
        _record(out, bwd)
    return out


def mean_all(a):
    n = a.data.size
    return scale(sum_all(a), 1.0 / n)


# ------------------------------------------------------------ shape moves

def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), requires_grad=_wants_grad(a))
    if out.requires_grad:
        orig = a.data.shape
        def bwd(g):
            accumulate(a, g.reshape(orig))
        _record(out, bwd)
    return out


def transpose_last2(a):
    out = Tensor(np.ascontiguousarray(np.swapaxes(a.data, -1, -2)),
                 requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, np.swapaxes(g, -1, -2))
        _record(out, bwd)
    return out


def split_heads(a, n_heads):
    """(B, T, D) -> (B, H, T, D/H)."""
    bsz, t, d = a.data.shape
    dh = d // n_heads
    out_data = np.ascontiguousarray(
        a.data.reshape(bsz, t, n_heads, dh).transpose(0, 2, 1, 3))
    out = Tensor(out_data, requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, g.transpose(0, 2, 1, 3).reshape(bsz, t, d))
        _record(out, bwd)
    return out


def merge_heads(a):
    """(B, H, T, D/H) -> (B, T, D)."""
    bsz, h, t, dh = a.data.shape
    out = Tensor(np.ascontiguousarray(a.data.transpose(0, 2, 1, 3)).reshape(bsz, t, h * dh),
                 requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            accumulate(a, g.reshape(bsz, t, h, dh).transpose(0, 2, 1, 3))
        _record(out, bwd)
    return out


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 requires_grad=_wants_grad(*tensors))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def bwd(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                accumulate(t, piece)
        _record(out, bwd)
    return out


def slice_time(a, start, stop):
    """Slice along axis -2 (the time/frame axis)."""
    out = Tensor(np.ascontiguousarray(a.data[..., start:stop, :]),
                 requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            full = np.zeros_like(a.data)
            full[..., start:stop, :] = g
            accumulate(a, full)
        _record(out, bwd)
    return out


# ------------------------------------------------------- neural primitives

def embedding(table, ids):
    """Gather rows of a (V, D) table; ids is any integer array."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError("token id out of vocabulary range")
    out = Tensor(table.data[ids], requires_grad=_wants_grad(table))
    if out.requires_grad:
        def bwd(g):
            dt = np.zeros_like(table.data)
            np.add.at(dt, ids.ravel(), g.reshape(-1, table.data.shape[1]))
            accumulate(table, dt)
        _record(out, bwd)
    return out


def softmax(a):
    """Softmax over the last axis; shift-invariant and sums to one."""
    x = a.data
    if x.size == 0:
        raise ValueError("softmax of empty input")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("softmax of non-finite input")
    rows = x.reshape(-1, x.shape[-1])
    y = kernels.softmax_fwd(np.ascontiguousarray(rows)).reshape(x.shape)
    out = Tensor(y, requires_grad=_wants_grad(a))
    if out.requires_grad:
        def bwd(g):
            g2 = np.ascontiguousarray(g.reshape(-1, x.shape[-1]))
            y2 = np.ascontiguousarray(y.reshape(-1, x.shape[-1]))
            accumulate(a, kernels.softmax_bwd(g2, y2).reshape(x.shape))
        _record(out, bwd)
    return out


def layernorm(a, eps=1e-5, gain=None, bias=None):
    """Layernorm over the last axis; parameter-free when gain/bias omitted."""
    x = a.data
    if x.size == 0:
        raise ValueError("layernorm of empty input")
    d = x.shape[-1]
    rows = np.ascontiguousarray(x.reshape(-1, d))
    g_arr = gain.data if gain is not None else np.ones(d, dtype=x.dtype)
    b_arr = bias.data if bias is not None else np.zeros(d, dtype=x.dtype)
    y, mean, rstd = kernels.ln_fwd(rows, g_arr, b_arr, float(eps))
    out = Tensor(y.reshape(x.shape), requires_grad=_wants_grad(a, gain, bias))
    if out.requires_grad:
        def bwd(g):
            g2 = np.ascontiguousarray(g.reshape(-1, d))
            dx, dg, db = kernels.ln_bwd(g2, rows, g_arr, mean, rstd)
            accumulate(a, dx.reshape(x.shape))
            if gain is not None:
                accumulate(gain, dg)
            if bias is not None:
                accumulate(bias, db)
        _record(out, bwd)
    return out


def linear(x, w, b=None, lora=None):
    """x @ w (+ b), optionally with a low-rank adapter delta."""
    if lora is None:
        return matmul(x, w, bias=b)
    a_mat, b_mat, s = lora
    out = add(matmul(x, w, bias=b),
              scale(matmul(matmul(x, a_mat), b_mat), s))
    return out


def conv1d(x, w, b, stride=1, padding="same"):
    """1-D convolution over (B, T, Cin) with a (W, Cin, Cout) kernel."""
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    width, cin, cout = w.data.shape
    if xd.shape[-1] != cin:
        raise ValueError(f"channel mismatch: input {xd.shape[-1]}, kernel {cin}")
    if padding == "same":
        if stride != 1:
            raise ValueError("same padding requires stride 1")
        pad_l = (width - 1) // 2
        pad_r = width - 1 - pad_l
    elif padding == "valid":
        if xd.shape[1] < width:
            raise ValueError("input shorter than kernel with valid padding")
        pad_l = pad_r = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    xc = np.ascontiguousarray(xd)
    y = kernels.conv1d_fwd(xc, w.data, b.data, stride, pad_l, pad_r)
    out = Tensor(y[0] if squeeze else y, requires_grad=_wants_grad(x, w, b))
    if out.requires_grad:
        def bwd(g):
            g3 = np.ascontiguousarray(g[None] if squeeze else g)
            dx, dw, db = kernels.conv1d_bwd(g3, xc, w.data, stride, pad_l, pad_r)
            accumulate(x, dx[0] if squeeze else dx)
            accumulate(w, dw)
            accumulate(b, db)
        _record(out, bwd)
    return out


def avg_pool1d(x, k):
    """Non-overlapping mean pooling along the frame axis; trailing remainder dropped."""
    xd = x.data
    bsz, t, c = xd.shape
    to = t // k
    if to < 1:
        raise ValueError(f"cannot pool {t} frames with kernel {k}")
    y = xd[:, :to * k].reshape(bsz, to, k, c).mean(axis=2)
    out = Tensor(y, requires_grad=_wants_grad(x))
    if out.requires_grad:
        def bwd(g):
            full = np.zeros_like(xd)
            full[:, :to * k] = np.repeat(g / k, k, axis=1)
            accumulate(x, full)
        _record(out, bwd)
    return out


def cross_entropy_rows(logits, targets):
    """Mean cross entropy over rows: logits (R, V), integer targets (R,)."""
    x = logits.data
    rows = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
    targets = np.ascontiguousarray(np.asarray(targets, dtype=np.int64).ravel())
    if targets.size == 0:
        raise ValueError("cross entropy over zero rows")
    if targets.min() < 0 or targets.max() >= rows.shape[1]:
        raise IndexError("target class out of range")
    losses, probs = kernels.ce_fwd(rows, targets)
    out = Tensor(np.asarray(losses.mean()), requires_grad=_wants_grad(logits))
    if out.requires_grad:
        def bwd(g):
            s = float(g) / rows.shape[0]
            accumulate(logits, kernels.ce_bwd(probs, targets, s).reshape(x.shape))
        _record(out, bwd)
    return out


def cross_entropy(logits, target):
    """Single-sample form: -log softmax(logits)[target]."""
    t = as_tensor(logits)
    if t.data.ndim != 1:
        raise ValueError("cross_entropy expects a logit vector")
    return cross_entropy_rows(reshape(t, (1, t.data.shape[0])), [int(target)])


# ------------------------------------------------------- transformer block

def causal_mask(t, dtype=np.float64):
    """(T, T) additive mask: 0 on/below the diagonal, -1e30 above."""
    m = np.zeros((t, t), dtype=dtype)
    m[np.triu_indices(t, k=1)] = -1e30
    return m


def causal_softmax(scores):
    """Softmax over the key axis of (B, H, T, T) scores, causally masked.

    Row t attends to keys 0..t; masked entries are exactly zero, so
    perturbing future tokens cannot move earlier outputs even at the bit
    level. Shares the plain softmax backward (zeros stay zero).
    """
    x = scores.data
    t = x.shape[-1]
    rows = np.ascontiguousarray(x.reshape(-1, t))
    valid = np.tile(np.arange(1, t + 1, dtype=np.int64), rows.shape[0] // t)
    y = kernels.softmax_causal_fwd(rows, valid).reshape(x.shape)
    out = Tensor(y, requires_grad=_wants_grad(scores))
    if out.requires_grad:
        def bwd(g):
            g2 = np.ascontiguousarray(g.reshape(-1, t))
            y2 = np.ascontiguousarray(y.reshape(-1, t))
            accumulate(scores, kernels.softmax_bwd(g2, y2).reshape(x.shape))
        _record(out, bwd)
    return out


def attention_block(x, params, mask, n_heads, eps=1e-5):
    """Pre-norm causal self-attention sublayer with residual connection.

    params carries wq/bq/wk/bk/wv/bv/wo/bo plus ln_g/ln_b; optional
    lora_{q,k,v,o} entries are (A, B, scale) adapter triples. mask=None
    selects the fused causal-softmax path; an explicit additive mask array
    is also accepted.
    """
    d = x.data.shape[-1]
    if d % n_heads:
        raise ValueError(f"model dim {d} not divisible by {n_heads} heads")
    h = layernorm(x, eps, params["ln_g"], params["ln_b"])
    q = linear(h, params["wq"], params["bq"], params.get("lora_q"))
    k = linear(h, params["wk"], params["bk"], params.get("lora_k"))
    v = linear(h, params["wv"], params["bv"], params.get("lora_v"))
    qh = split_heads(scale(q, 1.0 / np.sqrt(d // n_heads)), n_heads)
    kh = split_heads(k, n_heads)
    vh = split_heads(v, n_heads)
    scores = matmul(qh, transpose_last2(kh))
    if mask is None:
        attn = causal_softmax(scores)
    else:
        attn = softmax(add_const(scores, mask))
    ctx = merge_heads(matmul(attn, vh))
    out = linear(ctx, params["wo"], params["bo"], params.get("lora_o"))
    return add(x, out)


def ffn_block(x, params, eps=1e-5):
    """Pre-norm two-layer feed-forward sublayer with residual connection."""
    h = layernorm(x, eps, params["ln_g"], params["ln_b"])
    u = relu(linear(h, params["w1"], params["b1"]))
    return add(x, linear(u, params["w2"], params["b2"]))

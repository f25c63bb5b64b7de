"""Vectorized numpy implementations of the hot kernels.

Reference semantics for the numba backend: both implementations must agree
within floating tolerance (bitwise agreement is not required, a backend is
picked once per run).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


# ---------------------------------------------------------------- layernorm

def ln_fwd(x, g, b, eps):
    """Row-wise layernorm over the last axis of a 2-D array.

    Returns (y, mean, rstd); mean/rstd are cached for the backward pass.
    Population variance, matching the eps-under-sqrt convention.
    """
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * g + b
    return y, mean, rstd


def ln_bwd(dy, x, g, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * g
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    return dx, dg, db


# ------------------------------------------------------------------ softmax

def softmax_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(dy, y):
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def softmax_causal_fwd(x, valid):
    """Row-wise softmax over the first valid[r] entries; zeros elsewhere."""
    r, t = x.shape
    mask = np.arange(t)[None, :] < valid[:, None]
    shifted = np.where(mask, x, -np.inf)
    e = np.exp(shifted - shifted.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# ------------------------------------------------------------ cross entropy

def ce_fwd(logits, targets):
    """Per-row cross entropy. Returns (losses, probs); probs cached for bwd."""
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    rows = np.arange(logits.shape[0])
    losses = np.log(z[:, 0]) + m[:, 0] - logits[rows, targets]
    return losses, probs


def ce_bwd(probs, targets, scale):
    d = probs * scale
    rows = np.arange(probs.shape[0])
    d[rows, targets] -= scale
    return d


# ------------------------------------------------------------------- conv1d

def _im2col(x, width, stride, pad_left, pad_right):
    b, t, ci = x.shape
    xp = np.zeros((b, t + pad_left + pad_right, ci), dtype=x.dtype)
    xp[:, pad_left:pad_left + t] = x
    win = sliding_window_view(xp, width, axis=1)      # (B, T', Ci, W)
    win = win[:, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2))  # (B, To, W, Ci)


def conv1d_fwd(x, w, b, stride, pad_left, pad_right):
    width, ci, co = w.shape
    cols = _im2col(x, width, stride, pad_left, pad_right)
    bsz, to = cols.shape[0], cols.shape[1]
    y = cols.reshape(bsz * to, width * ci) @ w.reshape(width * ci, co)
    y += b
    return y.reshape(bsz, to, co)


def conv1d_bwd(dy, x, w, stride, pad_left, pad_right):
    width, ci, co = w.shape
    bsz, t, _ = x.shape
    to = dy.shape[1]
    cols = _im2col(x, width, stride, pad_left, pad_right)
    dy2 = dy.reshape(bsz * to, co)
    dw = (cols.reshape(bsz * to, width * ci).T @ dy2).reshape(width, ci, co)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(width * ci, co).T).reshape(bsz, to, width, ci)
    dxp = np.zeros((bsz, t + pad_left + max(0, width - 1), ci), dtype=x.dtype)
    pos = np.arange(to) * stride
    for wi in range(width):
        dxp[:, pos + wi] += dcols[:, :, wi]
    dx = dxp[:, pad_left:pad_left + t]
    return dx, dw, db


# --------------------------------------------------------------------- adam

def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam step on flat arrays; bc1/bc2 are the bias corrections."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------- token sampling

def sample_speech(g_rows, bias, trans, gamma, inv_tau, uniforms):
    """Draw one speech token per row of g_rows via inverse-CDF sampling.

    g_rows holds the content logits already expanded to one row per output
    token; the previous-token chain starts at reserved token 0.
    """
    t_a, v_s = g_rows.shape
    out = np.empty(t_a, dtype=np.int64)
    prev = 0
    for t in range(t_a):
        logits = (g_rows[t] + bias + gamma * trans[prev]) * inv_tau
        e = np.exp(logits - logits.max())
        probs = e / e.sum()
        c = np.cumsum(probs)
        out[t] = np.searchsorted(c, uniforms[t] * c[-1], side="left")
        if out[t] >= v_s:  # guard against cumsum rounding at the top end
            out[t] = v_s - 1
        prev = out[t]
    return out


def token_loglik_sum(speech, g_rows, bias, trans, prevs, gamma, inv_tau):
    """Sum over tokens of log softmax-prob of each observed token."""
    logits = (g_rows + bias + gamma * trans[prevs]) * inv_tau
    m = logits.max(axis=1)
    lse = np.log(np.exp(logits - m[:, None]).sum(axis=1)) + m
    rows = np.arange(speech.shape[0])
    return float((logits[rows, speech] - lse).sum())


def text_scores(speech, prevs, content, bias, trans, gamma, inv_tau):
    """Log-prob of each observed token under every candidate text token.

    Returns (T_A, V_t); the transcriber sums rows segment-wise and argmaxes.
    """
    off = bias + gamma * trans[prevs]                      # (T, Vs)
    logits = (content[None, :, :] + off[:, None, :]) * inv_tau  # (T, Vt, Vs)
    m = logits.max(axis=2)
    lse = np.log(np.exp(logits - m[:, :, None]).sum(axis=2)) + m
    rows = np.arange(speech.shape[0])
    return logits[rows, :, speech] - lse


# ------------------------------------------------------------------- decode

def _ln_rows(x, g, b, eps):
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * g + b


def decode_steps(kc, vc, lens, x_last, out_tokens, uniforms, inv_temp,
                 wq, bq, wk, bk, wv, bv, wo, bo,
                 ln1g, ln1b, ln2g, ln2b, w1, b1, w2, b2,
                 lnfg, lnfb, head_w, head_b,
                 speech_emb, pos_emb, n_heads, eps):
    """Batched incremental decoding with per-sample KV caches.

    kc/vc are (B, N, Tmax, D); lens holds each sample's current length and is
    advanced in place. x_last is the residual-stream output at each sample's
    final context position. inv_temp <= 0 selects greedy decoding.
    """
    bsz, n_layers, _, d = kc.shape
    out_len = out_tokens.shape[1]
    dh = d // n_heads
    batch_idx = np.arange(bsz)
    for step in range(out_len):
        logits = _ln_rows(x_last, lnfg, lnfb, eps) @ head_w + head_b
        if inv_temp <= 0.0:
            toks = logits.argmax(axis=1)
        else:
            probs = softmax_fwd(logits * inv_temp)
            cum = np.cumsum(probs, axis=1)
            u = uniforms[:, step] * cum[:, -1]
            toks = np.minimum(
                (cum < u[:, None]).sum(axis=1), probs.shape[1] - 1)
        out_tokens[:, step] = toks
        if step == out_len - 1:
            break
        x = speech_emb[toks] + pos_emb[lens]
        t_hi = int(lens.max()) + 1
        valid = np.arange(t_hi)[None, :] <= lens[:, None]   # (B, t_hi)
        for l in range(n_layers):
            h = _ln_rows(x, ln1g[l], ln1b[l], eps)
            q = h @ wq[l] + bq[l]
            k = h @ wk[l] + bk[l]
            v = h @ wv[l] + bv[l]
            kc[batch_idx, l, lens] = k
            vc[batch_idx, l, lens] = v
            ks = kc[:, l, :t_hi].reshape(bsz, t_hi, n_heads, dh)
            vs = vc[:, l, :t_hi].reshape(bsz, t_hi, n_heads, dh)
            qh = q.reshape(bsz, n_heads, dh)
            scores = np.einsum("bhd,bthd->bht", qh, ks) / np.sqrt(dh)
            scores = np.where(valid[:, None, :], scores, -1e30)
            attn = softmax_fwd(scores.reshape(bsz * n_heads, t_hi))
            attn = attn.reshape(bsz, n_heads, t_hi)
            ctx = np.einsum("bht,bthd->bhd", attn, vs).reshape(bsz, d)
            x = x + ctx @ wo[l] + bo[l]
            h2 = _ln_rows(x, ln2g[l], ln2b[l], eps)
            f = np.maximum(h2 @ w1[l] + b1[l], 0.0) @ w2[l] + b2[l]
            x = x + f
        x_last = x
        lens += 1
    return out_tokens

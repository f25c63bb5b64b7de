"""Numba @njit implementations of the hot kernels.

Loop-style twins of _numpy_impl with identical signatures and semantics.
No fastmath and no prange: kernel output must be reproducible run-to-run.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def ln_fwd(x, g, b, eps):
    r, d = x.shape
    y = np.empty_like(x)
    mean = np.empty_like(x[:, 0])
    rstd = np.empty_like(x[:, 0])
    for i in range(r):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mu = s / d
        sv = 0.0
        for j in range(d):
            dv = x[i, j] - mu
            sv += dv * dv
        rs = 1.0 / np.sqrt(sv / d + eps)
        mean[i] = mu
        rstd[i] = rs
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * rs * g[j] + b[j]
    return y, mean, rstd


@njit(cache=True)
def ln_bwd(dy, x, g, mean, rstd):
    r, d = x.shape
    dx = np.empty_like(x)
    dg = np.zeros_like(g)
    db = np.zeros_like(g)
    for i in range(r):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xh = (x[i, j] - mean[i]) * rstd[i]
            dxh = dy[i, j] * g[j]
            m1 += dxh
            m2 += dxh * xh
            dg[j] += dy[i, j] * xh
            db[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xh = (x[i, j] - mean[i]) * rstd[i]
            dx[i, j] = rstd[i] * (dy[i, j] * g[j] - m1 - xh * m2)
    return dx, dg, db


@njit(cache=True)
def softmax_fwd(x):
    r, d = x.shape
    y = np.empty_like(x)
    for i in range(r):
        mx = x[i, 0]
        for j in range(1, d):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(d):
            e = np.exp(x[i, j] - mx)
            y[i, j] = e
            s += e
        for j in range(d):
            y[i, j] /= s
    return y


@njit(cache=True)
def softmax_causal_fwd(x, valid):
    r, t = x.shape
    y = np.zeros_like(x)
    for i in range(r):
        n = valid[i]
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            e = np.exp(x[i, j] - mx)
            y[i, j] = e
            s += e
        for j in range(n):
            y[i, j] /= s
    return y


@njit(cache=True)
def softmax_bwd(dy, y):
    r, d = y.shape
    dx = np.empty_like(y)
    for i in range(r):
        inner = 0.0
        for j in range(d):
            inner += dy[i, j] * y[i, j]
        for j in range(d):
            dx[i, j] = y[i, j] * (dy[i, j] - inner)
    return dx


@njit(cache=True)
def ce_fwd(logits, targets):
    r, d = logits.shape
    probs = np.empty_like(logits)
    losses = np.empty_like(logits[:, 0])
    for i in range(r):
        mx = logits[i, 0]
        for j in range(1, d):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        for j in range(d):
            e = np.exp(logits[i, j] - mx)
            probs[i, j] = e
            s += e
        for j in range(d):
            probs[i, j] /= s
        losses[i] = np.log(s) + mx - logits[i, targets[i]]
    return losses, probs


@njit(cache=True)
def ce_bwd(probs, targets, scale):
    r, d = probs.shape
    dlogits = np.empty_like(probs)
    for i in range(r):
        for j in range(d):
            dlogits[i, j] = probs[i, j] * scale
        dlogits[i, targets[i]] -= scale
    return dlogits


@njit(cache=True)
def _im2col(x, width, stride, pad_left, pad_right):
    bsz, t, ci = x.shape
    to = (t + pad_left + pad_right - width) // stride + 1
    cols = np.zeros((bsz * to, width * ci), dtype=x.dtype)
    for n in range(bsz):
        for ot in range(to):
            row = n * to + ot
            start = ot * stride - pad_left
            for wi in range(width):
                it = start + wi
                if 0 <= it < t:
                    base = wi * ci
                    for ic in range(ci):
                        cols[row, base + ic] = x[n, it, ic]
    return cols, to


@njit(cache=True)
def conv1d_fwd(x, w, b, stride, pad_left, pad_right):
    bsz, t, ci = x.shape
    width, _, co = w.shape
    cols, to = _im2col(x, width, stride, pad_left, pad_right)
    y2 = np.dot(cols, np.ascontiguousarray(w.reshape(width * ci, co)))
    for r in range(y2.shape[0]):
        for oc in range(co):
            y2[r, oc] += b[oc]
    return y2.reshape(bsz, to, co)


@njit(cache=True)
def conv1d_bwd(dy, x, w, stride, pad_left, pad_right):
    bsz, t, ci = x.shape
    width, _, co = w.shape
    to = dy.shape[1]
    cols, _ = _im2col(x, width, stride, pad_left, pad_right)
    dy2 = np.ascontiguousarray(dy.reshape(bsz * to, co))
    w2 = np.ascontiguousarray(w.reshape(width * ci, co))
    dw = np.dot(np.ascontiguousarray(cols.T), dy2).reshape(width, ci, co)
    db = np.zeros_like(w[0, 0])
    for r in range(dy2.shape[0]):
        for oc in range(co):
            db[oc] += dy2[r, oc]
    dcols = np.dot(dy2, np.ascontiguousarray(w2.T))
    dx = np.zeros_like(x)
    for n in range(bsz):
        for ot in range(to):
            row = n * to + ot
            start = ot * stride - pad_left
            for wi in range(width):
                it = start + wi
                if 0 <= it < t:
                    base = wi * ci
                    for ic in range(ci):
                        dx[n, it, ic] += dcols[row, base + ic]
    return dx, dw, db


@njit(cache=True)
def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    n = p.shape[0]
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)


@njit(cache=True)
def sample_speech(g_rows, bias, trans, gamma, inv_tau, uniforms):
    t_a, v_s = g_rows.shape
    out = np.empty(t_a, dtype=np.int64)
    logits = np.empty(v_s, dtype=np.float64)
    prev = 0
    for t in range(t_a):
        mx = -1e300
        for j in range(v_s):
            val = (g_rows[t, j] + bias[j] + gamma * trans[prev, j]) * inv_tau
            logits[j] = val
            if val > mx:
                mx = val
        total = 0.0
        for j in range(v_s):
            logits[j] = np.exp(logits[j] - mx)
            total += logits[j]
        u = uniforms[t] * total
        acc = 0.0
        tok = v_s - 1
        for j in range(v_s):
            acc += logits[j]
            if acc >= u:
                tok = j
                break
        out[t] = tok
        prev = tok
    return out


@njit(cache=True)
def token_loglik_sum(speech, g_rows, bias, trans, prevs, gamma, inv_tau):
    t_a, v_s = g_rows.shape
    total = 0.0
    for t in range(t_a):
        prev = prevs[t]
        mx = -1e300
        for j in range(v_s):
            val = (g_rows[t, j] + bias[j] + gamma * trans[prev, j]) * inv_tau
            if val > mx:
                mx = val
        s = 0.0
        for j in range(v_s):
            s += np.exp((g_rows[t, j] + bias[j] + gamma * trans[prev, j]) * inv_tau - mx)
        obs = (g_rows[t, speech[t]] + bias[speech[t]]
               + gamma * trans[prev, speech[t]]) * inv_tau
        total += obs - (np.log(s) + mx)
    return total


@njit(cache=True)
def text_scores(speech, prevs, content, bias, trans, gamma, inv_tau):
    t_a = speech.shape[0]
    v_t, v_s = content.shape
    scores = np.empty((t_a, v_t), dtype=np.float64)
    for t in range(t_a):
        prev = prevs[t]
        for c in range(v_t):
            mx = -1e300
            for j in range(v_s):
                val = (content[c, j] + bias[j] + gamma * trans[prev, j]) * inv_tau
                if val > mx:
                    mx = val
            s = 0.0
            for j in range(v_s):
                s += np.exp((content[c, j] + bias[j]
                             + gamma * trans[prev, j]) * inv_tau - mx)
            obs = (content[c, speech[t]] + bias[speech[t]]
                   + gamma * trans[prev, speech[t]]) * inv_tau
            scores[t, c] = obs - (np.log(s) + mx)
    return scores


@njit(cache=True)
def _ln_vec(x, g, b, eps, out):
    d = x.shape[0]
    s = 0.0
    for j in range(d):
        s += x[j]
    mu = s / d
    sv = 0.0
    for j in range(d):
        dv = x[j] - mu
        sv += dv * dv
    rs = 1.0 / np.sqrt(sv / d + eps)
    for j in range(d):
        out[j] = (x[j] - mu) * rs * g[j] + b[j]


@njit(cache=True)
def decode_steps(kc, vc, lens, x_last, out_tokens, uniforms, inv_temp,
                 wq, bq, wk, bk, wv, bv, wo, bo,
                 ln1g, ln1b, ln2g, ln2b, w1, b1, w2, b2,
                 lnfg, lnfb, head_w, head_b,
                 speech_emb, pos_emb, n_heads, eps):
    bsz, n_layers, tmax, d = kc.shape
    out_len = out_tokens.shape[1]
    dh = d // n_heads
    vocab = head_w.shape[1]
    scale = 1.0 / np.sqrt(dh)
    h = np.empty(d, dtype=x_last.dtype)
    ctx = np.empty(d, dtype=x_last.dtype)
    scores = np.empty(tmax, dtype=np.float64)
    for step in range(out_len):
        for i in range(bsz):
            _ln_vec(x_last[i], lnfg, lnfb, eps, h)
            logits = np.dot(h, head_w) + head_b
            if inv_temp <= 0.0:
                tok = 0
                best = logits[0]
                for j in range(1, vocab):
                    if logits[j] > best:
                        best = logits[j]
                        tok = j
            else:
                mx = logits[0] * inv_temp
                for j in range(1, vocab):
                    val = logits[j] * inv_temp
                    if val > mx:
                        mx = val
                total = 0.0
                for j in range(vocab):
                    e = np.exp(logits[j] * inv_temp - mx)
                    logits[j] = e
                    total += e
                u = uniforms[i, step] * total
                acc = 0.0
                tok = vocab - 1
                for j in range(vocab):
                    acc += logits[j]
                    if acc >= u:
                        tok = j
                        break
            out_tokens[i, step] = tok
        if step == out_len - 1:
            break
        for i in range(bsz):
            pos = lens[i]
            tok = out_tokens[i, step]
            x = speech_emb[tok] + pos_emb[pos]
            for l in range(n_layers):
                _ln_vec(x, ln1g[l], ln1b[l], eps, h)
                q = np.dot(h, wq[l]) + bq[l]
                k = np.dot(h, wk[l]) + bk[l]
                v = np.dot(h, wv[l]) + bv[l]
                for j in range(d):
                    kc[i, l, pos, j] = k[j]
                    vc[i, l, pos, j] = v[j]
                for hd in range(n_heads):
                    base = hd * dh
                    mx = -1e300
                    for t in range(pos + 1):
                        s = 0.0
                        for j in range(dh):
                            s += q[base + j] * kc[i, l, t, base + j]
                        s *= scale
                        scores[t] = s
                        if s > mx:
                            mx = s
                    total = 0.0
                    for t in range(pos + 1):
                        e = np.exp(scores[t] - mx)
                        scores[t] = e
                        total += e
                    for j in range(dh):
                        acc = 0.0
                        for t in range(pos + 1):
                            acc += scores[t] * vc[i, l, t, base + j]
                        ctx[base + j] = acc / total
                x = x + np.dot(ctx, wo[l]) + bo[l]
                _ln_vec(x, ln2g[l], ln2b[l], eps, h)
                u1 = np.dot(h, w1[l]) + b1[l]
                for j in range(u1.shape[0]):
                    if u1[j] < 0.0:
                        u1[j] = 0.0
                x = x + np.dot(u1, w2[l]) + b2[l]
            for j in range(d):
                x_last[i, j] = x[j]
            lens[i] = pos + 1
    return out_tokens

"""Straight-line numpy reference implementations used as test oracles.

Everything here is written independently of the package's tensor engine:
plain loops and direct formulas only, so agreement is evidence rather than
tautology.
"""

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def softmax_direct(x, axis=-1):
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


def layer_norm_two_pass(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def erf_series(z, terms=40):
    """Taylor series: erf(z) = 2/sqrt(pi) * sum (-1)^n z^(2n+1) / (n! (2n+1))."""
    total = 0.0
    fact = 1.0
    for n in range(terms):
        if n > 0:
            fact *= n
        total += (-1) ** n * z ** (2 * n + 1) / (fact * (2 * n + 1))
    return 2.0 / np.sqrt(np.pi) * total


def rel_index_direct(ws):
    """Relative-position table index from first principles: token pair
    (i, j) maps to offset (ri - rj, ci - cj) shifted into [0, 2*ws-2]."""
    n = ws * ws
    idx = np.zeros((n, n), dtype=int)
    for i in range(n):
        for j in range(n):
            r1, c1 = divmod(i, ws)
            r2, c2 = divmod(j, ws)
            idx[i, j] = (r1 - r2 + ws - 1) * (2 * ws - 1) + (c1 - c2 + ws - 1)
    return idx


def shift_mask_modular(h, w, ws, shift):
    """Additive mask from pre-shift pixel origins via modular arithmetic.

    After rolling the image by -shift, the pixel at shifted coordinate c came
    from (c + shift) % size.  Coordinates are classified into three bands:
    wrapped (origin < shift), bottom (origin >= size - (ws - shift)), middle.
    Tokens attend only within identical band pairs."""
    n = ws * ws

    def band(c_shifted, size):
        origin = (c_shifted + shift) % size
        if origin < shift:
            return 2
        if origin >= size - (ws - shift):
            return 1
        return 0

    nh, nw = h // ws, w // ws
    masks = np.zeros((nh * nw, n, n))
    for wi in range(nh * nw):
        wr, wc = divmod(wi, nw)
        tags = []
        for ti in range(n):
            tr, tc = divmod(ti, ws)
            tags.append((band(wr * ws + tr, h), band(wc * ws + tc, w)))
        for i in range(n):
            for j in range(n):
                if tags[i] != tags[j]:
                    masks[wi, i, j] = -100.0
    return masks


def attention_loops(tokens, qkv_w, qkv_b, proj_w, proj_b, num_heads,
                    rel_bias=None, rel_index=None, mask=None):
    """Brute-force windowed attention: explicit loops over windows and heads.

    tokens: (b, nwin, n, d).  rel_bias: ((2ws-1)^2, heads) with rel_index
    (n, n).  mask: (nwin, n, n) additive logits.
    """
    b, nwin, n, d = tokens.shape
    dk = d // num_heads
    out = np.zeros_like(tokens)
    for bi in range(b):
        for wi in range(nwin):
            x = tokens[bi, wi]            # (n, d)
            qkv = x @ qkv_w + qkv_b       # (n, 3d)
            q_all, k_all, v_all = qkv[:, :d], qkv[:, d : 2 * d], qkv[:, 2 * d :]
            merged = np.zeros((n, d))
            for h in range(num_heads):
                sl = slice(h * dk, (h + 1) * dk)
                q, k, v = q_all[:, sl], k_all[:, sl], v_all[:, sl]
                logits = q @ k.T / np.sqrt(dk)
                if rel_bias is not None:
                    logits = logits + rel_bias[rel_index, h]
                if mask is not None:
                    logits = logits + mask[wi]
                attn = softmax_direct(logits, axis=-1)
                merged[:, sl] = attn @ v
            out[bi, wi] = merged @ proj_w + proj_b
    return out


def gelu_direct(x, erf_fn):
    return 0.5 * x * (1.0 + erf_fn(x / np.sqrt(2.0)))


def mlp_direct(x, fc1_w, fc1_b, fc2_w, fc2_b, erf_fn):
    hidden = gelu_direct(x @ fc1_w + fc1_b, erf_fn)
    return hidden @ fc2_w + fc2_b


def conv2d_loops(x, w, b=None, padding=0):
    """Direct quadruple-loop 2-D cross-correlation, channels last."""
    bs, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    ho = x.shape[1] - kh + 1
    wo = x.shape[2] - kw + 1
    out = np.zeros((bs, ho, wo, cout))
    for bi in range(bs):
        for i in range(ho):
            for j in range(wo):
                patch = x[bi, i : i + kh, j : j + kw, :]
                for co in range(cout):
                    out[bi, i, j, co] = np.sum(patch * w[:, :, :, co])
    if b is not None:
        out += b
    return out


def ssim_sliding(a, b, window, c1, c2):
    """Per-position SSIM with an explicit sliding window; returns the map."""
    k = window.shape[0]
    h, w = a.shape
    ho, wo = h - k + 1, w - k + 1
    out = np.zeros((ho, wo))
    for i in range(ho):
        for j in range(wo):
            pa = a[i : i + k, j : j + k]
            pb = b[i : i + k, j : j + k]
            mu_a = np.sum(window * pa)
            mu_b = np.sum(window * pb)
            var_a = np.sum(window * pa * pa) - mu_a**2
            var_b = np.sum(window * pb * pb) - mu_b**2
            cov = np.sum(window * pa * pb) - mu_a * mu_b
            out[i, j] = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
                (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
            )
    return out


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of scalar f at array x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, n):
    """Gradient discrepancy, relative above magnitude 1 and absolute below."""
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum.reduce([np.abs(a), np.abs(n), np.ones_like(a)])

"""Independent reference implementations used as test oracles.

These are deliberately written as direct loops / textbook formulas so they
share no code path with the library under test.
"""

import math

import numpy as np


def conv3d_loops(x, w, b=None, stride=(1, 1, 1), padding=(0, 0, 0), groups=1):
    """Direct six-nested-loop 3D cross-correlation over zero-padded input."""
    c_in, t, h, w_ext = x.shape
    c_out, c_g, kt, kh, kw = w.shape
    st, sh, sw = stride
    pt, ph, pw = padding
    xp = np.zeros((c_in, t + 2 * pt, h + 2 * ph, w_ext + 2 * pw), dtype=np.float64)
    xp[:, pt:pt + t, ph:ph + h, pw:pw + w_ext] = x
    ot = (t + 2 * pt - kt) // st + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w_ext + 2 * pw - kw) // sw + 1
    out = np.zeros((c_out, ot, oh, ow), dtype=np.float64)
    og = c_out // groups
    for o in range(c_out):
        grp = o // og
        for ti in range(ot):
            for hi in range(oh):
                for wi in range(ow):
                    acc = 0.0
                    for c in range(c_g):
                        cin = grp * c_g + c
                        for a in range(kt):
                            for bb in range(kh):
                                for cc in range(kw):
                                    acc += (xp[cin, ti * st + a, hi * sh + bb, wi * sw + cc]
                                            * w[o, c, a, bb, cc])
                    out[o, ti, hi, wi] = acc
    if b is not None:
        out += np.asarray(b, dtype=np.float64)[:, None, None, None]
    return out


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def channel_stats_two_pass(x):
    """Per-channel mean/variance of a (C,...) array computed in two explicit passes."""
    c = x.shape[0]
    flat = x.reshape(c, -1)
    means = np.array([row.sum() / row.size for row in flat])
    variances = np.array([((row - m) ** 2).sum() / row.size for row, m in zip(flat, means)])
    return means, variances


def gelu_scalar(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def cross_entropy_logsumexp(logits, targets):
    total = 0.0
    for row, t in zip(logits, targets):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[t]
    return total / len(targets)


def finite_diff(f, x, h=1e-3):
    """Central finite differences of scalar f at every coordinate of x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def finite_diff_at(f, x, coords, h=1e-3):
    """Central differences only at the given flat coordinates."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = {}
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out


def max_rel_err(analytic, numeric):
    """max over coords of |a-n| / max(1, |a|, |n|)."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / scale))

"""JIT-compiled inner loops for grouped 3D convolution.

The innermost loops run along the contiguous spatial axis so LLVM can
vectorize them. Loop order is fixed, so results are bit-reproducible run to
run. Callers check AVAILABLE and use the numpy implementation when numba is
missing.
"""

from __future__ import annotations

import math

try:
    import numba

    AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    AVAILABLE = False


if AVAILABLE:

    @numba.vectorize(["float32(float32)", "float64(float64)"], cache=True)
    def erf(x):
        return math.erf(x)

    @numba.njit(cache=True)
    def conv3d_forward(xp, w, out, st, sh, sw):
        """out (pre-zeroed) += cross-correlation of padded input with w."""
        c_out, c_g, kt, kh, kw = w.shape
        ot, oh, ow = out.shape[1], out.shape[2], out.shape[3]
        og = c_out // (xp.shape[0] // c_g)
        for o in range(c_out):
            base = (o // og) * c_g
            for c in range(c_g):
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            wv = w[o, c, i, j, k]
                            for t in range(ot):
                                for y in range(oh):
                                    src = xp[base + c, t * st + i, y * sh + j]
                                    dst = out[o, t, y]
                                    for x in range(ow):
                                        dst[x] += wv * src[x * sw + k]

    @numba.njit(cache=True)
    def conv3d_grad_w(xp, g, gw, st, sh, sw):
        c_out, c_g, kt, kh, kw = gw.shape
        ot, oh, ow = g.shape[1], g.shape[2], g.shape[3]
        og = c_out // (xp.shape[0] // c_g)
        for o in range(c_out):
            base = (o // og) * c_g
            for c in range(c_g):
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            acc = 0.0
                            for t in range(ot):
                                for y in range(oh):
                                    src = xp[base + c, t * st + i, y * sh + j]
                                    go = g[o, t, y]
                                    for x in range(ow):
                                        acc += src[x * sw + k] * go[x]
                            gw[o, c, i, j, k] = acc

    @numba.njit(cache=True)
    def conv3d_grad_x(gxp, w, g, st, sh, sw):
        """gxp (pre-zeroed, padded-input-shaped) += scattered upstream gradient."""
        c_out, c_g, kt, kh, kw = w.shape
        ot, oh, ow = g.shape[1], g.shape[2], g.shape[3]
        og = c_out // (gxp.shape[0] // c_g)
        for o in range(c_out):
            base = (o // og) * c_g
            for c in range(c_g):
                for i in range(kt):
                    for j in range(kh):
                        for k in range(kw):
                            wv = w[o, c, i, j, k]
                            for t in range(ot):
                                for y in range(oh):
                                    dst = gxp[base + c, t * st + i, y * sh + j]
                                    go = g[o, t, y]
                                    for x in range(ow):
                                        dst[x * sw + k] += wv * go[x]

"""Differentiable operations over :class:`framegrad.tensor.Tensor`.

Conventions:
  * video/token grids are channel-first: (C, T, H, W);
  * convolutions are cross-correlations over zero-padded input with floor
    output arithmetic, `out = (in + 2*pad - k) // stride + 1`;
  * broadcasting is limited to bias-add and per-channel affine inside the
    ops that need it; everything else requires exact shapes.
"""

from __future__ import annotations


from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf as _scipy_erf

from . import _kernels
from .tensor import Tensor, make_node

erf = _kernels.erf if _kernels.AVAILABLE else _scipy_erf


_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def _as3(v) -> tuple:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ShapeError(f"expected 3 extents, got {v!r}")
    return t


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _kernel_offsets(kernel):
    kt, kh, kw = kernel
    return [(i, j, k) for i in range(kt) for j in range(kh) for k in range(kw)]


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride=(1, 1, 1), padding=(0, 0, 0), groups: int = 1) -> Tensor:
    """3D cross-correlation of a (C_in,T,H,W) grid with (C_out,C_in/groups,kT,kH,kW) kernels.

    Output extents follow floor arithmetic, (n + 2p - k) // s + 1. Pointwise
    kernels (1x1x1, stride 1, no padding, groups 1) run as one matrix
    product; depthwise kernels (groups == C_in == C_out) use shift-and-add
    accumulation, which avoids materializing im2col buffers.
    """
    stride, padding = _as3(stride), _as3(padding)
    if x.ndim != 4:
        raise ShapeError(f"conv3d input must be rank 4 (C,T,H,W), got rank {x.ndim}")
    if weight.ndim != 5:
        raise ShapeError(f"conv3d weight must be rank 5, got rank {weight.ndim}")
    c_in = x.shape[0]
    c_out, c_g = weight.shape[0], weight.shape[1]
    if groups < 1 or c_in % groups != 0:
        raise ShapeError(f"input channels {c_in} not divisible by groups {groups}")
    if c_out % groups != 0:
        raise ShapeError(f"output channels {c_out} not divisible by groups {groups}")
    if c_g != c_in // groups:
        raise ShapeError(f"weight expects {c_g} channels per group, input provides {c_in // groups}")
    kernel = tuple(weight.shape[2:])
    out_extent = []
    for name, n, k, s, p in zip("THW", x.shape[1:], kernel, stride, padding):
        if k > n + 2 * p:
            raise ShapeError(f"kernel extent {k} exceeds padded input extent {n + 2 * p} along {name}")
        out_extent.append((n + 2 * p - k) // s + 1)
    ot, oh, ow = out_extent
    if min(out_extent) < 1:
        raise ShapeError(f"non-positive output extents {tuple(out_extent)}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match output channels {c_out}")

    pointwise = kernel == (1, 1, 1) and stride == (1, 1, 1) and padding == (0, 0, 0) and groups == 1
    depthwise = groups == c_in and c_out == c_in and groups > 1
    st, sh, sw = stride

    if pointwise:
        xp = None
        out = (weight.data.reshape(c_out, c_in) @ x.data.reshape(c_in, -1)).reshape(c_out, *x.shape[1:])
    else:
        xp = np.pad(x.data, ((0, 0), (padding[0],) * 2, (padding[1],) * 2, (padding[2],) * 2))
        if depthwise and _kernels.AVAILABLE:
            out = np.zeros((c_out, ot, oh, ow), dtype=x.dtype)
            _kernels.conv3d_forward(xp, weight.data, out, st, sh, sw)
        elif depthwise:
            out = np.zeros((c_in, ot, oh, ow), dtype=x.dtype)
            for i, j, k in _kernel_offsets(kernel):
                out += weight.data[:, 0, i, j, k, None, None, None] \
                    * xp[:, i:i + ot * st:st, j:j + oh * sh:sh, k:k + ow * sw:sw]
        else:
            win = sliding_window_view(xp, kernel, axis=(1, 2, 3))[:, ::st, ::sh, ::sw]
            if groups == 1:
                out = np.moveaxis(np.tensordot(win, weight.data, axes=([0, 4, 5, 6], [1, 2, 3, 4])), 3, 0)
            else:
                out = np.empty((c_out, ot, oh, ow), dtype=x.dtype)
                og = c_out // groups
                for gi in range(groups):
                    out[gi * og:(gi + 1) * og] = np.moveaxis(np.tensordot(
                        win[gi * c_g:(gi + 1) * c_g], weight.data[gi * og:(gi + 1) * og],
                        axes=([0, 4, 5, 6], [1, 2, 3, 4])), 3, 0)
    if bias is not None:
        out = out + bias.data[:, None, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)
    node = make_node(out, parents)
    if node.requires_grad:

        def backward(g, acc, x=x, weight=weight, bias=bias, xp=xp):
            og = c_out // groups
            if bias is not None and bias.requires_grad:
                acc(bias, g.sum(axis=(1, 2, 3)))
            if weight.requires_grad:
                if pointwise:
                    gw = (g.reshape(c_out, -1) @ x.data.reshape(c_in, -1).T).reshape(weight.shape)
                elif depthwise and _kernels.AVAILABLE:
                    gw = np.zeros_like(weight.data)
                    _kernels.conv3d_grad_w(xp, g, gw, st, sh, sw)
                elif depthwise:
                    gw = np.empty_like(weight.data)
                    for i, j, k in _kernel_offsets(kernel):
                        gw[:, 0, i, j, k] = np.einsum(
                            "cthw,cthw->c", g,
                            xp[:, i:i + ot * st:st, j:j + oh * sh:sh, k:k + ow * sw:sw])
                else:
                    win = sliding_window_view(xp, kernel, axis=(1, 2, 3))[:, ::st, ::sh, ::sw]
                    if groups == 1:
                        gw = np.moveaxis(np.tensordot(win, g, axes=([1, 2, 3], [1, 2, 3])), 4, 0)
                    else:
                        gw = np.empty_like(weight.data)
                        for gi in range(groups):
                            gw[gi * og:(gi + 1) * og] = np.moveaxis(np.tensordot(
                                win[gi * c_g:(gi + 1) * c_g], g[gi * og:(gi + 1) * og],
                                axes=([1, 2, 3], [1, 2, 3])), 4, 0)
                acc(weight, gw)
            if x.requires_grad:
                if pointwise:
                    gx = (weight.data.reshape(c_out, c_in).T @ g.reshape(c_out, -1)).reshape(x.shape)
                elif depthwise and _kernels.AVAILABLE:
                    gxp = np.zeros_like(xp)
                    _kernels.conv3d_grad_x(gxp, weight.data, g, st, sh, sw)
                    t, h, w = x.shape[1:]
                    gx = gxp[:, padding[0]:padding[0] + t, padding[1]:padding[1] + h,
                             padding[2]:padding[2] + w]
                else:
                    gxp = np.zeros_like(xp)
                    for i, j, k in _kernel_offsets(kernel):
                        view = gxp[:, i:i + ot * st:st, j:j + oh * sh:sh, k:k + ow * sw:sw]
                        if depthwise:
                            view += weight.data[:, 0, i, j, k, None, None, None] * g
                        elif groups == 1:
                            view += (weight.data[:, :, i, j, k].T @ g.reshape(c_out, -1)).reshape(
                                c_in, ot, oh, ow)
                        else:
                            for gi in range(groups):
                                view[gi * c_g:(gi + 1) * c_g] += (
                                    weight.data[gi * og:(gi + 1) * og, :, i, j, k].T
                                    @ g[gi * og:(gi + 1) * og].reshape(og, -1)
                                ).reshape(c_g, ot, oh, ow)
                    t, h, w = x.shape[1:]
                    gx = gxp[:, padding[0]:padding[0] + t, padding[1]:padding[1] + h,
                             padding[2]:padding[2] + w]
                acc(x, np.ascontiguousarray(gx))

        node._backward = backward
    return node


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

class RunningStats:
    """Mutable per-channel mean/variance pair updated by batch_norm in train mode."""

    __slots__ = ("mean", "var")

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x: Tensor, scale: Tensor, shift: Tensor, running: RunningStats,
               training: bool, momentum: float = 0.1, epsilon: float = 1e-5) -> Tensor:
    """Per-channel normalization over all non-channel axes of a (C,...) tensor.

    Train mode uses the current batch statistics (population variance) and
    folds them into ``running`` with an exponential moving average; eval mode
    normalizes by the running statistics.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    c = x.shape[0]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"scale/shift must have shape ({c},)")
    axes = tuple(range(1, x.ndim))
    expand = (slice(None),) + (None,) * (x.ndim - 1)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running.mean[...] = (1.0 - momentum) * running.mean + momentum * mu
        running.var[...] = (1.0 - momentum) * running.var + momentum * var
    else:
        mu = running.mean.astype(x.dtype, copy=False)
        var = running.var.astype(x.dtype, copy=False)
    inv = 1.0 / np.sqrt(var + np.asarray(epsilon, dtype=x.dtype))
    xhat = (x.data - mu[expand]) * inv[expand]
    out = scale.data[expand] * xhat + shift.data[expand]

    node = make_node(out, (x, scale, shift))
    if node.requires_grad:
        m = int(np.prod(x.shape[1:])) if x.ndim > 1 else 1

        def backward(g, acc, x=x, scale=scale, shift=shift, xhat=xhat, inv=inv):
            if shift.requires_grad:
                acc(shift, g.sum(axis=axes))
            if scale.requires_grad:
                acc(scale, (g * xhat).sum(axis=axes))
            if x.requires_grad:
                coeff = (scale.data * inv)[expand]
                if training:
                    g_mean = g.mean(axis=axes)[expand]
                    gx_mean = (g * xhat).mean(axis=axes)[expand]
                    acc(x, coeff * (g - g_mean - xhat * gx_mean))
                else:
                    acc(x, coeff * g)

        node._backward = backward
    return node


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, epsilon: float = 1e-5,
               axis: int = -1) -> Tensor:
    """Normalize each token across its feature axis, then apply per-feature affine."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    axis = axis % x.ndim
    c = x.shape[axis]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(f"scale/shift must have shape ({c},) to match axis {axis}")
    expand = tuple(slice(None) if a == axis else None for a in range(x.ndim))
    mu = x.data.mean(axis=axis, keepdims=True)
    var = x.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(epsilon, dtype=x.dtype))
    xhat = (x.data - mu) * inv
    out = scale.data[expand] * xhat + shift.data[expand]

    node = make_node(out, (x, scale, shift))
    if node.requires_grad:
        other_axes = tuple(a for a in range(x.ndim) if a != axis)

        def backward(g, acc, x=x, scale=scale, shift=shift, xhat=xhat, inv=inv):
            if shift.requires_grad:
                acc(shift, g.sum(axis=other_axes))
            if scale.requires_grad:
                acc(scale, (g * xhat).sum(axis=other_axes))
            if x.requires_grad:
                gs = g * scale.data[expand]
                g_mean = gs.mean(axis=axis, keepdims=True)
                gx_mean = (gs * xhat).mean(axis=axis, keepdims=True)
                acc(x, inv * (gs - g_mean - xhat * gx_mean))

        node._backward = backward
    return node


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def gelu(x: Tensor) -> Tensor:
    """x * Phi(x) with the exact erf formulation."""
    cdf = 0.5 * (1.0 + erf(x.data * np.asarray(_SQRT1_2, dtype=x.dtype)))
    node = make_node(x.data * cdf, (x,))
    if node.requires_grad:

        def backward(g, acc, x=x, cdf=cdf):
            pdf = np.asarray(_INV_SQRT_2PI, dtype=x.dtype) * np.exp(-0.5 * x.data * x.data)
            acc(x, g * (cdf + x.data * pdf))

        node._backward = backward
    return node


def relu(x: Tensor) -> Tensor:
    node = make_node(np.maximum(x.data, 0), (x,))
    if node.requires_grad:

        def backward(g, acc, x=x):
            acc(x, g * (x.data > 0))

        node._backward = backward
    return node


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    node = make_node(s, (x,))
    if node.requires_grad:

        def backward(g, acc, x=x, s=s):
            inner = (g * s).sum(axis=axis, keepdims=True)
            acc(x, s * (g - inner))

        node._backward = backward
    return node


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dimensions must match exactly."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least rank 2")
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"batch dims differ: {a.shape[:-2]} vs {b.shape[:-2]}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner extents differ: {a.shape[-1]} vs {b.shape[-2]}")
    node = make_node(a.data @ b.data, (a, b))
    if node.requires_grad:

        def backward(g, acc, a=a, b=b):
            if a.requires_grad:
                acc(a, g @ b.data.swapaxes(-1, -2))
            if b.requires_grad:
                acc(b, a.data.swapaxes(-1, -2) @ g)

        node._backward = backward
    return node


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map of row vectors: (N,in) @ (out,in)^T + bias. Accepts 1-D input too."""
    squeeze = x.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    if xd.ndim != 2:
        raise ShapeError(f"linear input must be rank 1 or 2, got rank {x.ndim}")
    if weight.ndim != 2 or weight.shape[1] != xd.shape[1]:
        raise ShapeError(f"weight shape {weight.shape} incompatible with input features {xd.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match output features {weight.shape[0]}")
    out = xd @ weight.data.T
    if bias is not None:
        out = out + bias.data
    if squeeze:
        out = out[0]
    parents = (x, weight) if bias is None else (x, weight, bias)
    node = make_node(out, parents)
    if node.requires_grad:

        def backward(g, acc, x=x, weight=weight, bias=bias):
            g2 = g[None, :] if squeeze else g
            xd2 = x.data[None, :] if squeeze else x.data
            if bias is not None and bias.requires_grad:
                acc(bias, g2.sum(axis=0))
            if weight.requires_grad:
                acc(weight, g2.T @ xd2)
            if x.requires_grad:
                gx = g2 @ weight.data
                acc(x, gx[0] if squeeze else gx)

        node._backward = backward
    return node


# ---------------------------------------------------------------------------
# reductions and pooling
# ---------------------------------------------------------------------------

def avg_pool_all(x: Tensor) -> Tensor:
    """Global average over every non-channel axis: (C, ...) -> (C,)."""
    axes = tuple(range(1, x.ndim))
    out = x.data.mean(axis=axes) if axes else x.data.copy()
    node = make_node(out, (x,))
    if node.requires_grad:
        count = int(np.prod(x.shape[1:])) if x.ndim > 1 else 1
        expand = (slice(None),) + (None,) * (x.ndim - 1)

        def backward(g, acc, x=x):
            acc(x, np.broadcast_to(g[expand] / count, x.shape).astype(x.dtype, copy=False))

        node._backward = backward
    return node


def mean_all(x: Tensor) -> Tensor:
    node = make_node(np.asarray(x.data.mean(), dtype=x.dtype), (x,))
    if node.requires_grad:

        def backward(g, acc, x=x):
            acc(x, np.full(x.shape, g / x.size, dtype=x.dtype))

        node._backward = backward
    return node


def sum_all(x: Tensor) -> Tensor:
    node = make_node(np.asarray(x.data.sum(), dtype=x.dtype), (x,))
    if node.requires_grad:

        def backward(g, acc, x=x):
            acc(x, np.full(x.shape, g, dtype=x.dtype))

        node._backward = backward
    return node


def max_pool2d(x: Tensor, k: int = 2) -> Tensor:
    """Non-overlapping (k,k) max pooling of a (C,H,W) map; H and W must divide by k."""
    if x.ndim != 3:
        raise ShapeError(f"max_pool2d input must be rank 3 (C,H,W), got rank {x.ndim}")
    c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"spatial extents ({h},{w}) not divisible by pool size {k}")
    hw = x.data.reshape(c, h // k, k, w // k, k).transpose(0, 1, 3, 2, 4).reshape(c, h // k, w // k, k * k)
    idx = hw.argmax(axis=-1)
    out = np.take_along_axis(hw, idx[..., None], axis=-1)[..., 0]
    node = make_node(out, (x,))
    if node.requires_grad:

        def backward(g, acc, x=x, idx=idx):
            gw = np.zeros((c, h // k, w // k, k * k), dtype=x.dtype)
            np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
            gx = gw.reshape(c, h // k, w // k, k, k).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
            acc(x, gx)

        node._backward = backward
    return node


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    node = make_node(x.data.reshape(shape), (x,))
    if node.requires_grad:

        def backward(g, acc, x=x):
            acc(x, np.ascontiguousarray(g).reshape(x.shape))

        node._backward = backward
    return node


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"axes {axes} is not a permutation of rank {x.ndim}")
    node = make_node(np.ascontiguousarray(x.data.transpose(axes)), (x,))
    if node.requires_grad:
        inverse = tuple(np.argsort(axes))

        def backward(g, acc, x=x):
            acc(x, np.ascontiguousarray(g.transpose(inverse)))

        node._backward = backward
    return node


def pad_axis(x: Tensor, axis: int, after: int) -> Tensor:
    """Zero-pad the end of one axis."""
    if after < 0:
        raise ShapeError("pad amount must be non-negative")
    pads = [(0, 0)] * x.ndim
    pads[axis] = (0, after)
    node = make_node(np.pad(x.data, pads), (x,))
    if node.requires_grad:
        index = tuple(slice(0, x.shape[a]) if a == axis else slice(None) for a in range(x.ndim))

        def backward(g, acc, x=x):
            acc(x, np.ascontiguousarray(g[index]))

        node._backward = backward
    return node


def select(x: Tensor, index: int) -> Tensor:
    """Pick one element of a rank-1 tensor as a scalar node."""
    if x.ndim != 1:
        raise ShapeError(f"select expects a rank-1 tensor, got rank {x.ndim}")
    if not 0 <= index < x.shape[0]:
        raise IndexError(f"index {index} out of range for extent {x.shape[0]}")
    node = make_node(np.asarray(x.data[index], dtype=x.dtype), (x,))
    if node.requires_grad:

        def backward(g, acc, x=x):
            gx = np.zeros(x.shape, dtype=x.dtype)
            gx[index] = g
            acc(x, gx)

        node._backward = backward
    return node


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean of -log softmax(logits)[target] over the batch, max-stabilized."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (N,K) logits, got rank {logits.ndim}")
    t = np.asarray(targets, dtype=np.int64)
    n, k = logits.shape
    if t.shape != (n,):
        raise ShapeError(f"targets shape {t.shape} does not match batch {n}")
    if t.min() < 0 or t.max() >= k:
        raise IndexError(f"target class out of range [0,{k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = np.asarray((lse - z[np.arange(n), t]).mean(), dtype=logits.dtype)
    node = make_node(loss, (logits,))
    if node.requires_grad:

        def backward(g, acc, logits=logits, z=z, t=t):
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(n), t] -= 1.0
            acc(logits, g * p / n)

        node._backward = backward
    return node

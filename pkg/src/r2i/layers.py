"""Differentiable building blocks: convolutions, batch norm, binarizer.

All image tensors are logically N x C x H x W but the convolutions hand back
channels-last (NHWC) storage, which is what the GEMMs want on both passes.
Stride-1 convolutions avoid im2col altogether: on the flattened padded image
each kernel tap is a fixed row offset.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .tensor import Tensor, add, concat, crop, make, relu, sub, tanh

__all__ = [
    "ConvSpec", "conv2d", "deconv2d", "deconv2d_depthwise", "batch_norm", "binarize",
    "multiscale_layer", "elementwise", "concat", "crop", "relu", "tanh", "BN_EPS", "BN_MOMENTUM",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

BINARIZER_MODES = ("stochastic", "deterministic", "relaxed")


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple = (3, 3)
    stride: int = 1
    dilation: int = 1
    padding: int = None
    has_bias: bool = False

    def __post_init__(self):
        if self.padding is None:
            # spatial-preserving for odd kernels at stride 1
            pad = self.dilation * (self.kernel[0] // 2)
            object.__setattr__(self, "padding", pad)

    def output_size(self, h, w):
        kh, kw = self.kernel
        d, s, p = self.dilation, self.stride, self.padding
        return ((h + 2 * p - d * (kh - 1) - 1) // s + 1,
                (w + 2 * p - d * (kw - 1) - 1) // s + 1)

    @property
    def fan_in(self):
        return self.in_channels * self.kernel[0] * self.kernel[1]

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels) + tuple(self.kernel)


def _nhwc(a):
    """NHWC view of a logical NCHW array (contiguous when stored channels-last)."""
    return a.transpose(0, 2, 3, 1)


def _padded(xh, p):
    n, h, w, c = xh.shape
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=xh.dtype)
    xp[:, p:p + h, p:p + w] = xh
    return xp


def _conv_shift(x, spec, weight, bias):
    # Stride 1: on the flattened padded image every kernel tap is a constant
    # row offset, so each tap is one GEMM on a contiguous slice.
    n, c, h, w = x.shape
    kh, kw = spec.kernel
    d, p = spec.dilation, spec.padding
    ho, wo = spec.output_size(h, w)
    hp, wp = h + 2 * p, w + 2 * p
    xf = _padded(_nhwc(x.data), p).reshape(-1, c)
    taps = [(i, j, i * d * wp + j * d) for i in range(kh) for j in range(kw)]
    q = n * hp * wp - taps[-1][2]
    wt = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0))  # kh, kw, Cin, Cout
    cout = spec.out_channels
    full = np.zeros((n * hp * wp, cout), dtype=x.dtype)
    for i, j, off in taps:
        full[:q] += xf[off:off + q] @ wt[i, j]
    if bias is not None:
        full += bias.data
    out = full.reshape(n, hp, wp, cout)[:, :ho, :wo].transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gf = np.zeros((n, hp, wp, cout), dtype=g.dtype)
        gf[:, :ho, :wo] = _nhwc(g)
        gf = gf.reshape(-1, cout)
        gq = gf[:q]
        dw = None
        if weight.requires_grad:
            dwt = np.empty(wt.shape, dtype=g.dtype)
            for i, j, off in taps:
                dwt[i, j] = xf[off:off + q].T @ gq
            dw = dwt.transpose(3, 2, 0, 1)
        dx = None
        if x.requires_grad:
            dxf = np.zeros_like(xf)
            for i, j, off in taps:
                dxf[off:off + q] += gq @ wt[i, j].T
            dx = dxf.reshape(n, hp, wp, c)[:, p:p + h, p:p + w].transpose(0, 3, 1, 2)
        if bias is None:
            return dx, dw
        return dx, dw, gf.sum(axis=0)

    return make(out, parents, bw, "conv2d")


def _conv_im2col(x, spec, weight, bias):
    n, c, h, w = x.shape
    kh, kw = spec.kernel
    s, d, p = spec.stride, spec.dilation, spec.padding
    ho, wo = spec.output_size(h, w)
    xp = _padded(_nhwc(x.data), p)
    hspan, wspan = s * (ho - 1) + 1, s * (wo - 1) + 1
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j] = xp[:, i * d:i * d + hspan:s, j * d:j * d + wspan:s]
    cols = cols.reshape(n * ho * wo, kh * kw * c)
    cout = spec.out_channels
    wmat = np.ascontiguousarray(weight.data.transpose(2, 3, 1, 0)).reshape(-1, cout)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gmat = np.ascontiguousarray(_nhwc(g)).reshape(-1, cout)
        dw = None
        if weight.requires_grad:
            dw = (cols.T @ gmat).reshape(kh, kw, c, cout).transpose(3, 2, 0, 1)
        dx = None
        if x.requires_grad:
            dcols = (gmat @ wmat.T).reshape(n, ho, wo, kh, kw, c)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i * d:i * d + hspan:s, j * d:j * d + wspan:s] += dcols[:, :, :, i, j]
            dx = dxp[:, p:p + h, p:p + w].transpose(0, 3, 1, 2)
        if bias is None:
            return dx, dw
        return dx, dw, gmat.sum(axis=0)

    return make(out, parents, bw, "conv2d")


def conv2d(x, spec, weight, bias=None):
    """Cross-correlation of ``x`` with ``weight`` per ``spec``."""
    n, c, h, w = x.shape
    if c != spec.in_channels:
        raise InvalidArgument(f"conv2d expects {spec.in_channels} input channels, got {c}")
    if tuple(weight.shape) != spec.weight_shape:
        raise InvalidArgument(f"conv2d weight shape {weight.shape} != {spec.weight_shape}")
    ho, wo = spec.output_size(h, w)
    if ho <= 0 or wo <= 0:
        raise InvalidArgument(f"conv2d output would be empty for input {h}x{w}")
    if spec.stride == 1:
        return _conv_shift(x, spec, weight, bias)
    return _conv_im2col(x, spec, weight, bias)


def deconv2d(x, weight, groups=1):
    """2x2, stride-2 transposed convolution (no bias).

    ``weight`` has shape (C_in, C_out // groups, 2, 2).  With stride equal to
    the kernel size the output blocks do not overlap, so every input pixel
    expands to its own 2x2 block.
    """
    n, c, h, w = x.shape
    if weight.ndim != 4 or weight.shape[0] != c or weight.shape[2:] != (2, 2):
        raise InvalidArgument(f"deconv2d weight shape {weight.shape} incompatible with {c} channels")
    if groups == c and weight.shape[1] == 1:
        return deconv2d_depthwise(x, weight)
    if groups != 1:
        raise InvalidArgument("deconv2d supports groups=1 or groups=channels")
    cout = weight.shape[1]
    xm = np.ascontiguousarray(_nhwc(x.data)).reshape(-1, c)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(c, 4 * cout)  # Cin, (a, b, Cout)
    y = (xm @ wmat).reshape(n, h, w, 2, 2, cout)
    out = y.transpose(0, 1, 3, 2, 4, 5).reshape(n, 2 * h, 2 * w, cout).transpose(0, 3, 1, 2)

    def bw(g):
        gm = _nhwc(g).reshape(n, h, 2, w, 2, cout).transpose(0, 1, 3, 2, 4, 5).reshape(-1, 4 * cout)
        dw = (xm.T @ gm).reshape(c, 2, 2, cout).transpose(0, 3, 1, 2) if weight.requires_grad else None
        dx = None
        if x.requires_grad:
            dx = (gm @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        return dx, dw

    return make(out, (x, weight), bw, "deconv2d")


def deconv2d_depthwise(x, weight):
    """Per-channel 2x2 stride-2 transposed convolution (groups = channels)."""
    n, c, h, w = x.shape
    if weight.size != c * 4:
        raise InvalidArgument(f"depthwise deconv needs {c * 4} weights, got {weight.size}")
    wk = weight.data.reshape(1, c, 1, 2, 1, 2)
    x6 = x.data.reshape(n, c, h, 1, w, 1)
    out = (x6 * wk).reshape(n, c, 2 * h, 2 * w)

    def bw(g):
        g6 = g.reshape(n, c, h, 2, w, 2)
        dx = (g6 * wk).sum(axis=(3, 5)) if x.requires_grad else None
        dw = (g6 * x6).sum(axis=(0, 2, 4)).reshape(weight.shape) if weight.requires_grad else None
        return dx, dw

    return make(out, (x, weight), bw, "deconv2d_depthwise")


def batch_norm(x, gamma, beta, running_mean, running_var, mode="train",
               momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batch normalisation.

    In ``train`` mode batch statistics are used and the running buffers
    (numpy arrays or Tensors) are updated in place; ``infer`` uses them.
    """
    if mode not in ("train", "infer"):
        raise InvalidArgument(f"unknown batch-norm mode {mode!r}")
    rm = running_mean.data if isinstance(running_mean, Tensor) else running_mean
    rv = running_var.data if isinstance(running_var, Tensor) else running_var
    c = x.shape[1]
    shape = (1, c, 1, 1)
    gd = gamma.data.reshape(shape)
    if mode == "infer":
        if rm is None or rv is None:
            raise InvalidArgument("batch_norm in infer mode needs running statistics")
        invstd = (1.0 / np.sqrt(rv + eps)).astype(x.dtype).reshape(shape)
        xhat = (x.data - rm.reshape(shape)) * invstd
        out = xhat * gd + beta.data.reshape(shape)

        def bw_infer(g):
            return (g * (gd * invstd),
                    (g * xhat).sum(axis=(0, 2, 3)),
                    g.sum(axis=(0, 2, 3)))

        return make(out, (x, gamma, beta), bw_infer, "batch_norm")

    m = x.shape[0] * x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
    invstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * invstd
    out = xhat * gd + beta.data.reshape(shape)
    if rm is not None and rv is not None:
        unbiased = var.reshape(c) * (m / max(m - 1, 1))
        rm *= (1 - momentum)
        rm += momentum * mu.reshape(c)
        rv *= (1 - momentum)
        rv += momentum * unbiased

    def bw_train(g):
        dxhat = g * gd
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (invstd / m) * (m * dxhat - s1 - xhat * s2)
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make(out, (x, gamma, beta), bw_train, "batch_norm")


def binarize(x, mode="deterministic", rng=None):
    """Map values in [-1, 1] to {-1, +1}.

    ``stochastic``: +1 with probability (1 + x) / 2, so the expectation is x.
    ``deterministic``: +1 iff x >= 0.
    ``relaxed``: forward is the identity; only for gradient checking.
    The backward pass is the identity in every mode.
    """
    if mode not in BINARIZER_MODES:
        raise InvalidArgument(f"unknown binarizer mode {mode!r}")
    xd = x.data
    if xd.size and (xd.max() > 1 + 1e-6 or xd.min() < -1 - 1e-6):
        raise InvalidArgument("binarize input must lie in [-1, 1]")
    one = xd.dtype.type(1)
    if mode == "stochastic":
        if rng is None:
            raise InvalidArgument("stochastic binarization needs an rng")
        u = rng.random(xd.shape, dtype=np.float64)
        out = np.where(u < (1.0 + xd) / 2.0, one, -one)
    elif mode == "deterministic":
        out = np.where(xd >= 0, one, -one)
    else:
        out = xd.copy()
    t = make(out.astype(xd.dtype), (x,), lambda g: (g,), "binarize")
    t.stochastic = mode == "stochastic"
    return t


def multiscale_layer(x, branches, mode="train"):
    """Concatenation of parallel dilated 3x3 conv + BN + ReLU branches.

    ``branches`` is a sequence of ``(spec, weight, gamma, beta, rmean, rvar)``
    with ``spec.padding == spec.dilation`` so all outputs share x's size.
    """
    outs = []
    for spec, weight, gamma, beta, rmean, rvar in branches:
        y = conv2d(x, spec, weight)
        y = batch_norm(y, gamma, beta, rmean, rvar, mode)
        outs.append(relu(y))
    hw = {o.shape[2:] for o in outs}
    if len(hw) != 1:
        raise RuntimeError(f"multi-scale branches disagree on spatial size: {hw}")
    return concat(outs, axis=1)


def elementwise(op, a, b):
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    raise InvalidArgument(f"unknown elementwise op {op!r}")

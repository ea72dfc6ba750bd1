"""Network building blocks on top of the tensor engine.

Convolutions run through an im2col view so the heavy lifting is a BLAS
matmul. All layers are pure functions of (input, parameters); the only
mutable state is batch-norm running statistics, which have a single writer
(the training loop).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, make_op, reduce

# ---------------------------------------------------------------------------
# parameter containers


def _named_children(value, key: str):
    """(name, module) pairs inside an attribute, descending into containers."""
    if isinstance(value, Module):
        yield key, value
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _named_children(item, f"{key}.{i}")


class Module:
    """Minimal parameter container: attribute walking yields named tensors."""

    _buffer_names: tuple = ()

    def __init__(self):
        self.training = True

    def _children(self):
        for name, attr in vars(self).items():
            yield from _named_children(attr, name)

    def modules(self):
        yield self
        for _, m in self._children():
            yield from m.modules()

    def named_parameters(self, prefix: str = ""):
        for name, attr in vars(self).items():
            if isinstance(attr, Tensor) and attr.requires_grad:
                yield f"{prefix}{name}", attr
        for name, m in self._children():
            yield from m.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name in self._buffer_names:
            attr = getattr(self, name, None)
            if isinstance(attr, np.ndarray):
                yield f"{prefix}{name}", attr
        for name, m in self._children():
            yield from m.named_buffers(f"{prefix}{name}.")

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


# ---------------------------------------------------------------------------
# initializers


def orthogonal_init(rows: int, cols: int, seed) -> np.ndarray:
    """Semi-orthogonal matrix from a seeded Gaussian, deterministic per seed.

    The smaller-dimension Gram matrix is the identity; square outputs are
    proper rotations (determinant +1).
    """
    if rows <= 0 or cols <= 0:
        raise ValueError("dimensions must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diagonal(r))  # fix QR sign ambiguity
    w = q if rows >= cols else q.T
    if rows == cols and np.linalg.det(w) < 0:
        w[0] = -w[0]
    return np.ascontiguousarray(w)


def gaussian_init(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    # Fan-in scaling keeps activation variance stable under ReLU.
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


# ---------------------------------------------------------------------------
# convolution internals


def _conv_geometry(extent: int, kernel: int, stride: int, pad: int, dilation: int) -> int:
    effective = (kernel - 1) * dilation + 1
    out = (extent + 2 * pad - effective) // stride + 1
    if out < 1:
        raise ValueError(
            f"convolution output extent {out} < 1 "
            f"(input {extent}, kernel {kernel}, stride {stride}, pad {pad}, dilation {dilation})"
        )
    return out


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    b, c = xp.shape[:2]
    sb, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(b, c, k, k, ho, wo),
        strides=(sb, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
    )
    return np.ascontiguousarray(view).reshape(b, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, shape, k: int, stride: int, dilation: int, pad: int,
            ho: int, wo: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back onto the padded image."""
    b, c, h, w = shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(b, c, k, k, ho, wo)
    for p in range(k):
        for q in range(k):
            out[:, :, p * dilation: p * dilation + stride * ho: stride,
                q * dilation: q * dilation + stride * wo: stride] += cols[:, :, p, q]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation with dilated taps, differentiable in all inputs.

    ``x`` is B x C x H x W, ``weight`` is O x C x k x k. An n x n kernel with
    dilation r covers an ((n-1)r+1)^2 field.
    """
    b, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ValueError(f"input has {c} channels but weight expects {ci}")
    if k != k2:
        raise ValueError("only square kernels are supported")
    ho = _conv_geometry(h, k, stride, padding, dilation)
    wo = _conv_geometry(w, k, stride, padding, dilation)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, stride, dilation, ho, wo)
    w2 = weight.data.reshape(o, c * k * k)
    y = np.matmul(w2, cols).reshape(b, o, ho, wo)
    if bias is not None:
        y = y + bias.data.reshape(1, o, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gy = g.reshape(b, o, ho * wo)
        if weight.requires_grad:
            gw = np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0)
            weight._accumulate(gw.reshape(weight.shape))
        if x.requires_grad:
            gcols = np.matmul(w2.T, gy)
            x._accumulate(_col2im(gcols, x.shape, k, stride, dilation, padding, ho, wo))
        if bias is not None and bias.requires_grad:
            bias._accumulate(gy.sum(axis=(0, 2)))

    return make_op(y, parents, backward)


def conv2d_transpose(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0,
                     dilation: int = 1) -> Tensor:
    """Adjoint of conv2d: maps the O channels of ``weight`` back to its C
    channels; output extent is (H-1)*stride - 2*pad + (k-1)*dilation + 1."""
    b, o, h, w = x.shape
    ow, c, k, _ = weight.shape
    if ow != o:
        raise ValueError(f"input has {o} channels but weight expects {ow}")
    effective = (k - 1) * dilation + 1
    ho = (h - 1) * stride - 2 * padding + effective
    wo = (w - 1) * stride - 2 * padding + effective
    if ho < 1 or wo < 1:
        raise ValueError("transposed convolution output extent < 1")

    w2 = weight.data.reshape(o, c * k * k)
    u = x.data.reshape(b, o, h * w)
    cols = np.matmul(w2.T, u)
    y = _col2im(cols, (b, c, ho, wo), k, stride, dilation, padding, h, w)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        gcols = _im2col(gp, k, stride, dilation, h, w)
        if x.requires_grad:
            x._accumulate(np.matmul(w2, gcols).reshape(x.shape))
        if weight.requires_grad:
            gw = np.matmul(gcols, u.transpose(0, 2, 1)).sum(axis=0).T
            weight._accumulate(gw.reshape(weight.shape))

    return make_op(y, (x, weight), backward)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int | str = "same", dilation: int = 1,
                 bias: bool = False, rng: np.random.Generator | None = None,
                 dtype=np.float64):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.dilation = dilation
        if padding == "same":
            padding = dilation * (kernel_size - 1) // 2
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        w = gaussian_init((out_channels, in_channels, kernel_size, kernel_size),
                          in_channels * kernel_size * kernel_size, rng)
        self.weight = Tensor(w.astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class TransposedConv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng(0)
        w = gaussian_init((in_channels, out_channels, kernel_size, kernel_size),
                          in_channels * kernel_size * kernel_size, rng)
        self.weight = Tensor(w.astype(dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d_transpose(x, self.weight, self.stride, self.padding)


# ---------------------------------------------------------------------------
# normalization


class BatchNorm2d(Module):
    """Per-channel normalization with affine scale/shift and running stats.

    Train mode normalizes with batch statistics (batch size must be >= 2)
    and updates the running estimates; eval mode is a pure affine map built
    from the stored statistics.
    """

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float64):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, c, _, _ = x.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        shape = (1, c, 1, 1)
        if self.training:
            if b < 2:
                raise ValueError("batch norm in train mode needs batch size >= 2")
            mean = x.mean(axes=(0, 2, 3), keepdims=True)
            centered = x - mean
            var = (centered * centered).mean(axes=(0, 2, 3), keepdims=True)
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean
                                 + m * mean.data.reshape(c)).astype(x.dtype)
            self.running_var = ((1 - m) * self.running_var
                                + m * var.data.reshape(c)).astype(x.dtype)
            norm = centered / (var + self.eps).sqrt()
        else:
            rm = Tensor(self.running_mean.reshape(shape).astype(x.dtype))
            rv = Tensor(self.running_var.reshape(shape).astype(x.dtype))
            norm = (x - rm) / (rv + self.eps).sqrt()
        return norm * self.gamma.reshape(shape) + self.beta.reshape(shape)


# ---------------------------------------------------------------------------
# pooling and resampling


def avg_pool2d(x: Tensor, kernel: int, stride: int, padding: int = 0,
               ceil_mode: bool = False) -> Tensor:
    """Average pooling that divides by the count of in-bounds taps, so
    constant maps stay constant at the borders."""
    b, c, h, w = x.shape

    def extent(e):
        num = e + 2 * padding - kernel
        o = -(-num // stride) + 1 if ceil_mode else num // stride + 1
        if o < 1:
            raise ValueError("pool output extent < 1")
        return o

    ho, wo = extent(h), extent(w)
    # Pad enough on the right/bottom to cover the last (possibly partial) window.
    need_h = (ho - 1) * stride + kernel - h - padding
    need_w = (wo - 1) * stride + kernel - w - padding
    pad_h = (padding, max(need_h, padding))
    pad_w = (padding, max(need_w, padding))

    xp = np.pad(x.data, ((0, 0), (0, 0), pad_h, pad_w))
    ones = np.pad(np.ones((1, 1, h, w), dtype=x.dtype), ((0, 0), (0, 0), pad_h, pad_w))
    counts = _im2col(ones, kernel, stride, 1, ho, wo).sum(axis=1).reshape(1, 1, ho, wo)
    cols = _im2col(xp, kernel, stride, 1, ho, wo).reshape(b, c, kernel * kernel, ho * wo)
    y = cols.sum(axis=2).reshape(b, c, ho, wo) / counts

    def backward(g):
        if not x.requires_grad:
            return
        gn = (g / counts).reshape(b, c, 1, ho * wo)
        gcols = np.broadcast_to(gn, (b, c, kernel * kernel, ho * wo)).reshape(
            b, c * kernel * kernel, ho * wo)
        full = np.zeros_like(xp)
        scattered = _col2im(gcols, (b, c, *full.shape[2:]), kernel, stride, 1, 0, ho, wo)
        x._accumulate(scattered[:, :, pad_h[0]: pad_h[0] + h, pad_w[0]: pad_w[0] + w])

    return make_op(y, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel: B x C x H x W -> B x C x 1 x 1."""
    return x.mean(axes=(2, 3), keepdims=True)


def stacked_pool(x: Tensor, stages: int, include_input: bool = True) -> Tensor:
    """Cumulative cascade of 3x3 stride-1 average pools, shape preserving."""
    if stages < 1:
        raise ValueError("stages must be >= 1")
    pooled = x
    acc = x if include_input else None
    for _ in range(stages):
        pooled = avg_pool2d(pooled, 3, 1, padding=1)
        acc = pooled if acc is None else acc + pooled
    return acc


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear interpolation with half-pixel-aligned sample centers."""
    if out_h < 1 or out_w < 1:
        raise ValueError("output extents must be >= 1")
    b, c, h, w = x.shape

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    i0, i1, fi = axis_weights(h, out_h)
    j0, j1, fj = axis_weights(w, out_w)
    wi = fi.reshape(-1, 1).astype(x.dtype)
    wj = fj.reshape(1, -1).astype(x.dtype)

    d = x.data
    y = ((1 - wi) * (1 - wj) * d[:, :, i0[:, None], j0[None, :]]
         + (1 - wi) * wj * d[:, :, i0[:, None], j1[None, :]]
         + wi * (1 - wj) * d[:, :, i1[:, None], j0[None, :]]
         + wi * wj * d[:, :, i1[:, None], j1[None, :]])

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(d)
        for ii, jj, ww in (
            (i0, j0, (1 - wi) * (1 - wj)),
            (i0, j1, (1 - wi) * wj),
            (i1, j0, wi * (1 - wj)),
            (i1, j1, wi * wj),
        ):
            np.add.at(gx, (slice(None), slice(None), ii[:, None], jj[None, :]), g * ww)
        x._accumulate(gx)

    return make_op(np.ascontiguousarray(y), (x,), backward)


def spatial_softmax(x: Tensor) -> Tensor:
    """Softmax over spatial positions of a single-channel map; each image's
    output is a probability distribution."""
    if x.shape[1] != 1:
        raise ValueError("spatial softmax expects a single channel")
    shift = Tensor(x.data.max(axis=(2, 3), keepdims=True))  # constant, for stability
    z = (x - shift).exp()
    return z / z.sum(axes=(2, 3), keepdims=True)

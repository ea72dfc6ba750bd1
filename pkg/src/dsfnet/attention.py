"""Scale-wise attention and feature re-weighting.

A feature map is repeatedly halved into a pyramid; each level yields a
spatial attention distribution which, upsampled back, re-weights the input
through a residual fusion. A second stage re-weights channels (via the
global distribution response) and positions (via a learned 1x1 projection),
and the two weighted maps are summed into the enhanced feature.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, relu, sigmoid
from .layers import (BatchNorm2d, Conv2d, Module, avg_pool2d, bilinear_resize,
                     conv2d, global_avg_pool, spatial_softmax)


def multiscale_downsample(x: Tensor, levels: int) -> list:
    """Successively halved copies of ``x`` (2x2 stride-2 average pooling),
    one per level; channels are unchanged."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out = []
    cur = x
    for _ in range(levels):
        if min(cur.shape[2], cur.shape[3]) < 1:
            raise ValueError("extent fell below 1")
        cur = avg_pool2d(cur, 2, 2, ceil_mode=True)
        out.append(cur)
    return out


def attention_map(x: Tensor, weight: Tensor) -> Tensor:
    """Project channels to one score per position and normalize the scores
    into a spatial probability distribution."""
    if weight.shape[0] != 1 or weight.shape[1] != x.shape[1]:
        raise ValueError(f"projection weight {weight.shape} does not map "
                         f"{x.shape[1]} channels to 1")
    return spatial_softmax(conv2d(x, weight))


def _upsampled(maps: list, h: int, w: int) -> list:
    return [m if m.shape[2:] == (h, w) else bilinear_resize(m, h, w) for m in maps]


def attention_weighted_sum(x: Tensor, maps: list) -> Tensor:
    """Average of the attention-weighted copies of ``x``: (1/L) sum ell * x."""
    h, w = x.shape[2], x.shape[3]
    acc = None
    for m in _upsampled(maps, h, w):
        term = m * x
        acc = term if acc is None else acc + term
    return acc * (1.0 / len(maps))


def attention_fuse(x: Tensor, maps: list) -> Tensor:
    """Residual fusion: (1/L) sum (1 + ell) * x, each attention map upsampled
    to the extent of ``x`` and applied across all channels."""
    if not maps:
        raise ValueError("no attention maps")
    h, w = x.shape[2], x.shape[3]
    acc = None
    for m in _upsampled(maps, h, w):
        term = (m + 1.0) * x
        acc = term if acc is None else acc + term
    return acc * (1.0 / len(maps))


def channel_weight(f: Tensor, w_reduce: Tensor, w_expand: Tensor) -> Tensor:
    """Re-weight channels by a sigmoid of the squeezed global response:
    r = sigmoid(W1 relu(W2 GAP(f))), output f * r."""
    z = global_avg_pool(f)
    zhat = conv2d(relu(conv2d(z, w_reduce)), w_expand)
    return f * sigmoid(zhat)


def spatial_weight(f: Tensor, w_spatial: Tensor) -> Tensor:
    """Re-weight positions by a sigmoid of a learned 1x1 projection to one
    channel, broadcast back over channels."""
    return f * sigmoid(conv2d(f, w_spatial))


class FeatureWeighting(Module):
    """Channel and spatial re-weighting with learned 1x1 projections."""

    def __init__(self, channels: int, reduction: int = 4,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        hidden = max(channels // reduction, 1)
        self.reduce = Conv2d(channels, hidden, 1, padding=0, rng=rng, dtype=dtype)
        self.expand = Conv2d(hidden, channels, 1, padding=0, rng=rng, dtype=dtype)
        self.spatial = Conv2d(channels, 1, 1, padding=0, rng=rng, dtype=dtype)

    def channel(self, f: Tensor) -> Tensor:
        return channel_weight(f, self.reduce.weight, self.expand.weight)

    def spatial_map(self, f: Tensor) -> Tensor:
        return spatial_weight(f, self.spatial.weight)

    def enhance(self, f: Tensor) -> Tensor:
        return self.channel(f) + self.spatial_map(f)

    forward = enhance


class PyramidAttention(Module):
    """Full chain: pyramid attention maps, residual fusion, then channel and
    spatial enhancement. Per-level scores come from BN, a 1x1 projection and
    ReLU before the spatial softmax."""

    def __init__(self, channels: int, levels: int = 3, reduction: int = 4,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        if levels < 1:
            raise ValueError("levels must be >= 1")
        self.levels = levels
        rng = rng or np.random.default_rng(0)
        self.level_norms = [BatchNorm2d(channels, dtype=dtype) for _ in range(levels)]
        self.level_projs = [Conv2d(channels, 1, 1, padding=0, rng=rng, dtype=dtype)
                            for _ in range(levels)]
        self.weighting = FeatureWeighting(channels, reduction, rng, dtype)

    def attention_maps(self, x: Tensor) -> list:
        maps = []
        for lvl, bn, proj in zip(multiscale_downsample(x, self.levels),
                                 self.level_norms, self.level_projs):
            scores = relu(proj(bn(lvl)))
            maps.append(spatial_softmax(scores))
        return maps

    def forward(self, x: Tensor) -> Tensor:
        fused = attention_fuse(x, self.attention_maps(x))
        return self.weighting.enhance(fused)

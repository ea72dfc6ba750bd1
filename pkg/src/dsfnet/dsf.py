"""Dilated scale-wise fusion unit.

A unit factorizes a standard convolution into a 1x1 channel-reducing
"instant" convolution followed by K parallel dilated convolutions whose
dilation rates grow as powers of two. Branch outputs are merged by stepwise
(prefix-sum) fusion before concatenation, and a residual connection is added
when the geometry allows it. The analytic parameter-count and
receptive-field formulas have exact enumeration/impulse oracles below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, concat, relu
from .layers import BatchNorm2d, Conv2d, Module, orthogonal_init


@dataclass(frozen=True)
class DsfConfig:
    """Hyperparameters of one unit.

    ``branches`` splits the output width: each dilated branch produces
    out_channels/branches maps, branch k (1-based) using dilation 2**(k-1).
    """

    in_channels: int
    out_channels: int
    branches: int = 4
    kernel_size: int = 3
    stride: int = 1
    residual: bool = False
    stepwise_fusion: bool = True

    def __post_init__(self):
        if self.branches < 1:
            raise ValueError("branches must be >= 1")
        if self.out_channels % self.branches:
            raise ValueError("out_channels must be divisible by branches")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 3")
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 (learning) or 2 (down-sampling)")
        if self.residual and (self.in_channels != self.out_channels or self.stride != 1):
            raise ValueError("residual requires matching channels and stride 1")

    @property
    def branch_channels(self) -> int:
        return self.out_channels // self.branches

    @property
    def dilations(self) -> tuple:
        return tuple(2 ** k for k in range(self.branches))


def param_count(cfg: DsfConfig) -> int:
    """Closed-form weight count: M*N/K + n^2 * N^2 / K (no biases, no BN)."""
    m, n = cfg.in_channels, cfg.out_channels
    k, ks = cfg.branches, cfg.kernel_size
    return m * n // k + ks * ks * n * n // k


def standard_conv_param_count(in_channels: int, out_channels: int, kernel_size: int) -> int:
    """Weight count of the ordinary convolution the unit replaces."""
    return kernel_size * kernel_size * in_channels * out_channels


def reduction_factor(cfg: DsfConfig):
    """Parameter reduction versus a standard convolution: n^2*M*K / (M + n^2*N)."""
    m, n, ks = cfg.in_channels, cfg.out_channels, cfg.kernel_size
    from fractions import Fraction
    return Fraction(ks * ks * m * cfg.branches, m + ks * ks * n)


def receptive_field(kernel_size: int, branches: int) -> int:
    """Side of the square field of the widest branch: (n-1)*2^(K-1) + 1."""
    return (kernel_size - 1) * 2 ** (branches - 1) + 1


def sff_merge(branch_outputs: list) -> list:
    """Stepwise feature fusion: prefix sums of the branch maps, ordered by
    ascending dilation, returned for concatenation."""
    if not branch_outputs:
        raise ValueError("no branch outputs")
    shape = branch_outputs[0].shape
    for b in branch_outputs[1:]:
        if b.shape != shape:
            raise ValueError("branch shapes differ")
    merged = [branch_outputs[0]]
    for b in branch_outputs[1:]:
        merged.append(merged[-1] + b)
    return merged


class DsfUnit(Module):
    """One factorized unit: instant 1x1 conv, K dilated branches, fusion,
    concatenation, optional residual, then BN and ReLU."""

    def __init__(self, cfg: DsfConfig, rng: np.random.Generator | None = None,
                 instant_rotation: bool = True, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        rng = rng or np.random.default_rng(0)
        bc = cfg.branch_channels

        self.instant = Conv2d(cfg.in_channels, bc, 1, stride=1, padding=0,
                              bias=False, rng=rng, dtype=dtype)
        if instant_rotation:
            w = orthogonal_init(bc, cfg.in_channels, rng)
            self.instant.weight.data[...] = w.reshape(bc, cfg.in_channels, 1, 1).astype(dtype)
        self.branch_convs = [
            Conv2d(bc, bc, cfg.kernel_size, stride=cfg.stride, padding="same",
                   dilation=d, bias=False, rng=rng, dtype=dtype)
            for d in cfg.dilations
        ]
        self.bn = BatchNorm2d(cfg.out_channels, dtype=dtype)

    def branch_maps(self, x: Tensor) -> list:
        """Per-branch maps after the instant conv and (optionally) fusion."""
        reduced = self.instant(x)
        outputs = [conv(reduced) for conv in self.branch_convs]
        if self.cfg.stepwise_fusion:
            outputs = sff_merge(outputs)
        return outputs

    def pre_activation(self, x: Tensor) -> Tensor:
        """Concatenated (and residual-merged) map before BN and ReLU."""
        y = concat(self.branch_maps(x), axis=1)
        if self.cfg.residual:
            y = y + x
        return y

    def forward(self, x: Tensor) -> Tensor:
        return relu(self.bn(self.pre_activation(x)))

    def conv_weight_count(self) -> int:
        """Exact enumeration of convolution weights (instant + branches)."""
        total = self.instant.weight.size
        for conv in self.branch_convs:
            total += conv.weight.size
        return total


def impulse_response(cfg: DsfConfig, weight_value: float = 1.0) -> np.ndarray:
    """Pre-BN response of a unit with constant-positive weights to a centered
    unit impulse; the measurement oracle for receptive field and gridding.

    Returns an (out_channels, H, W) array on a grid just large enough to hold
    the widest branch's field.
    """
    side = receptive_field(cfg.kernel_size, cfg.branches) + 2
    unit = DsfUnit(cfg, np.random.default_rng(0))
    unit.instant.weight.data[...] = weight_value
    for conv in unit.branch_convs:
        conv.weight.data[...] = weight_value
    x = np.zeros((1, cfg.in_channels, side, side))
    x[:, :, side // 2, side // 2] = 1.0
    out = unit.pre_activation(Tensor(x))
    return out.data[0]


def support_side(response: np.ndarray) -> int:
    """Side length of the bounding box of the nonzero support (any channel)."""
    mask = np.any(response != 0.0, axis=0)
    rows = np.argwhere(mask.any(axis=1)).reshape(-1)
    cols = np.argwhere(mask.any(axis=0)).reshape(-1)
    if rows.size == 0:
        return 0
    return int(max(rows[-1] - rows[0], cols[-1] - cols[0]) + 1)


def center_row_interior_zeros(channel: np.ndarray) -> int:
    """Count zeros strictly between the outermost nonzeros on the center row."""
    row = channel[channel.shape[0] // 2]
    nz = np.flatnonzero(row)
    if nz.size < 2:
        return 0
    interior = row[nz[0]: nz[-1] + 1]
    return int(np.count_nonzero(interior == 0.0))

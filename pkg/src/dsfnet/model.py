"""Encoder-decoder saliency network assembled from dilated fusion units.

The encoder opens with one standard strided convolution, then runs one
strided unit plus ``repeats - 1`` residual units per stage. The deepest
features (optionally every stage's) pass through pyramid attention; a light
decoder of transposed convolutions restores the input extent, and a 1x1
head with a sigmoid produces the saliency map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, clip, relu, sigmoid
from .layers import BatchNorm2d, Conv2d, Module, TransposedConv2d, bilinear_resize
from .dsf import DsfConfig, DsfUnit, param_count
from .attention import PyramidAttention


@dataclass(frozen=True)
class NetConfig:
    """Whole-network hyperparameters.

    ``stage_channels`` lists the output channels of the stem convolution and
    of each subsequent fusion stage; every stage halves the spatial extent.
    ``repeats`` is the per-stage depth factor (the stem stage is never
    repeated).
    """

    stage_channels: tuple = (16, 64, 128)
    branches: int = 4
    kernel_size: int = 3
    repeats: int = 2
    in_channels: int = 3
    attention: bool = True
    attention_scales: int = 3
    attention_reduction: int = 4
    attention_per_stage: bool = False
    stepwise_fusion: bool = True
    instant_rotation: bool = True

    def __post_init__(self):
        if len(self.stage_channels) < 2:
            raise ValueError("need a stem stage and at least one fusion stage")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        for n in self.stage_channels[1:]:
            if n % self.branches:
                raise ValueError(f"stage width {n} not divisible by {self.branches} branches")

    @property
    def downsample_factor(self) -> int:
        return 2 ** len(self.stage_channels)


@dataclass
class SaliencyOutput:
    """Prediction of one forward pass: probabilities and raw head scores."""

    map: Tensor
    logits: Tensor


class DsfNet(Module):
    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        self.dtype = dtype
        counter = [0]

        def rng():
            counter[0] += 1
            return np.random.default_rng((seed, 0, counter[0]))

        c0 = cfg.stage_channels[0]
        self.stem = Conv2d(cfg.in_channels, c0, 3, stride=2, padding=1,
                           rng=rng(), dtype=dtype)
        self.stem_bn = BatchNorm2d(c0, dtype=dtype)

        self.stages = []
        for m, n in zip(cfg.stage_channels[:-1], cfg.stage_channels[1:]):
            units = [DsfUnit(DsfConfig(m, n, cfg.branches, cfg.kernel_size, stride=2,
                                       stepwise_fusion=cfg.stepwise_fusion),
                             rng(), cfg.instant_rotation, dtype)]
            for _ in range(cfg.repeats - 1):
                units.append(DsfUnit(DsfConfig(n, n, cfg.branches, cfg.kernel_size,
                                               stride=1, residual=True,
                                               stepwise_fusion=cfg.stepwise_fusion),
                                     rng(), cfg.instant_rotation, dtype))
            self.stages.append(units)

        if cfg.attention:
            widths = cfg.stage_channels[1:] if cfg.attention_per_stage else cfg.stage_channels[-1:]
            self.attention_blocks = [
                PyramidAttention(w, cfg.attention_scales, cfg.attention_reduction,
                                 rng(), dtype)
                for w in widths
            ]
        else:
            self.attention_blocks = []

        self.decoder = []
        chans = list(cfg.stage_channels[::-1]) + [cfg.stage_channels[0] // 2]
        for i in range(len(cfg.stage_channels)):
            cin, cout = chans[i], chans[i + 1]
            self.decoder.append((TransposedConv2d(cin, cout, 2, stride=2,
                                                  rng=rng(), dtype=dtype),
                                 BatchNorm2d(cout, dtype=dtype)))
        self.head = Conv2d(chans[-1], 1, 1, padding=0, bias=True, rng=rng(), dtype=dtype)

    def forward(self, x: Tensor) -> SaliencyOutput:
        if x.data.ndim == 3:
            x = x.reshape((1, *x.shape))
        h, w = x.shape[2], x.shape[3]
        factor = self.cfg.downsample_factor
        if h % factor or w % factor:
            raise ValueError(f"input extents {h}x{w} must be divisible by {factor}")

        y = relu(self.stem_bn(self.stem(x)))
        for i, units in enumerate(self.stages):
            for unit in units:
                y = unit(y)
            if self.cfg.attention and self.cfg.attention_per_stage:
                y = self.attention_blocks[i](y)
        if self.cfg.attention and not self.cfg.attention_per_stage:
            y = self.attention_blocks[0](y)

        for conv, bn in self.decoder:
            y = relu(bn(conv(y)))
        logits = self.head(y)
        saliency = sigmoid(logits)
        if saliency.shape[2:] != (h, w):
            saliency = bilinear_resize(saliency, h, w)
        return SaliencyOutput(map=saliency, logits=logits)

    def encoder_conv_param_count(self) -> int:
        total = self.stem.weight.size
        for units in self.stages:
            for unit in units:
                total += unit.conv_weight_count()
        return total

    def encoder_param_formula(self) -> int:
        total = self.stem.weight.size
        for units in self.stages:
            for unit in units:
                total += param_count(unit.cfg)
        return total


# ---------------------------------------------------------------------------
# loss

CLAMP_EPS = 1e-7


def cross_entropy(target, prediction: Tensor) -> Tensor:
    """Per-pixel binary cross entropy, averaged, with probabilities clamped
    to [eps, 1-eps] to keep the logs finite."""
    t = target if isinstance(target, Tensor) else Tensor(target)
    p = clip(prediction, CLAMP_EPS, 1.0 - CLAMP_EPS)
    ll = t * p.log() + (1.0 - t) * (1.0 - p).log()
    return -ll.mean()


def mean_abs_error(target, prediction: Tensor) -> Tensor:
    t = target if isinstance(target, Tensor) else Tensor(target)
    return (prediction - t).abs().mean()


def fused_loss(target, prediction: Tensor) -> Tensor:
    """Training objective: cross entropy plus mean absolute error."""
    t = target if isinstance(target, Tensor) else Tensor(target)
    if t.shape != prediction.shape:
        raise ValueError(f"target {t.shape} and prediction {prediction.shape} differ")
    return cross_entropy(t, prediction) + mean_abs_error(t, prediction)

"""Dilated scale-wise fusion network for salient lesion segmentation.

A self-contained numpy engine: dense tensors with reverse-mode automatic
differentiation, the factorized dilated-pyramid unit with stepwise feature
fusion, scale-wise pyramid attention, an encoder-decoder saliency model, a
fused cross-entropy + MAE loss, the full segmentation metric suite with
brute-force oracles, synthetic data generation, and an SGD training loop.
"""

from .tensor import (Tensor, backward, concat, elementwise, finite_diff_check,
                     matmul, maximum, no_grad, reduce)
from .layers import (BatchNorm2d, Conv2d, Module, TransposedConv2d, avg_pool2d,
                     bilinear_resize, conv2d, conv2d_transpose, global_avg_pool,
                     orthogonal_init, spatial_softmax, stacked_pool)
from .dsf import (DsfConfig, DsfUnit, impulse_response, param_count,
                  receptive_field, sff_merge, support_side)
from .attention import (FeatureWeighting, PyramidAttention, attention_fuse,
                        attention_map, attention_weighted_sum, channel_weight,
                        multiscale_downsample, spatial_weight)
from .model import DsfNet, NetConfig, SaliencyOutput, cross_entropy, fused_loss, mean_abs_error
from .metrics import (MetricsReport, bde, f_measure, gce, iou, mae, pr_curve,
                      pri, score_pair, voi)
from .data import (SegSample, load_checkpoint, load_image, load_mask, load_map,
                   save_checkpoint, save_image, save_map, save_mask, synth_generate)
from .train import RunConfig, SGD, evaluate, load_config, lr_at, predict, train

__version__ = "0.1.0"

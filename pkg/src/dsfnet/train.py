"""SGD-momentum training loop with deterministic seeding and checkpoints.

A single root seed expands into per-purpose streams (weight init, data
generation, batch selection) so that runs are reproducible bit for bit and
ablation variants share their initialization. The batch stream is keyed by
iteration number, which makes save/resume match uninterrupted training
exactly.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields

import numpy as np

from .tensor import Tensor
from .model import DsfNet, NetConfig, cross_entropy, mean_abs_error
from . import data as dio
from . import metrics as seg_metrics

_DATA_TAG = 0xDA7A


def batch_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng((_DATA_TAG, seed, iteration))


# ---------------------------------------------------------------------------
# optimizer


class SGD:
    """Momentum SGD with decoupled-from-nothing classic weight decay:
    g' = g + wd * p; v = momentum * v + g'; p = p - lr * v."""

    def __init__(self, named_params, lr: float = 1e-3, momentum: float = 0.9,
                 weight_decay: float = 5e-4):
        self.named_params = list(named_params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self):
        for name, p in self.named_params:
            g = p.grad
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= self.lr * v

    def state_entries(self, prefix: str = "opt."):
        return {prefix + name: v for name, v in self.velocity.items()}

    def load_state_entries(self, entries: dict, prefix: str = "opt."):
        for name in self.velocity:
            self.velocity[name] = np.asarray(entries[prefix + name],
                                             dtype=self.velocity[name].dtype).reshape(
                self.velocity[name].shape).copy()


def lr_at(epoch: int, base: float = 1e-3, milestones=(100, 200),
          factor: float = 0.01, cumulative: bool = True) -> float:
    """Piecewise-constant schedule: the rate drops by ``factor`` at each
    milestone epoch (cumulatively by default, or once overall)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    passed = sum(1 for m in milestones if epoch >= m)
    if not cumulative:
        return base * (factor if passed else 1.0)
    return base * factor ** passed


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    # model
    stage_channels: tuple = (16, 64)
    branches: int = 4
    kernel_size: int = 3
    repeats: int = 2
    attention: bool = True
    attention_scales: int = 3
    attention_per_stage: bool = False
    sff: bool = True
    instant_conv: bool = True
    # optimization
    iterations: int = 200
    batch_size: int = 4
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestone_epochs: tuple = (100, 200)
    lr_factor: float = 0.01
    lr_cumulative: bool = True
    seed: int = 0
    precision: str = "single"
    # data
    data_source: str = "synth"  # "synth" or a directory of ppm/pgm pairs
    count: int = 8
    extent: int = 64
    difficulty: str = "easy"
    # output
    out_dir: str = "run"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (batch norm constraint)")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be single or double")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    def net_config(self) -> NetConfig:
        return NetConfig(stage_channels=tuple(self.stage_channels),
                         branches=self.branches, kernel_size=self.kernel_size,
                         repeats=self.repeats, attention=self.attention,
                         attention_scales=self.attention_scales,
                         attention_per_stage=self.attention_per_stage,
                         stepwise_fusion=self.sff,
                         instant_rotation=self.instant_conv)


_SCHEMA = {
    "model": {"stage_channels", "branches", "kernel_size", "repeats", "attention",
              "attention_scales", "attention_per_stage", "sff", "instant_conv"},
    "train": {"iterations", "batch_size", "lr", "momentum", "weight_decay",
              "milestone_epochs", "lr_factor", "lr_cumulative", "seed", "precision"},
    "data": {"data_source", "count", "extent", "difficulty"},
    "io": {"out_dir"},
}


def load_config(path) -> RunConfig:
    """Parse a key = value config grouped in [sections]; unknown keys are
    errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    with open(path) as fh:
        parser.read_file(fh)
    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            values[key] = raw.strip()

    kinds = {f.name: f.type for f in fields(RunConfig)}
    parsed = {}
    for key, raw in values.items():
        kind = kinds[key]
        if key in ("stage_channels", "milestone_epochs"):
            parsed[key] = tuple(int(tok) for tok in raw.replace(",", " ").split())
        elif kind == "int":
            parsed[key] = int(raw)
        elif kind == "float":
            parsed[key] = float(raw)
        elif kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                parsed[key] = True
            elif low in ("0", "false", "no", "off"):
                parsed[key] = False
            else:
                raise ValueError(f"bad boolean {raw!r} for {key}")
        else:
            parsed[key] = raw
    return RunConfig(**parsed)


# ---------------------------------------------------------------------------
# checkpoint assembly


def model_entries(model: DsfNet) -> dict:
    entries = {}
    for name, p in model.named_parameters():
        entries["param/" + name] = p.data
    for name, buf in model.named_buffers():
        entries["buffer/" + name] = buf
    cfg = model.cfg
    entries["cfg/stage_channels"] = np.asarray(cfg.stage_channels, dtype=np.float32)
    for key in ("branches", "kernel_size", "repeats", "in_channels",
                "attention", "attention_scales", "attention_reduction",
                "attention_per_stage", "stepwise_fusion", "instant_rotation"):
        entries["cfg/" + key] = np.float32(getattr(cfg, key))
    return entries


def restore_model(entries: dict, dtype=None) -> DsfNet:
    def num(key):
        return float(entries["cfg/" + key])

    cfg = NetConfig(
        stage_channels=tuple(int(v) for v in entries["cfg/stage_channels"]),
        branches=int(num("branches")), kernel_size=int(num("kernel_size")),
        repeats=int(num("repeats")), in_channels=int(num("in_channels")),
        attention=bool(num("attention")), attention_scales=int(num("attention_scales")),
        attention_reduction=int(num("attention_reduction")),
        attention_per_stage=bool(num("attention_per_stage")),
        stepwise_fusion=bool(num("stepwise_fusion")),
        instant_rotation=bool(num("instant_rotation")))
    model = DsfNet(cfg, seed=0, dtype=dtype or np.float32)
    load_model_entries(model, entries)
    return model


def load_model_entries(model: DsfNet, entries: dict):
    for name, p in model.named_parameters():
        p.data[...] = entries["param/" + name].reshape(p.data.shape)
    for name, buf in model.named_buffers():
        buf[...] = entries["buffer/" + name].reshape(buf.shape)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    losses: list
    trace_path: str
    final_path: str
    best_path: str
    model: DsfNet
    aborted: bool = False


def _dataset(cfg: RunConfig) -> list:
    if cfg.data_source == "synth":
        return dio.synth_generate(cfg.count, cfg.extent, cfg.seed, cfg.difficulty)
    return dio.load_samples(cfg.data_source)


def _epoch_of(iteration: int, cfg: RunConfig, dataset_size: int) -> int:
    return iteration * cfg.batch_size // max(dataset_size, 1)


def train(cfg: RunConfig, resume_from: str | None = None) -> TrainResult:
    """Run the loop; per-iteration losses go to <out_dir>/trace.csv and the
    final/best parameter sets to final.ckpt/best.ckpt."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    dtype = cfg.dtype
    samples = _dataset(cfg)
    images = np.stack([s.image for s in samples]).astype(dtype)
    masks = np.stack([s.mask for s in samples])[:, None].astype(dtype)

    model = DsfNet(cfg.net_config(), seed=cfg.seed, dtype=dtype)
    optimizer = SGD(model.named_parameters(), lr=cfg.lr, momentum=cfg.momentum,
                    weight_decay=cfg.weight_decay)
    start = 0
    if resume_from is not None:
        entries = dio.load_checkpoint(resume_from)
        load_model_entries(model, entries)
        optimizer.load_state_entries(entries)
        start = int(entries["meta/iteration"])

    trace_path = os.path.join(cfg.out_dir, "trace.csv")
    final_path = os.path.join(cfg.out_dir, "final.ckpt")
    best_path = os.path.join(cfg.out_dir, "best.ckpt")

    def snapshot(iteration: int) -> dict:
        entries = model_entries(model)
        entries.update(optimizer.state_entries())
        entries["meta/iteration"] = np.float32(iteration)
        return entries

    model.train()
    losses = []
    best = np.inf
    aborted = False
    mode = "a" if start else "w"
    with open(trace_path, mode) as trace:
        if not start:
            trace.write("iteration,loss,ce,mae,lr\n")
        for it in range(start, cfg.iterations):
            lr = lr_at(_epoch_of(it, cfg, len(samples)), cfg.lr, cfg.milestone_epochs,
                       cfg.lr_factor, cfg.lr_cumulative)
            optimizer.lr = lr
            rng = batch_rng(cfg.seed, it)
            if len(samples) >= cfg.batch_size:
                idx = rng.choice(len(samples), size=cfg.batch_size, replace=False)
            else:
                idx = rng.integers(0, len(samples), size=cfg.batch_size)

            x = Tensor(images[idx])
            target = Tensor(masks[idx])
            out = model(x)
            ce = cross_entropy(target, out.map)
            err = mean_abs_error(target, out.map)
            loss = ce + err
            value = loss.item()
            if not np.isfinite(value):
                # keep the last good state on disk and stop
                dio.save_checkpoint(snapshot(it), final_path)
                aborted = True
                break
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            losses.append(value)
            trace.write(f"{it},{value!r},{ce.item()!r},{err.item()!r},{lr!r}\n")
            if value < best:
                best = value
                dio.save_checkpoint(snapshot(it + 1), best_path)
    if not aborted:
        dio.save_checkpoint(snapshot(cfg.iterations), final_path)
    return TrainResult(losses=losses, trace_path=trace_path, final_path=final_path,
                       best_path=best_path, model=model, aborted=aborted)


# ---------------------------------------------------------------------------
# evaluation / inference

EVAL_THRESHOLDS = [(i + 1) / 256.0 for i in range(255)]


def predict(model: DsfNet, image: np.ndarray) -> np.ndarray:
    """Saliency map (H x W float in [0, 1]) for one 3 x H x W image."""
    model.eval()
    out = model(Tensor(np.asarray(image, dtype=model.dtype)[None]))
    return out.map.data[0, 0].astype(np.float64)


def evaluate(model: DsfNet, samples) -> seg_metrics.MetricsReport:
    """Per-image metric rows plus a dataset-pooled precision/recall curve."""
    report = seg_metrics.MetricsReport()
    counts = np.zeros((len(EVAL_THRESHOLDS), 3), dtype=np.int64)  # tp, fp, fn
    for i, sample in enumerate(samples):
        pred = predict(model, sample.image)
        truth = sample.mask
        report.add(f"sample_{i:05d}", seg_metrics.score_pair(pred, truth))
        tb = truth.astype(bool)
        for t, thr in enumerate(EVAL_THRESHOLDS):
            pb = pred >= thr
            counts[t, 0] += np.sum(pb & tb)
            counts[t, 1] += np.sum(pb & ~tb)
            counts[t, 2] += np.sum(~pb & tb)
    for thr, (tp, fp, fn) in zip(EVAL_THRESHOLDS, counts):
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        report.pr_points.append((thr, precision, recall))
    return report

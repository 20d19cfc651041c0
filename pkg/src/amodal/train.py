"""Training loop: synthetic-occlusion triplets into the two-head UNet."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch

from . import losses
from .evaluate import DEFAULT_THRESHOLD, MetricsReport, evaluate
from .model import AmodalUNet, ModelConfig, load_checkpoint, save_checkpoint
from .synth import (
    SamplingExhausted,
    Scene,
    SetTag,
    TrainingTriplet,
    build_triplet,
    sample_occlusion_pair,
)

log = logging.getLogger(__name__)

LOSS_KINDS = ("asbu", "gaussian", "ubce", "bce")

# Small schedule for 64x64 synthetic scenes on one CPU core. The default
# learning rate is tuned for long runs on real images and barely moves the
# weights in 2000 steps.
DESK_SCALE = dict(
    learning_rate=0.05,
    batch_size=16,
    iterations=2000,
    crop_size=64,
    base_channels=16,
    depth=4,
    seed=0,
)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    # global gradient-norm ceiling, 0 disables; the first steps from a fresh
    # init otherwise push the net into a constant output it never leaves
    grad_clip: float = 1.0
    batch_size: int = 32
    iterations: int = 2000
    crop_size: int = 256
    set1_probability: float = 0.8
    lambda_weight: float = 5.0
    loss_kind: str = "asbu"
    seed: int = 0
    boundary_radius: int = 1
    feather_radius: int = 1
    overlap_min: float = 0.1
    overlap_max: float = 0.7
    cross_scene: bool = False
    base_channels: int = 16
    depth: int = 4
    checkpoint_every: int = 0
    val_every: int = 0
    threshold: float = DEFAULT_THRESHOLD
    workers: int = 1

    def __post_init__(self):
        if not 0 < self.set1_probability < 1:
            raise ValueError("set1_probability must lie in (0, 1)")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.loss_kind = self.loss_kind.lower()
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(self.crop_size, self.base_channels, self.depth, self.seed)

    @property
    def loss_config(self) -> losses.LossConfig:
        return losses.LossConfig(lambda_weight=self.lambda_weight)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise KeyError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, fields[key].type)
        return cls(**kwargs)


def _coerce(raw, typ):
    if not isinstance(raw, str):
        return raw
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw.strip()


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
    return values


@dataclass
class TrainReport:
    losses: List[float] = field(default_factory=list)
    set_tags: List[str] = field(default_factory=list)
    validation: List[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint_path: Optional[str] = None


def crop_triplet(t: TrainingTriplet, size: int, rng: np.random.Generator) -> TrainingTriplet:
    """Random ``size`` x ``size`` window that contains the boundary centroid.

    Images smaller than ``size`` are zero-padded at the bottom/right first.
    """
    h, w = t.input_mask.shape
    ph, pw = max(0, size - h), max(0, size - w)

    def pad(a):
        widths = [(0, ph), (0, pw)] + [(0, 0)] * (a.ndim - 2)
        return np.pad(a, widths) if ph or pw else a

    arrays = {f.name: pad(getattr(t, f.name)) for f in dataclasses.fields(t) if f.name != "set_tag"}
    H, W = h + ph, w + pw
    anchor = t.boundary if t.boundary.any() else t.input_mask
    if anchor.any():
        cy, cx = (int(round(v)) for v in np.argwhere(anchor).mean(axis=0))
    else:
        cy, cx = h // 2, w // 2
    r_lo, r_hi = max(0, cy - size + 1), min(cy, H - size)
    c_lo, c_hi = max(0, cx - size + 1), min(cx, W - size)
    r0 = int(rng.integers(r_lo, r_hi + 1))
    c0 = int(rng.integers(c_lo, c_hi + 1))
    window = (slice(r0, r0 + size), slice(c0, c0 + size))
    return TrainingTriplet(set_tag=t.set_tag, **{k: a[window] for k, a in arrays.items()})


def make_training_item(scenes: Sequence[Scene], config: TrainConfig, iteration: int,
                       slot: int, max_scene_tries: int = 20) -> TrainingTriplet:
    """Build one cropped triplet from its own ``(seed, iteration, slot)`` stream.

    Seeding per item makes a batch independent of how items are spread
    over workers.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, iteration, slot]))
    tag = SetTag.SET1 if rng.random() < config.set1_probability else SetTag.SET2
    for _ in range(max_scene_tries):
        scene = scenes[rng.integers(len(scenes))]
        donor = None
        if config.cross_scene:
            donor = scenes[rng.integers(len(scenes))]
            if donor.shape != scene.shape:
                continue
        try:
            pair = sample_occlusion_pair(
                scene, rng, config.overlap_min, config.overlap_max, occluder_scene=donor
            )
        except SamplingExhausted:
            continue
        t = build_triplet(scene, pair, tag, config.boundary_radius, config.feather_radius)
        return crop_triplet(t, config.crop_size, rng)
    raise SamplingExhausted(f"iteration {iteration} slot {slot}: no usable scene found")


def batch_tensors(items: Sequence[TrainingTriplet]):
    x = np.stack(
        [
            np.concatenate(
                [t.image.transpose(2, 0, 1), t.input_mask[None], t.boundary[None]]
            )
            for t in items
        ]
    ).astype(np.float32)
    target = np.stack([t.target_mask for t in items]).astype(np.float32)
    weight = np.stack([t.weight_region for t in items]).astype(np.float32)
    return torch.from_numpy(x), torch.from_numpy(target), torch.from_numpy(weight)


def _dump_batch(out_dir, iteration, x, target, weight):
    if out_dir is None:
        return None
    path = os.path.join(out_dir, f"nonfinite_batch_{iteration}.npz")
    np.savez_compressed(path, x=x.numpy(), target=target.numpy(), weight=weight.numpy())
    return path


def train(config: TrainConfig, train_scenes: Sequence[Scene],
          val_scenes: Sequence[Scene] = (), out_dir=None, model: Optional[AmodalUNet] = None):
    """Run SGD with momentum on synthetic-occlusion triplets.

    Returns ``(model, TrainReport)``. When ``out_dir`` is given, the final
    checkpoint (``checkpoint.bin``), periodic checkpoints and an NDJSON
    training log (``train_log.jsonl``) are written there.
    """
    scenes = [s for s in train_scenes if len(s.instances) >= 2 or config.cross_scene]
    if not scenes:
        raise ValueError("no training scene with at least two instances")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    model = model or AmodalUNet(config.model_config)
    model.train()
    opt = torch.optim.SGD(model.parameters(), lr=config.learning_rate, momentum=config.momentum)
    loss_cfg = config.loss_config
    report = TrainReport()
    log_file = open(os.path.join(out_dir, "train_log.jsonl"), "w") if out_dir else None
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    n_set1 = 0
    start = time.perf_counter()
    try:
        for it in range(config.iterations):
            slots = range(config.batch_size)
            if pool is None:
                items = [make_training_item(scenes, config, it, b) for b in slots]
            else:
                items = list(pool.map(lambda b: make_training_item(scenes, config, it, b), slots))
            x, target, weight = batch_tensors(items)
            prob, unc = model(x)
            loss = losses.compute_loss(config.loss_kind, prob, unc, target, weight, loss_cfg)
            value = float(loss.detach())
            if not np.isfinite(value):
                dump = _dump_batch(out_dir, it, x, target, weight)
                raise NonFiniteLoss(f"loss {value} at iteration {it}; batch dumped to {dump}")
            opt.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()

            tags = [t.set_tag.value for t in items]
            n_set1 += tags.count(SetTag.SET1.value)
            report.losses.append(value)
            report.set_tags.extend(tags)
            if log_file:
                rec = {"iter": it, "loss": value, "set1_frac": n_set1 / len(report.set_tags)}
                log_file.write(json.dumps(rec) + "\n")
            step = it + 1
            if config.val_every and val_scenes and step % config.val_every == 0:
                metrics, _ = evaluate(model, val_scenes, config.threshold, config.boundary_radius)
                model.train()
                report.validation.append({"iter": step, **metrics.to_json()})
                log.info("iter %d loss %.5f val %s", step, value, metrics.to_json())
            if out_dir and config.checkpoint_every and step % config.checkpoint_every == 0:
                save_checkpoint(model, os.path.join(out_dir, f"checkpoint_{step:06d}.bin"))
    finally:
        if log_file:
            log_file.close()
        if pool is not None:
            pool.shutdown()
    model.eval()
    report.wall_clock = time.perf_counter() - start
    if out_dir:
        report.checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
        save_checkpoint(model, report.checkpoint_path)
    return model, report


def validate(checkpoint, val_scenes: Sequence[Scene], config: TrainConfig) -> MetricsReport:
    """Score a checkpoint (path or loaded model) on validation scenes."""
    model = load_checkpoint(checkpoint) if isinstance(checkpoint, (str, os.PathLike)) else checkpoint
    metrics, _ = evaluate(model, val_scenes, config.threshold, config.boundary_radius)
    return metrics

"""Behavioral-cloning trainer.

Training pairs follow the horizon objective: an observation assembled
from records up to t predicts the demonstrated actions at t+1 .. t+h,
for every t with t+h inside the demonstration.  With h = 1 the loss is
exactly the single-step MSE.  Checkpoints are selected by lowest
validation MSE (ties resolve to the earliest epoch).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff.tensor import Tensor
from .demos import Demonstration
from .policy import Policy, PolicyConfig
from .sense import NormStats, apply_photometric

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 10
    seeds: tuple[int, ...] = (0, 1, 2)
    k: int = 10
    h: int = 10
    sensor_backbone: str = "feedforward"
    action_head: str = "feedforward"
    augment: bool = True
    grad_clip: float = 5.0
    n_val: int = 10

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lr must be > 0, batch_size and epochs >= 1")

    def policy_config(self, image_size: int = 64) -> PolicyConfig:
        return PolicyConfig(k=self.k, h=self.h, image_size=image_size,
                            sensor_backbone=self.sensor_backbone,
                            action_head=self.action_head)


def window_index(demos: list[Demonstration], h: int) -> list[tuple[int, int]]:
    """All valid (demo, t) pairs; demos shorter than h+1 steps are skipped."""
    pairs = []
    for di, demo in enumerate(demos):
        n = demo.length - h
        if n < 1:
            log.warning("demo %d has %d steps, no valid window for h=%d",
                        di, demo.length, h)
            continue
        pairs.extend((di, t) for t in range(n))
    return pairs


class BatchBuilder:
    """Assembles (images, wrenches, targets) batches from demonstrations."""

    def __init__(self, demos: list[Demonstration], stats: NormStats,
                 k: int, h: int, wrench_scale, augment: bool):
        self.demos = demos
        self.k = k
        self.h = h
        self.augment = augment
        mean = stats.wrench_mean.astype(np.float32)
        std = stats.wrench_std.astype(np.float32)
        gain = (np.asarray(wrench_scale, dtype=np.float64)
                / stats.action_scale).astype(np.float32)
        self.wrench_norm = [((d.w_meas - mean) / std).astype(np.float32) for d in demos]
        self.targets = [(d.actions * gain).astype(np.float32) for d in demos]
        self.images = [d.images for d in demos]
        size = demos[0].images.shape[1] if demos else 64
        self.image_size = size

    def build(self, pairs, rng: np.random.Generator | None = None,
              training: bool = False):
        b = len(pairs)
        k, h, size = self.k, self.h, self.image_size
        images = np.zeros((b, k, size, size), dtype=np.float32)
        wrenches = np.zeros((b, k, 3), dtype=np.float32)
        targets = np.empty((b, h, 3), dtype=np.float32)
        for i, (di, t) in enumerate(pairs):
            lo = max(0, t - k + 1)
            take = t + 1 - lo
            frames = self.images[di][lo:t + 1].astype(np.float32)
            if training and self.augment and rng is not None:
                shift = rng.uniform(-0.2, 0.2)
                contrast = rng.uniform(1.0, 1.2)
                frames = apply_photometric(frames, shift, contrast)
            images[i, k - take:] = frames / 255.0
            wrenches[i, k - take:] = self.wrench_norm[di][lo:t + 1]
            targets[i] = self.targets[di][t + 1:t + 1 + h]
        return images, wrenches, targets


def chunk_loss(policy: Policy, images, wrenches, targets) -> Tensor:
    """Mean squared error over batch x horizon x action elements."""
    pred = policy.forward(Tensor(images), Tensor(wrenches))
    return ad.mse_loss(pred, Tensor(targets))


def validation_mse(policy: Policy, builder: BatchBuilder,
                   pairs: list[tuple[int, int]], batch_size: int = 64) -> float:
    """Exact mean squared error over all validation windows."""
    if not pairs:
        return float("nan")
    sse = 0.0
    count = 0
    with ad.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start:start + batch_size]
            images, wrenches, targets = builder.build(chunk)
            pred = policy.forward(Tensor(images), Tensor(wrenches))
            diff = pred.data.astype(np.float64) - targets.astype(np.float64)
            sse += float(np.sum(diff * diff))
            count += diff.size
    return sse / count


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_mse: float
    wall_seconds: float


@dataclass
class SeedResult:
    seed: int
    epochs: list[EpochLog]
    best_epoch: int
    best_val_mse: float
    checkpoint_path: str


@dataclass
class TrainResult:
    seeds: list[SeedResult]

    def best_checkpoints(self) -> list[str]:
        return [s.checkpoint_path for s in self.seeds]


def train_seed(config: TrainConfig, train_demos: list[Demonstration],
               val_demos: list[Demonstration], stats: NormStats,
               wrench_scale, seed: int, out_dir: str,
               run_id: str = "run") -> SeedResult:
    """Train one seed; returns the per-epoch log and best checkpoint path."""
    image_size = train_demos[0].images.shape[1]
    policy = Policy(config.policy_config(image_size), stats, seed=seed)
    opt = ad.Adam(policy.parameters(), lr=config.lr)

    train_builder = BatchBuilder(train_demos, stats, config.k, config.h,
                                 wrench_scale, config.augment)
    train_pairs = window_index(train_demos, config.h)
    if not train_pairs:
        raise TrainingError("no valid training windows")
    val_builder = BatchBuilder(val_demos, stats, config.k, config.h,
                               wrench_scale, augment=False)
    val_pairs = window_index(val_demos, config.h)

    logs: list[EpochLog] = []
    best_epoch = -1
    best_val = float("inf")
    best_weights: dict[str, np.ndarray] | None = None
    params = policy.parameters()

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order_rng = np.random.default_rng([seed, epoch, 0x0DD5])
        aug_rng = np.random.default_rng([seed, epoch, 0xA3A3])
        order = order_rng.permutation(len(train_pairs))
        loss_sum = 0.0
        batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_pairs[j] for j in order[start:start + config.batch_size]]
            images, wrenches, targets = train_builder.build(
                batch, rng=aug_rng, training=True)
            loss = chunk_loss(policy, images, wrenches, targets)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at seed {seed} epoch {epoch} "
                    f"batch {batches} (windows {batch[:2]}...)")
            ad.backward(loss)
            if config.grad_clip > 0:
                ad.clip_grad_norm(params, config.grad_clip)
            opt.step()
            opt.zero_grad()
            loss_sum += value
            batches += 1
        val_mse = validation_mse(policy, val_builder, val_pairs)
        wall = time.perf_counter() - t0
        logs.append(EpochLog(epoch, loss_sum / batches, val_mse, wall))
        log.info("seed %d epoch %d train %.5f val %.5f (%.1fs)",
                 seed, epoch, loss_sum / batches, val_mse, wall)
        if val_pairs:
            if val_mse < best_val:
                best_val = val_mse
                best_epoch = epoch
                best_weights = {n: p.data.copy() for n, p in policy.named_parameters()}
        else:
            best_epoch = epoch
            best_val = float("nan")
            best_weights = {n: p.data.copy() for n, p in policy.named_parameters()}

    named = dict(policy.named_parameters())
    for name, arr in best_weights.items():
        named[name].data = arr
    path = f"{out_dir}/{run_id}_{seed}_best.pbck"
    policy.save(path, extra_meta={
        "best_epoch": best_epoch,
        "val_mse": best_val,
        "train_loss_final": logs[-1].train_loss,
        "epochs": config.epochs,
        "lr": config.lr,
        "batch_size": config.batch_size,
    })
    return SeedResult(seed, logs, best_epoch, best_val, path)


def train(config: TrainConfig, train_demos: list[Demonstration],
          val_demos: list[Demonstration], stats: NormStats, wrench_scale,
          out_dir: str, run_id: str = "run") -> TrainResult:
    """Train every seed in the config sequentially."""
    results = [train_seed(config, train_demos, val_demos, stats, wrench_scale,
                          seed, out_dir, run_id)
               for seed in config.seeds]
    return TrainResult(results)


def write_report(path: str, result: TrainResult) -> None:
    """CSV: seed, epoch, train_loss, val_mse, wall_seconds."""
    with open(path, "w") as f:
        f.write("seed,epoch,train_loss,val_mse,wall_seconds\n")
        for sr in result.seeds:
            for row in sr.epochs:
                f.write(f"{sr.seed},{row.epoch},{row.train_loss:.8f},"
                        f"{row.val_mse:.8f},{row.wall_seconds:.3f}\n")

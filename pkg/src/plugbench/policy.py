"""Action-prediction model: vision backbone + sensor backbone -> feature
vector -> action head emitting a chunk of future target wrenches.

One small trainable CNN serves as the vision backbone; four sensor
backbones and three action heads are selectable.  Inputs are histories
of length k (zero-filled where the episode is younger than k); outputs
are h normalized wrench actions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import nn
from .autodiff.tensor import Tensor
from .sense import NormStats

VISION_FEATURE = 128
SENSOR_FEATURE = 128
D_FEATURE = VISION_FEATURE + SENSOR_FEATURE

SENSOR_BACKBONES = ("feedforward", "lstm", "cnn1d", "rocket")
ACTION_HEADS = ("feedforward", "transformer_encoder", "transformer_full")

ACTION_CLAMP = 1.5

ROCKET_KERNELS = 512
ROCKET_FEATURES = 2 * ROCKET_KERNELS  # proportion-positive and max per kernel


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    k: int = 10
    h: int = 10
    d_action: int = 3
    image_size: int = 64
    vision: str = "cnn_small"
    sensor_backbone: str = "feedforward"
    action_head: str = "feedforward"

    def __post_init__(self):
        if self.k < 1 or self.h < 1:
            raise PolicyError(f"k and h must be >= 1, got k={self.k}, h={self.h}")
        if self.vision != "cnn_small":
            raise PolicyError(f"unknown vision backbone {self.vision!r}")
        if self.sensor_backbone not in SENSOR_BACKBONES:
            raise PolicyError(f"unknown sensor backbone {self.sensor_backbone!r}")
        if self.action_head not in ACTION_HEADS:
            raise PolicyError(f"unknown action head {self.action_head!r}")

    def to_dict(self) -> dict:
        return {"k": self.k, "h": self.h, "d_action": self.d_action,
                "image_size": self.image_size, "vision": self.vision,
                "sensor_backbone": self.sensor_backbone,
                "action_head": self.action_head}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# vision backbone
# ---------------------------------------------------------------------------

class VisionCNN(nn.Module):
    """k stacked grayscale frames as input channels -> 128 features."""

    def __init__(self, k: int, image_size: int, rng, dtype=np.float32):
        self.conv1 = nn.Conv2d(k, 16, 5, stride=2, rng=rng, dtype=dtype)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, rng=rng, dtype=dtype)
        self.conv3 = nn.Conv2d(32, 64, 3, stride=2, rng=rng, dtype=dtype)
        self.proj = nn.Linear(64, VISION_FEATURE, rng, dtype)
        self.image_size = image_size
        self.k = k

    def forward(self, images: Tensor) -> Tensor:
        n, c, hh, ww = images.shape
        if c != self.k or hh != self.image_size or ww != self.image_size:
            raise PolicyError(
                f"vision input {images.shape} does not match k={self.k}, "
                f"size={self.image_size}")
        x = ad.relu(self.conv1(images))
        x = ad.relu(self.conv2(x))
        x = ad.relu(self.conv3(x))
        return self.proj(nn.global_avg_pool_2d(x))


# ---------------------------------------------------------------------------
# sensor backbones
# ---------------------------------------------------------------------------

class SensorFeedforward(nn.Module):
    def __init__(self, k: int, d_action: int, rng, dtype=np.float32):
        self.fc1 = nn.Linear(k * d_action, 128, rng, dtype)
        self.fc2 = nn.Linear(128, 128, rng, dtype)
        self.fc3 = nn.Linear(128, 64, rng, dtype)
        self.proj = nn.Linear(64, SENSOR_FEATURE, rng, dtype)

    def forward(self, wrenches: Tensor) -> Tensor:
        n, k, d = wrenches.shape
        x = ad.reshape(wrenches, (n, k * d))
        x = ad.relu(self.fc1(x))
        x = ad.relu(self.fc2(x))
        x = ad.relu(self.fc3(x))
        return self.proj(x)


class SensorLSTM(nn.Module):
    def __init__(self, k: int, d_action: int, rng, dtype=np.float32):
        self.lstm = nn.LSTM(d_action, SENSOR_FEATURE, layers=3, rng=rng, dtype=dtype)

    def forward(self, wrenches: Tensor) -> Tensor:
        return self.lstm(wrenches)


class SensorCNN1d(nn.Module):
    """Three 1-D convolutions over the time axis, then adaptive averaging.

    Histories shorter than the kernel extent rely on the same-padding
    zeros, consistent with the zero-masking of missing history.
    """

    def __init__(self, k: int, d_action: int, rng, dtype=np.float32):
        self.conv1 = nn.Conv1d(d_action, 64, 5, rng, pad=2, dtype=dtype)
        self.conv2 = nn.Conv1d(64, 128, 5, rng, pad=2, dtype=dtype)
        self.conv3 = nn.Conv1d(128, 64, 3, rng, pad=1, dtype=dtype)
        self.proj = nn.Linear(64, SENSOR_FEATURE, rng, dtype)

    def forward(self, wrenches: Tensor) -> Tensor:
        x = ad.transpose(wrenches, (0, 2, 1))  # (N, d, k)
        x = ad.relu(self.conv1(x))
        x = ad.relu(self.conv2(x))
        x = ad.relu(self.conv3(x))
        return self.proj(nn.global_avg_pool_1d(x))


def _generate_rocket_kernels(d_action: int, rng, dtype):
    """Frozen random kernels: lengths in {1,3,5}, dilation up to 2,
    centered normal weights across all taps and channels."""
    lengths = rng.choice(np.array([1, 3, 5]), size=ROCKET_KERNELS)
    dilations = rng.integers(1, 3, size=ROCKET_KERNELS)
    weights = []
    biases = rng.uniform(-1.0, 1.0, size=ROCKET_KERNELS).astype(dtype)
    for ln in lengths:
        w = rng.standard_normal((int(ln), d_action))
        weights.append((w - w.mean()).astype(dtype))
    return lengths, dilations, weights, biases


class SensorRocket(nn.Module):
    """Random convolutional kernel features (frozen) with a trained projection.

    Each kernel yields two pooled features: the proportion of positive
    outputs and the maximum, giving 1024 features projected to 128.
    """

    def __init__(self, k: int, d_action: int, rng, dtype=np.float32):
        self.k = k
        self.d_action = d_action
        self.dtype = dtype
        lengths, dilations, weights, biases = _generate_rocket_kernels(d_action, rng, dtype)
        self._lengths = lengths
        self._dilations = dilations
        self._weights = weights
        self._biases = biases
        self._groups = self._build_groups()
        self.proj = nn.Linear(ROCKET_FEATURES, SENSOR_FEATURE, rng, dtype)

    def _build_groups(self):
        groups = {}
        for i in range(ROCKET_KERNELS):
            key = (int(self._lengths[i]), int(self._dilations[i]))
            groups.setdefault(key, []).append(i)
        packed = []
        for (ln, dil), idx in sorted(groups.items()):
            w = np.stack([self._weights[i] for i in idx])          # (G, ln, d)
            b = self._biases[np.array(idx)]                        # (G,)
            packed.append((ln, dil, np.array(idx), w, b))
        return packed

    def features(self, wrenches: np.ndarray) -> np.ndarray:
        """(N, k, d) -> (N, 1024) frozen features, plain numpy."""
        n, k, d = wrenches.shape
        feats = np.empty((n, ROCKET_KERNELS, 2), dtype=self.dtype)
        for ln, dil, idx, w, b in self._groups:
            extent = (ln - 1) * dil
            left = extent // 2
            right = extent - left
            xp = np.pad(wrenches, ((0, 0), (left, right), (0, 0)))
            taps = np.stack([xp[:, j * dil:j * dil + k, :] for j in range(ln)], axis=2)
            y = np.einsum("ntld,gld->ngt", taps, w) + b[None, :, None]
            feats[:, idx, 0] = (y > 0).mean(axis=2).astype(self.dtype)
            feats[:, idx, 1] = y.max(axis=2).astype(self.dtype)
        return feats.reshape(n, ROCKET_FEATURES)

    def forward(self, wrenches: Tensor) -> Tensor:
        raw = self.features(np.asarray(wrenches.data, dtype=self.dtype))
        return self.proj(Tensor(raw, dtype=self.dtype))


# ---------------------------------------------------------------------------
# action heads
# ---------------------------------------------------------------------------

class HeadFeedforward(nn.Module):
    """Two hidden layers sized at build time so the three head variants
    carry comparable parameter counts at the working feature width."""

    HIDDEN = (512, 256)

    def __init__(self, d_feature: int, h: int, d_action: int, rng, dtype=np.float32):
        h1, h2 = self.HIDDEN
        self.fc1 = nn.Linear(d_feature, h1, rng, dtype)
        self.fc2 = nn.Linear(h1, h2, rng, dtype)
        self.out = nn.Linear(h2, h * d_action, rng, dtype)
        self.h = h
        self.d_action = d_action

    def forward(self, x: Tensor) -> Tensor:
        y = ad.relu(self.fc1(x))
        y = ad.relu(self.fc2(y))
        y = self.out(y)
        return ad.reshape(y, (x.shape[0], self.h, self.d_action))


class HeadTransformerEncoder(nn.Module):
    """Feature replicated across the horizon with a learned temporal
    embedding, processed by a 2-layer encoder (4 heads, width 128)."""

    D_MODEL = 128
    N_HEAD = 4
    LAYERS = 2
    D_FF = 256

    def __init__(self, d_feature: int, h: int, d_action: int, rng, dtype=np.float32):
        self.in_proj = nn.Linear(d_feature, self.D_MODEL, rng, dtype)
        self.temporal = Tensor(
            (0.02 * rng.standard_normal((h, self.D_MODEL))).astype(dtype),
            requires_grad=True, dtype=dtype)
        self.layers = [nn.TransformerEncoderLayer(self.D_MODEL, self.N_HEAD, self.D_FF,
                                                  rng, dtype) for _ in range(self.LAYERS)]
        self.out = nn.Linear(self.D_MODEL, d_action, rng, dtype)
        self.h = h

    def forward(self, x: Tensor) -> Tensor:
        z = self.in_proj(x)                                   # (N, d1)
        n = z.shape[0]
        seq = ad.add(ad.reshape(z, (n, 1, self.D_MODEL)), self.temporal)  # (N, h, d1)
        for layer in self.layers:
            seq = layer(seq)
        return self.out(seq)                                  # (N, h, d_action)


class HeadTransformerFull(nn.Module):
    """Encoder-decoder: the feature as a length-1 source sequence, h learned
    query embeddings as the decoder input (width 64, 2 layers, 4 heads)."""

    D_MODEL = 64
    N_HEAD = 4
    LAYERS = 2
    D_FF = 320

    def __init__(self, d_feature: int, h: int, d_action: int, rng, dtype=np.float32):
        self.in_proj = nn.Linear(d_feature, self.D_MODEL, rng, dtype)
        self.queries = Tensor(
            (0.02 * rng.standard_normal((h, self.D_MODEL))).astype(dtype),
            requires_grad=True, dtype=dtype)
        self.enc_layers = [nn.TransformerEncoderLayer(self.D_MODEL, self.N_HEAD, self.D_FF,
                                                      rng, dtype) for _ in range(self.LAYERS)]
        self.dec_layers = [nn.TransformerDecoderLayer(self.D_MODEL, self.N_HEAD, self.D_FF,
                                                      rng, dtype) for _ in range(self.LAYERS)]
        self.out = nn.Linear(self.D_MODEL, d_action, rng, dtype)
        self.h = h

    def forward(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        src = ad.reshape(self.in_proj(x), (n, 1, self.D_MODEL))
        for layer in self.enc_layers:
            src = layer(src)
        batch_zeros = Tensor(np.zeros((n, 1, 1), dtype=x.data.dtype), dtype=x.data.dtype)
        tgt = ad.add(batch_zeros, self.queries)               # (N, h, d3)
        for layer in self.dec_layers:
            tgt = layer(tgt, src)
        return self.out(tgt)


_SENSOR_CLASSES = {
    "feedforward": SensorFeedforward,
    "lstm": SensorLSTM,
    "cnn1d": SensorCNN1d,
    "rocket": SensorRocket,
}

_HEAD_CLASSES = {
    "feedforward": HeadFeedforward,
    "transformer_encoder": HeadTransformerEncoder,
    "transformer_full": HeadTransformerFull,
}


# ---------------------------------------------------------------------------
# observation and composed policy
# ---------------------------------------------------------------------------

@dataclass
class Observation:
    """k-slot history (oldest first), zero-filled where t < k."""
    images: np.ndarray          # (k, H, W) float32 in [0, 1]
    wrenches: np.ndarray        # (k, d_action) float32, normalized
    stats_fingerprint: str = ""


def build_observation(image_history, wrench_history, k: int,
                      stats_fingerprint: str = "",
                      image_size: int = 64, d_action: int = 3) -> Observation:
    """Assemble the latest k frames/wrenches, zero-masking missing steps.

    image_history entries are (H, W) uint8; wrench_history entries are
    already-normalized wrench vectors.  The most recent entry comes last.
    """
    images = np.zeros((k, image_size, image_size), dtype=np.float32)
    wrenches = np.zeros((k, d_action), dtype=np.float32)
    take = min(k, len(image_history))
    for i in range(take):
        images[k - take + i] = np.asarray(image_history[len(image_history) - take + i],
                                          dtype=np.float32) / 255.0
        wrenches[k - take + i] = wrench_history[len(wrench_history) - take + i]
    return Observation(images, wrenches, stats_fingerprint)


class Policy(nn.Module):
    def __init__(self, config: PolicyConfig, stats: NormStats, seed: int,
                 dtype=np.float32):
        rng = np.random.default_rng([seed, 0xB0DE])
        self.vision = VisionCNN(config.k, config.image_size, rng, dtype)
        self.sensor = _SENSOR_CLASSES[config.sensor_backbone](
            config.k, config.d_action, rng, dtype)
        self.head = _HEAD_CLASSES[config.action_head](
            D_FEATURE, config.h, config.d_action, rng, dtype)
        self.config = config
        self.stats = stats
        self.seed = seed
        self.dtype = dtype

    def forward(self, images: Tensor, wrenches: Tensor) -> Tensor:
        """(N,k,H,W) images in [0,1] and (N,k,d) normalized wrenches ->
        (N,h,d) normalized action chunks."""
        feat = ad.concat([self.vision(images), self.sensor(wrenches)], axis=1)
        return self.head(feat)

    def predict(self, obs: Observation) -> np.ndarray:
        """Single-observation inference: returns a clamped (h, d) chunk."""
        if obs.stats_fingerprint and obs.stats_fingerprint != self.stats.fingerprint():
            raise PolicyError(
                f"normalization stats mismatch: observation carries "
                f"{obs.stats_fingerprint}, policy has {self.stats.fingerprint()}")
        with ad.no_grad():
            out = self.forward(
                Tensor(obs.images[None].astype(self.dtype), dtype=self.dtype),
                Tensor(obs.wrenches[None].astype(self.dtype), dtype=self.dtype))
        chunk = np.asarray(out.data[0], dtype=np.float32)
        return np.clip(chunk, -ACTION_CLAMP, ACTION_CLAMP)

    # -- persistence --------------------------------------------------------

    def save(self, path: str, extra_meta: dict | None = None) -> None:
        tensors = {name: p.data for name, p in self.named_parameters()}
        meta = {
            "policy_config": self.config.to_dict(),
            "norm_stats": self.stats.to_dict(),
            "seed": self.seed,
        }
        if extra_meta:
            meta.update(extra_meta)
        ad.save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path: str) -> "Policy":
        tensors, meta = ad.load_checkpoint(path)
        config = PolicyConfig.from_dict(meta["policy_config"])
        stats = NormStats.from_dict(meta["norm_stats"])
        policy = cls(config, stats, seed=int(meta.get("seed", 0)))
        named = dict(policy.named_parameters())
        if set(named) != set(tensors):
            missing = set(named) ^ set(tensors)
            raise PolicyError(f"checkpoint/model parameter mismatch: {sorted(missing)[:5]}")
        for name, arr in tensors.items():
            if named[name].data.shape != arr.shape:
                raise PolicyError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{arr.shape} vs {named[name].data.shape}")
            named[name].data = arr.astype(np.float32)
        return policy


def head_parameter_counts(d_feature: int = D_FEATURE, h: int = 10,
                          d_action: int = 3) -> dict[str, int]:
    rng = np.random.default_rng(0)
    return {name: cls(d_feature, h, d_action, rng).parameter_count()
            for name, cls in _HEAD_CLASSES.items()}

"""Masked-noise training, deep-ensemble training and Monte Carlo vote counts
for smoothed classifiers (single model, mask self-ensemble, deep ensemble)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np

from . import nn
from .certmath import top_two
from .data import Dataset
from .errors import ConfigError, DataError
from .masks import MaskSet, MaskSpec, binomial_mask, continuous_mask, fixed_mask_set
from .seeding import derive_seed, rng_for

Mode = Literal["single", "self_ensemble", "deep_ensemble"]
MODES = ("single", "self_ensemble", "deep_ensemble")

# stream tags keep noise, training and mask randomness apart
_NOISE_TAG = 0x401E
_TRAIN_TAG = 0x7A11
# target rows per forward call during vote sampling
_ROWS = 1024


@dataclass(frozen=True)
class SmoothingConfig:
    sigma: float = 0.4
    mode: Mode = "single"
    m: int = 1
    mask_kind: str = "binomial"
    keep_ratio: float = 0.9
    n: int = 1000
    beta: float = 0.001
    base_seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigError("sigma must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.m < 1 or self.n < 1:
            raise ConfigError("m and n must be >= 1")
        if not 0 < self.beta < 1:
            raise ConfigError("beta must lie in (0, 1)")
        if self.mode == "single" and self.m != 1:
            raise ConfigError("mode=single requires m=1")
        MaskSpec(self.mask_kind, self.keep_ratio)

    def mask_spec(self, T: int) -> MaskSpec:
        return MaskSpec(self.mask_kind, self.keep_ratio, T, self.base_seed)

    def training_mask(self, T: int) -> MaskSpec | None:
        """Masks are only used in training for the self-ensemble."""
        return self.mask_spec(T) if self.mode == "self_ensemble" else None


@dataclass(frozen=True)
class SampleCounts:
    counts: np.ndarray
    n_total: int
    top: int
    runner_up: int

    @classmethod
    def from_counts(cls, counts) -> "SampleCounts":
        counts = np.asarray(counts, dtype=np.int64)
        a, b = top_two(counts)
        return cls(counts, int(counts.sum()), a, b)


@dataclass
class SmoothedClassifier:
    """A base classifier (or ensemble of them) evaluated under shared noise.

    ``logits`` takes inputs that are *already noised*; all masks, or all
    member models, see the same noisy series. Parameters are treated as
    read-only, so one instance may serve concurrent callers.
    """

    models: list
    sigma: float
    masks: MaskSet | None = None

    def __post_init__(self):
        if not self.models:
            raise ConfigError("need at least one model")
        if self.masks is not None and len(self.models) != 1:
            raise ConfigError("a mask self-ensemble wraps exactly one model")

    @property
    def mode(self) -> Mode:
        if self.masks is not None:
            return "self_ensemble"
        return "deep_ensemble" if len(self.models) > 1 else "single"

    @property
    def width(self) -> int:
        """Base-classifier evaluations per input."""
        return self.masks.m if self.masks is not None else len(self.models)

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.masks is not None:
            M = self.masks.masks
            stacked = (M[:, None, :] * x[None, :, :]).reshape(-1, x.shape[1])
            out = nn.forward(self.models[0], stacked).reshape(M.shape[0], x.shape[0], -1)
            return out.mean(axis=0)
        if len(self.models) == 1:
            return nn.forward(self.models[0], x)
        return np.mean([nn.forward(p, x) for p in self.models], axis=0)

    def logits_and_input_grad(self, x: np.ndarray, dlogits_fn) -> tuple:
        """Ensemble logits and the input gradient of a loss on them.

        ``dlogits_fn(ensemble_logits)`` returns d(loss)/d(ensemble logits).
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        B, T = x.shape
        if self.masks is not None:
            M = self.masks.masks
            m = M.shape[0]
            stacked = (M[:, None, :] * x[None, :, :]).reshape(-1, T)
            ens = nn.forward(self.models[0], stacked).reshape(m, B, -1).mean(axis=0)
            up = dlogits_fn(ens) / m
            _, dx = nn.input_vjp(self.models[0], stacked, lambda _: np.tile(up, (m, 1)))
            return ens, (dx.reshape(m, B, T) * M[:, None, :]).sum(axis=0)
        if len(self.models) == 1:
            ens = nn.forward(self.models[0], x)
            _, dx = nn.input_vjp(self.models[0], x, lambda _: dlogits_fn(ens))
            return ens, dx
        ens = np.mean([nn.forward(p, x) for p in self.models], axis=0)
        up = dlogits_fn(ens) / len(self.models)
        dx = np.zeros_like(x)
        for p in self.models:
            dx += nn.input_vjp(p, x, lambda _: up)[1]
        return ens, dx

    def predict_noisy(self, x: np.ndarray) -> np.ndarray:
        return self.logits(x).argmax(axis=1)

    def vote(self, x: np.ndarray, n: int, rng: np.random.Generator, num_labels: int) -> np.ndarray:
        """Vote counts over ``n`` noise draws for a single series ``x``."""
        x = np.asarray(x, dtype=np.float64)
        counts = np.zeros(num_labels, dtype=np.int64)
        chunk = max(1, _ROWS // self.width)
        done = 0
        while done < n:
            c = min(chunk, n - done)
            if self.sigma > 0:
                noisy = x[None, :] + self.sigma * rng.standard_normal((c, x.size))
            else:
                noisy = np.broadcast_to(x, (c, x.size))
            counts += np.bincount(self.predict_noisy(noisy), minlength=num_labels)
            done += c
        return counts


def ensemble_logits(setup: SmoothedClassifier, x_noisy: np.ndarray) -> np.ndarray:
    return setup.logits(x_noisy)


def build_smoothed(models: Sequence, cfg: SmoothingConfig, T: int) -> SmoothedClassifier:
    models = list(models)
    if cfg.mode == "self_ensemble":
        if len(models) != 1:
            raise ConfigError("self_ensemble needs exactly one checkpoint")
        return SmoothedClassifier(models, cfg.sigma, fixed_mask_set(cfg.base_seed, cfg.m, cfg.mask_spec(T)))
    if cfg.mode == "deep_ensemble" and len(models) != cfg.m:
        raise ConfigError(f"deep_ensemble with m={cfg.m} needs {cfg.m} checkpoints, got {len(models)}")
    if cfg.mode == "single" and len(models) != 1:
        raise ConfigError("single mode needs exactly one checkpoint")
    return SmoothedClassifier(models, cfg.sigma)


def noise_rng(base_seed: int, sample_id: int) -> np.random.Generator:
    """Noise stream of one test sample; draw ``i`` is row ``i`` of the stream."""
    return rng_for(base_seed, _NOISE_TAG, sample_id)


def sample_counts(
    setup: SmoothedClassifier, x: np.ndarray, cfg: SmoothingConfig, num_labels: int, sample_id: int = 0
) -> SampleCounts:
    counts = setup.vote(x, cfg.n, noise_rng(cfg.base_seed, sample_id), num_labels)
    return SampleCounts.from_counts(counts)


def augment_batch(batch: np.ndarray, sigma: float, mask_spec: MaskSpec | None, seed: int) -> np.ndarray:
    """``M * (x + eps)`` with fresh noise and a fresh mask for every row.

    Noise is drawn before masks, so a keep ratio of 1 gives exactly the
    plain noise augmentation for the same seed.
    """
    x = np.asarray(batch, dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    out = x + sigma * rng.standard_normal(x.shape) if sigma > 0 else x.copy()
    if mask_spec is None or mask_spec.keep_ratio >= 1.0:
        return out
    B, T = x.shape
    if mask_spec.kind == "binomial":
        seeds = rng.integers(0, 2**63, size=B)
        M = np.stack([binomial_mask(T, mask_spec.keep_ratio, int(s)) for s in seeds])
    else:
        seeds = rng.integers(0, 2**63, size=B)
        M = np.stack([continuous_mask(T, mask_spec.keep_ratio, int(s)) for s in seeds])
    return M * out


def _require_train(ds: Dataset):
    if len(ds) == 0:
        raise DataError(f"{ds.name}: empty training split")


def train_smoothed(
    ds: Dataset,
    model_cfg: nn.ModelConfig,
    train_cfg: nn.TrainConfig,
    sigma: float,
    mask_spec: MaskSpec | None = None,
    log=None,
) -> nn.TrainResult:
    """Train one base classifier on masked, noised copies of ``ds``.

    A fresh noise draw and a fresh mask are used for every series at every
    step. ``sigma=0`` with no mask is ordinary clean training.
    """
    _require_train(ds)
    if ds.length != model_cfg.input_length or ds.num_labels != model_cfg.num_labels:
        raise ConfigError("model config does not match dataset shape")

    def batches(epoch):
        rng = rng_for(train_cfg.seed, _TRAIN_TAG, epoch)
        for xb, yb in nn.epoch_batches(ds.X, ds.y, train_cfg.batch_size, rng):
            yield augment_batch(xb, sigma, mask_spec, int(rng.integers(0, 2**63))), yb

    return nn.train(nn.init_model(model_cfg), train_cfg, batches, log=log)


def member_configs(model_cfg: nn.ModelConfig, train_cfg: nn.TrainConfig, j: int):
    """Seeds for deep-ensemble member ``j`` (1-based)."""
    return (
        replace(model_cfg, seed=derive_seed(model_cfg.seed, j) % 2**63),
        replace(train_cfg, seed=derive_seed(train_cfg.seed, j) % 2**63),
    )


def train_deep_ensemble(
    ds: Dataset, model_cfg: nn.ModelConfig, train_cfg: nn.TrainConfig, sigma: float, m: int, log=None
) -> list:
    """``m`` independently seeded models, each with plain noise augmentation."""
    if m < 2:
        raise ConfigError("a deep ensemble needs m >= 2")
    results = []
    for j in range(1, m + 1):
        mc, tc = member_configs(model_cfg, train_cfg, j)
        results.append(train_smoothed(ds, mc, tc, sigma, None, log=log))
    return results

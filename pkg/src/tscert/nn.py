"""A small 1D convolutional classifier with hand-written reverse-mode gradients.

Architecture: ``[conv1d('same') -> ReLU] * blocks -> global average pool ->
affine head``. Activations are kept channels-last, shape (batch, T, channels).
Parameters live in a plain ``dict[str, np.ndarray]`` with a fixed key order so
that gradient accumulation and serialization are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CompatibilityError, ConfigError, DivergenceError

CHECKPOINT_VERSION = 1
# rows per forward chunk; bounds the im2col buffer
_CHUNK = 512

Params = dict


@dataclass(frozen=True)
class ModelConfig:
    input_length: int
    num_labels: int
    blocks: tuple = ((16, 7), (16, 5))
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(int(v) for v in b) for b in self.blocks))
        if self.input_length < 1 or self.num_labels < 2:
            raise ConfigError("input_length must be >= 1 and num_labels >= 2")
        if not self.blocks:
            raise ConfigError("model needs at least one conv block")
        for channels, kernel in self.blocks:
            if channels < 1:
                raise ConfigError(f"conv block channels must be >= 1, got {channels}")
            if kernel % 2 == 0 or kernel > self.input_length or kernel < 1:
                raise ConfigError(f"kernel width must be odd and <= T={self.input_length}, got {kernel}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: Literal["sgd", "adam"] = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    params: Params
    losses: list = field(default_factory=list)


def param_count(params: Params) -> int:
    return int(sum(v.size for v in params.values()))


def init_model(cfg: ModelConfig) -> Params:
    """He-normal conv weights, fan-in scaled head, zero biases."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    c_in = 1
    for i, (c_out, k) in enumerate(cfg.blocks):
        fan_in = c_in * k
        params[f"conv{i}.W"] = rng.standard_normal((c_in, k, c_out)) * np.sqrt(2.0 / fan_in)
        params[f"conv{i}.b"] = np.zeros(c_out)
        c_in = c_out
    params["head.W"] = rng.standard_normal((c_in, cfg.num_labels)) * np.sqrt(1.0 / c_in)
    params["head.b"] = np.zeros(cfg.num_labels)
    return params


def _n_blocks(params: Params) -> int:
    return sum(1 for key in params if key.endswith(".W")) - 1


def _check_input(params: Params, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise CompatibilityError(f"expected a (batch, T) matrix, got shape {x.shape}")
    k = params["conv0.W"].shape[1]
    if x.shape[1] < k:
        raise CompatibilityError(f"series length {x.shape[1]} shorter than first kernel {k}")
    return x


def _forward(params: Params, x: np.ndarray, keep: bool):
    h = x[:, :, None]
    cache = []
    for i in range(_n_blocks(params)):
        W, b = params[f"conv{i}.W"], params[f"conv{i}.b"]
        c_in, k, c_out = W.shape
        if h.shape[2] != c_in:
            raise CompatibilityError(f"conv{i} expects {c_in} channels, got {h.shape[2]}")
        pad = k // 2
        hp = np.pad(h, ((0, 0), (pad, pad), (0, 0)))
        B, T = h.shape[0], h.shape[1]
        cols = sliding_window_view(hp, k, axis=1).reshape(B * T, c_in * k)
        a = (cols @ W.reshape(c_in * k, c_out)).reshape(B, T, c_out) + b
        if keep:
            cache.append((cols, a))
        h = np.maximum(a, 0.0)
    pooled = h.mean(axis=1)
    logits = pooled @ params["head.W"] + params["head.b"]
    return logits, (pooled, cache, x.shape)


def forward(params: Params, batch: np.ndarray) -> np.ndarray:
    """Logits for each row of ``batch``; shape (batch, k)."""
    x = _check_input(params, batch)
    if x.shape[0] <= _CHUNK:
        return _forward(params, x, keep=False)[0]
    return np.concatenate(
        [_forward(params, x[s : s + _CHUNK], keep=False)[0] for s in range(0, x.shape[0], _CHUNK)]
    )


def _backward(params: Params, state, dlogits: np.ndarray, want_params: bool):
    pooled, cache, (B, T) = state
    grads = {}
    if want_params:
        grads["head.W"] = pooled.T @ dlogits
        grads["head.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["head.W"].T
    dh = np.broadcast_to(dpooled[:, None, :] / T, (B, T, dpooled.shape[1]))
    for i in reversed(range(len(cache))):
        cols, a = cache[i]
        W = params[f"conv{i}.W"]
        c_in, k, c_out = W.shape
        da = (dh * (a > 0)).reshape(B * T, c_out)
        if want_params:
            grads[f"conv{i}.W"] = (cols.T @ da).reshape(W.shape)
            grads[f"conv{i}.b"] = da.sum(axis=0)
        dcols = (da @ W.reshape(c_in * k, c_out).T).reshape(B, T, c_in, k)
        pad = k // 2
        dhp = np.zeros((B, T + 2 * pad, c_in))
        for j in range(k):
            dhp[:, j : j + T, :] += dcols[:, :, :, j]
        dh = dhp[:, pad : pad + T, :]
    return grads, dh[:, :, 0]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    logp = log_softmax(logits)
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def loss_and_grad(params: Params, batch: np.ndarray, labels: np.ndarray):
    x = _check_input(params, batch)
    logits, state = _forward(params, x, keep=True)
    loss, dlogits = cross_entropy(logits, labels)
    grads, _ = _backward(params, state, dlogits, want_params=True)
    return loss, {key: grads[key] for key in params}


def input_vjp(params: Params, batch: np.ndarray, dlogits_fn: Callable) -> tuple:
    """Logits and d(loss)/d(input), where ``dlogits_fn(logits)`` supplies
    d(loss)/d(logits). Used by attacks and ensemble gradients."""
    x = _check_input(params, batch)
    logits, state = _forward(params, x, keep=True)
    _, dx = _backward(params, state, dlogits_fn(logits), want_params=False)
    return logits, dx


def epoch_batches(X: np.ndarray, y: np.ndarray, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(X.shape[0])
    for s in range(0, order.size, batch_size):
        idx = order[s : s + batch_size]
        yield X[idx], y[idx]


def train(
    params: Params,
    cfg: TrainConfig,
    batches: Callable[[int], Iterable],
    log: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Minimise mean cross-entropy over ``batches(epoch)`` for ``cfg.epochs``.

    ``batches`` is called once per epoch (0-based) and must yield
    ``(batch, labels)`` pairs; it owns shuffling and augmentation so the loop
    itself has no randomness.
    """
    params = {key: value.copy() for key, value in params.items()}
    lr = cfg.learning_rate
    m = {key: np.zeros_like(v) for key, v in params.items()}
    v = {key: np.zeros_like(val) for key, val in params.items()}
    step = 0
    losses = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for xb, yb in batches(epoch):
            loss, grads = loss_and_grad(params, xb, yb)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, float(loss))
            step += 1
            for key in params:
                g = grads[key]
                if cfg.optimizer == "sgd":
                    params[key] -= lr * g
                    continue
                m[key] = cfg.beta1 * m[key] + (1 - cfg.beta1) * g
                v[key] = cfg.beta2 * v[key] + (1 - cfg.beta2) * g * g
                m_hat = m[key] / (1 - cfg.beta1**step)
                v_hat = v[key] / (1 - cfg.beta2**step)
                params[key] -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            total += float(loss) * len(yb)
            count += len(yb)
        mean_loss = total / max(count, 1)
        if not np.isfinite(mean_loss):
            raise DivergenceError(epoch, mean_loss)
        losses.append(mean_loss)
        if log is not None:
            log(epoch, mean_loss)
    return TrainResult(params, losses)


def predict(params: Params, batch: np.ndarray) -> np.ndarray:
    return forward(params, batch).argmax(axis=1)


# Checkpoint layout (numpy .npz, arrays stored little-endian float64 '<f8'):
#   __meta__   : JSON string {"format": "tscert-checkpoint", "version", "config", "extra"}
#   <param key>: one array per parameter, keys as produced by init_model
def save_checkpoint(path, cfg: ModelConfig, params: Params, extra: dict | None = None) -> Path:
    path = Path(path)
    meta = {
        "format": "tscert-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "param_keys": list(params),
        "extra": extra or {},
    }
    arrays = {key: np.ascontiguousarray(val, dtype="<f8") for key, val in params.items()}
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple:
    """Return ``(ModelConfig, params, extra)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        if "__meta__" not in data:
            raise CompatibilityError(f"{path}: not a tscert checkpoint")
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != "tscert-checkpoint" or "version" not in meta:
            raise CompatibilityError(f"{path}: missing format/version header")
        if meta["version"] != CHECKPOINT_VERSION:
            raise CompatibilityError(f"{path}: unsupported checkpoint version {meta['version']}")
        params = {key: np.array(data[key], dtype=np.float64) for key in meta["param_keys"]}
    cfg = ModelConfig(**meta["config"])
    expected = init_model(cfg)
    for key, val in expected.items():
        if key not in params or params[key].shape != val.shape:
            raise CompatibilityError(f"{path}: parameter {key} inconsistent with config")
    return cfg, params, meta.get("extra", {})

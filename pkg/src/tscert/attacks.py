"""PGD in l2 against plain and smoothed classifiers.

Smoothed targets are attacked through expectation over transformation: each
step averages the input gradient of the cross-entropy over ``eot_draws``
noise samples (masks or ensemble members share each noise sample). Success
is judged against the target's hard decision, a fresh ``n_eval``-draw
majority vote for smoothed targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AttackError, ConfigError
from .nn import softmax
from .seeding import rng_for

_BATCH = 32


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.5
    steps: int = 40
    step_size: float | None = None  # default 2 * epsilon / steps
    eot_draws: int = 16
    n_eval: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be >= 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.step_size is not None and not self.step_size > 0:
            raise ConfigError("step_size must be > 0")
        if self.eot_draws < 1 or self.n_eval < 1:
            raise ConfigError("eot_draws and n_eval must be >= 1")


@dataclass
class AttackResult:
    adversarial: np.ndarray
    success: bool
    distance: float
    queries: int
    random_steps: int = 0


def _ce_dlogits(labels):
    def fn(logits):
        g = softmax(logits)
        g[np.arange(len(labels)), labels] -= 1.0
        return g

    return fn


def decide(setup, X: np.ndarray, n_eval: int, rng: np.random.Generator) -> np.ndarray:
    """Hard decisions of ``setup`` for each row of ``X``."""
    X = np.atleast_2d(X)
    if setup.sigma == 0:
        return setup.predict_noisy(X)
    B, T = X.shape
    noisy = X[None, :, :] + setup.sigma * rng.standard_normal((n_eval, B, T))
    preds = setup.predict_noisy(noisy.reshape(-1, T)).reshape(n_eval, B)
    k = int(preds.max()) + 1
    counts = np.stack([np.bincount(preds[:, b], minlength=k) for b in range(B)])
    return counts.argmax(axis=1)


def _expected_grad(setup, X, labels, eot, rng):
    B, T = X.shape
    if setup.sigma == 0:
        _, g = setup.logits_and_input_grad(X, _ce_dlogits(labels))
        return g, 1
    noisy = (X[None, :, :] + setup.sigma * rng.standard_normal((eot, B, T))).reshape(-1, T)
    _, g = setup.logits_and_input_grad(noisy, _ce_dlogits(np.tile(labels, eot)))
    return g.reshape(eot, B, T).mean(axis=0), eot


def pgd_l2_batch(setup, X, labels, cfg: AttackConfig, rng: np.random.Generator, epsilon=None) -> list:
    """Attack each row of ``X``; ``epsilon`` may be a per-row array."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    B = X.shape[0]
    eps = np.broadcast_to(np.asarray(cfg.epsilon if epsilon is None else epsilon, dtype=np.float64), (B,))
    if np.any(eps < 0):
        raise ConfigError("epsilon must be >= 0")
    eta = np.full(B, cfg.step_size) if cfg.step_size is not None else 2.0 * eps / max(cfg.steps, 1)
    width = getattr(setup, "width", 1)

    x_adv = X.copy()
    queries = 0
    random_steps = np.zeros(B, dtype=np.int64)
    live = eps > 0
    for _ in range(cfg.steps if live.any() else 0):
        g, draws = _expected_grad(setup, x_adv, labels, cfg.eot_draws, rng)
        queries += draws * width
        if not np.all(np.isfinite(g)):
            raise AttackError("non-finite input gradient")
        norms = np.linalg.norm(g, axis=1)
        flat = norms == 0
        if flat.any():
            r = rng.standard_normal((int(flat.sum()), X.shape[1]))
            g[flat] = r
            norms[flat] = np.linalg.norm(r, axis=1)
            random_steps += flat & live
        x_adv = x_adv + (eta / norms)[:, None] * g
        delta = x_adv - X
        dn = np.linalg.norm(delta, axis=1)
        scale = np.where(dn > eps, eps / np.where(dn > 0, dn, 1.0), 1.0)
        x_adv = X + delta * scale[:, None]

    pred = decide(setup, x_adv, cfg.n_eval, rng)
    queries += (1 if setup.sigma == 0 else cfg.n_eval) * width
    dist = np.linalg.norm(x_adv - X, axis=1)
    return [
        AttackResult(x_adv[b], bool(pred[b] != labels[b]), float(dist[b]), queries, int(random_steps[b]))
        for b in range(B)
    ]


def pgd_l2(setup, x, label: int, cfg: AttackConfig, rng: np.random.Generator | None = None) -> AttackResult:
    rng = rng if rng is not None else rng_for(cfg.seed, 0)
    return pgd_l2_batch(setup, np.asarray(x)[None, :], [label], cfg, rng)[0]


def attack_sweep(setups: dict, ds, epsilons, cfg: AttackConfig, indices=None) -> list:
    """ASR rows ``(setup, epsilon, asr, n_samples)``.

    Every (setup, epsilon) pair is an independent restart from the clean
    input; the same noise seeds are reused across setups for pairing.
    """
    idx = np.arange(len(ds)) if indices is None else np.asarray(indices)
    rows = []
    for name, setup in setups.items():
        for e_i, eps in enumerate(epsilons):
            hits = 0
            for s in range(0, idx.size, _BATCH):
                chunk = idx[s : s + _BATCH]
                rng = rng_for(cfg.seed, e_i, s)
                res = pgd_l2_batch(setup, ds.X[chunk], ds.y[chunk], cfg, rng, epsilon=float(eps))
                hits += sum(r.success for r in res)
            rows.append((name, float(eps), hits / idx.size, int(idx.size)))
    return rows


def write_asr_table(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("setup\tepsilon\tasr\tn_samples\n")
        for name, eps, asr, n in rows:
            fh.write(f"{name}\t{eps!r}\t{asr!r}\t{n}\n")

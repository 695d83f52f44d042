"""Binary keep-masks for masked-noise training and self-ensembles.

Two constructions:

* binomial: every timestamp kept independently with probability ``p``;
* continuous: exactly ``Z = round((1 - p) * T)`` timestamps zeroed, grouped in
  runs no longer than ``ceil(Z / 2)`` and separated by at least one kept step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ConfigError
from .seeding import derive_seed

MaskKind = Literal["binomial", "continuous"]


@dataclass(frozen=True)
class MaskSpec:
    kind: MaskKind = "binomial"
    keep_ratio: float = 0.9
    length: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("binomial", "continuous"):
            raise ConfigError(f"unknown mask kind {self.kind!r}")
        if not 0.0 <= self.keep_ratio <= 1.0:
            raise ConfigError(f"keep_ratio must lie in [0, 1], got {self.keep_ratio}")
        if self.length < 1:
            raise ConfigError("mask length must be >= 1")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def binomial_mask(T: int, p: float, seed: int) -> np.ndarray:
    return (_rng(seed).random(T) < p).astype(np.float64)


def zero_count(T: int, p: float) -> int:
    # round half up; the epsilon absorbs representation error in (1 - p) * T
    return min(T, int(math.floor((1.0 - p) * T + 0.5 + 1e-9)))


def continuous_mask(T: int, p: float, seed: int) -> np.ndarray:
    """Mask with an exact number of zeros laid out as short runs.

    Run lengths come from capped stick-breaking, then runs and the kept
    gaps between them are placed by a uniform stars-and-bars draw, so no
    rejection loop is needed and runs never touch (touching runs would merge
    into one longer than the cap).
    """
    rng = _rng(seed)
    Z = zero_count(T, p)
    mask = np.ones(T)
    if Z == 0:
        return mask
    if Z == T:
        return np.zeros(T)
    cap = math.ceil(Z / 2)
    ones = T - Z
    max_runs = ones + 1  # runs need a kept step between neighbours

    runs = []
    remaining = Z
    while remaining:
        slots_left = max_runs - len(runs)
        lo = max(1, remaining - (slots_left - 1) * cap)
        hi = min(cap, remaining)
        length = int(rng.integers(lo, hi + 1))
        runs.append(length)
        remaining -= length
    runs = [runs[i] for i in rng.permutation(len(runs))]

    q = len(runs)
    # q+1 gaps; the q-1 interior ones need >= 1 kept step
    free = ones - (q - 1)
    bars = np.sort(rng.choice(free + q, size=q, replace=False))
    gaps = np.diff(np.concatenate(([-1], bars, [free + q]))) - 1
    gaps[1:-1] += 1

    pos = 0
    for gap, length in zip(gaps[:-1], runs):
        pos += int(gap)
        mask[pos : pos + length] = 0.0
        pos += length
    return mask


def make_mask(kind: MaskKind, T: int, p: float, seed: int) -> np.ndarray:
    if kind == "binomial":
        return binomial_mask(T, p, seed)
    if kind == "continuous":
        return continuous_mask(T, p, seed)
    raise ConfigError(f"unknown mask kind {kind!r}")


@dataclass(frozen=True)
class MaskSet:
    """``m`` fixed masks shared by every input during certification.

    Only ``(base_seed, m, kind, keep_ratio, length)`` are ever persisted; the
    bits are regenerated on load.
    """

    base_seed: int
    spec: MaskSpec
    masks: np.ndarray  # (m, T), read-only

    @property
    def m(self) -> int:
        return self.masks.shape[0]

    def describe(self) -> dict:
        return {
            "base_seed": self.base_seed,
            "kind": self.spec.kind,
            "keep_ratio": self.spec.keep_ratio,
            "m": self.m,
            "length": self.spec.length,
        }


def mask_seed(base_seed: int, i: int) -> int:
    return derive_seed(base_seed, 0x3A5C, i)


def fixed_mask_set(base_seed: int, m: int, spec: MaskSpec) -> MaskSet:
    """Masks ``i = 1..m`` seeded by ``mask_seed(base_seed, i)``.

    The i-th mask depends only on ``(base_seed, i)``, so the set for a
    smaller ``m`` is a prefix of the set for a larger one.
    """
    if m < 1:
        raise ConfigError("mask set size m must be >= 1")
    masks = np.stack(
        [make_mask(spec.kind, spec.length, spec.keep_ratio, mask_seed(base_seed, i)) for i in range(1, m + 1)]
    )
    masks.setflags(write=False)
    return MaskSet(base_seed, spec, masks)

"""Stable seed derivation shared by masks, noise and ensemble members."""

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, *indices: int) -> int:
    """Mix ``base_seed`` with a path of integer indices into a 64-bit seed.

    Pure integer arithmetic, so the result is identical on every platform
    and across interpreter restarts (unlike ``hash``).
    """
    h = splitmix64(int(base_seed) & _MASK64)
    for i in indices:
        h = splitmix64(h ^ (int(i) & _MASK64))
    return h


def rng_for(base_seed: int, *indices: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(base_seed, *indices)))

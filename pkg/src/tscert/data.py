"""Univariate time-series datasets: UCR text files and synthetic generators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

from .errors import EmptyInputError, FormatError, ParseError
from .seeding import rng_for

Split = Literal["train", "test"]

_DELIMITERS = {"tab": "\t", "comma": ","}


@dataclass(frozen=True)
class TimeSeries:
    values: np.ndarray
    label: int


@dataclass
class Dataset:
    """A set of equal-length labeled series.

    ``X`` has shape (n, T); ``y`` holds contiguous label indices in
    ``0..num_labels-1``. ``label_names`` keeps the original file labels when
    the data was loaded from disk.
    """

    name: str
    X: np.ndarray
    y: np.ndarray
    num_labels: int
    split: Split = "train"
    label_names: tuple = field(default=())

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise FormatError(f"{self.name}: X must be (n, T) and y (n,)")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_labels):
            raise FormatError(f"{self.name}: labels outside 0..{self.num_labels - 1}")
        if not np.all(np.isfinite(self.X)):
            raise ParseError(f"{self.name}: non-finite values")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def length(self) -> int:
        return self.X.shape[1]

    @property
    def series(self) -> Iterator[TimeSeries]:
        for values, label in zip(self.X, self.y):
            yield TimeSeries(values, int(label))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.name, self.X[idx], self.y[idx], self.num_labels, self.split, self.label_names)


def load_ucr_file(path, delimiter: str = "tab", split: Split = "train") -> Dataset:
    """Read a UCR-format text file: one series per line, label first."""
    try:
        sep = _DELIMITERS[delimiter]
    except KeyError:
        raise ValueError(f"delimiter must be one of {sorted(_DELIMITERS)}, got {delimiter!r}") from None
    path = Path(path)
    raw_labels, rows = [], []
    width = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(sep)]
            if len(fields) < 2:
                raise FormatError(f"{path}:{lineno}: expected a label and at least one value")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise FormatError(
                    f"{path}:{lineno}: ragged row with {len(fields) - 1} values, expected {width - 1}"
                )
            try:
                label = float(fields[0])
                values = [float(f) for f in fields[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            if not label.is_integer():
                raise ParseError(f"{path}:{lineno}: label {fields[0]!r} is not an integer")
            if not all(math.isfinite(v) for v in values):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            raw_labels.append(int(label))
            rows.append(values)
    if not rows:
        raise EmptyInputError(f"{path}: no records")

    names = sorted(set(raw_labels))
    index = {name: i for i, name in enumerate(names)}
    y = np.array([index[lab] for lab in raw_labels])
    return Dataset(path.stem, np.array(rows), y, len(names), split, tuple(names))


def generate_cbf(n_per_label: int, T: int = 128, seed: int = 0, split: Split = "train") -> Dataset:
    """Cylinder-bell-funnel series; labels 0/1/2 = cylinder/bell/funnel.

    Each shape has amplitude ``6 + eta`` on a window ``[a, b]`` with
    ``a ~ U[T/8, T/4]`` and ``b - a ~ U[T/4, 3T/4]``, plus unit Gaussian noise.
    """
    if T < 64:
        raise ValueError(f"CBF needs T >= 64, got {T}")
    rng = rng_for(seed, 0xCBF)
    t = np.arange(T, dtype=np.float64)
    n = 3 * n_per_label
    y = np.repeat(np.arange(3), n_per_label)

    a = rng.uniform(T / 8, T / 4, size=n)
    b = a + rng.uniform(T / 4, 3 * T / 4, size=n)
    eta = rng.standard_normal(n)
    noise = rng.standard_normal((n, T))

    window = (t >= a[:, None]) & (t <= b[:, None])
    ramp_up = (t - a[:, None]) / (b - a)[:, None]
    shape = np.where(y[:, None] == 0, 1.0, np.where(y[:, None] == 1, ramp_up, 1.0 - ramp_up))
    X = (6.0 + eta)[:, None] * window * shape + noise
    return Dataset("CBF", X, y, 3, split)


def overlap_prototypes(T: int, k: int, sep: float) -> np.ndarray:
    """k centred Gaussian bumps, closest pair exactly ``sep`` apart in l2.

    Bump ``j`` has sign ``(-1)**j`` and width ``T/8 * (1 + j // 2)``. The
    classes differ in shape rather than position, so pooled (translation
    invariant) models can separate them.
    """
    t = np.arange(T, dtype=np.float64)
    j = np.arange(k)
    signs = np.where(j % 2 == 0, 1.0, -1.0)
    widths = (T / 8.0) * (1 + j // 2)
    bumps = signs[:, None] * np.exp(-0.5 * ((t[None, :] - (T - 1) / 2.0) / widths[:, None]) ** 2)
    dists = np.linalg.norm(bumps[:, None, :] - bumps[None, :, :], axis=-1)
    closest = dists[~np.eye(k, dtype=bool)].min()
    return bumps * (sep / closest)


def generate_overlap(
    n_per_label: int, T: int, k: int = 3, sep: float = 4.0, seed: int = 0, split: Split = "train"
) -> Dataset:
    """Prototype-plus-unit-noise dataset whose difficulty is set by ``sep``."""
    if sep < 0:
        raise ValueError("sep must be >= 0")
    if k < 2:
        raise ValueError("k must be >= 2")
    protos = overlap_prototypes(T, k, sep)
    rng = rng_for(seed, 0x0E1A)
    y = np.repeat(np.arange(k), n_per_label)
    X = protos[y] + rng.standard_normal((y.size, T))
    return Dataset(f"Overlap-k{k}-sep{sep:g}", X, y, k, split)


def znormalize(d: Dataset) -> Dataset:
    """Per-series zero mean / unit (population) std; constant series -> 0."""
    mu = d.X.mean(axis=1, keepdims=True)
    sd = d.X.std(axis=1, keepdims=True)
    centered = d.X - mu
    safe = np.where(sd > 0, sd, 1.0)
    X = np.where(sd > 0, centered / safe, 0.0)
    return Dataset(d.name, X, d.y.copy(), d.num_labels, d.split, d.label_names)

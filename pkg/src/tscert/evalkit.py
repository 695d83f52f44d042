"""Certification over a dataset, certified-accuracy metrics, margin
statistics for variance-reduction checks, and ablation runners."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .certmath import certify_counts
from .data import Dataset
from .masks import MaskSpec, fixed_mask_set
from .seeding import rng_for
from .smoothing import SmoothedClassifier, SmoothingConfig, sample_counts

RECORD_FIELDS = ("index", "true", "pred", "radius", "abstained", "pa_lower", "pb_upper")


@dataclass(frozen=True)
class CertificationRecord:
    index: int
    true: int
    pred: int
    radius: float
    abstained: bool
    pa_lower: float
    pb_upper: float

    @property
    def correct(self) -> bool:
        return self.pred == self.true and not self.abstained


def _certify_range(setup, X, y, ids, cfg, num_labels):
    out = []
    for i, x, t in zip(ids, X, y):
        counts = sample_counts(setup, x, cfg, num_labels, sample_id=int(i))
        cert = certify_counts(counts, cfg.sigma, cfg.beta)
        out.append(
            CertificationRecord(
                int(i),
                int(t),
                cert.prediction,
                cert.radius.radius,
                cert.abstained,
                cert.bounds.pA_lower,
                cert.bounds.pB_upper,
            )
        )
    return out


def certify_dataset(
    setup: SmoothedClassifier, ds: Dataset, cfg: SmoothingConfig, indices=None, workers: int = 1
) -> list:
    """One record per sample. Noise seeds depend only on (base_seed, index),
    so the output is independent of ``workers``."""
    ids = np.arange(len(ds)) if indices is None else np.asarray(indices)
    if workers <= 1 or ids.size < 2 * workers:
        return _certify_range(setup, ds.X[ids], ds.y[ids], ids, cfg, ds.num_labels)
    parts = np.array_split(ids, workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_certify_range, setup, ds.X[p], ds.y[p], p, cfg, ds.num_labels) for p in parts
        ]
        return [rec for f in futures for rec in f.result()]


def acr(records: Sequence[CertificationRecord]) -> float:
    """Average certified radius; wrong or abstained predictions count as 0."""
    if not records:
        raise ValueError("acr of an empty record list")
    return float(sum(r.radius for r in records if r.correct) / len(records))


def certified_accuracy(records: Sequence[CertificationRecord], r: float) -> float:
    if r < 0:
        raise ValueError("radius must be >= 0")
    if not records:
        return 0.0
    return sum(1 for rec in records if rec.correct and rec.radius >= r) / len(records)


def accuracy_radius_curve(records, grid) -> list:
    grid = [float(g) for g in grid]
    if grid != sorted(grid):
        raise ValueError("radius grid must be ascending")
    return [(g, certified_accuracy(records, g)) for g in grid]


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(RECORD_FIELDS) + "\n")
        for r in records:
            fh.write(
                f"{r.index}\t{r.true}\t{r.pred}\t{r.radius!r}\t{int(r.abstained)}\t{r.pa_lower!r}\t{r.pb_upper!r}\n"
            )


def read_records(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if tuple(reader.fieldnames or ()) != RECORD_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            CertificationRecord(
                int(row["index"]),
                int(row["true"]),
                int(row["pred"]),
                float(row["radius"]),
                bool(int(row["abstained"])),
                float(row["pa_lower"]),
                float(row["pb_upper"]),
            )
            for row in reader
        ]


def write_curve(path, curve) -> None:
    with open(path, "w") as fh:
        fh.write("radius\tcertified_accuracy\n")
        for r, a in curve:
            fh.write(f"{r!r}\t{a!r}\n")


@dataclass(frozen=True)
class MarginStats:
    top: int
    margins: np.ndarray  # (draws, k-1): c_A - c_i for every i != A
    min_margin: np.ndarray
    mean: float
    variance: float
    p_positive: float


def margin_stats(setup: SmoothedClassifier, x: np.ndarray, draws: int, rng: np.random.Generator) -> MarginStats:
    """Margins of the ensemble logits under ``draws`` shared-noise samples.

    ``A`` is the label with the largest mean logit across draws; the summary
    uses the smallest margin per draw, since ``A`` wins a draw exactly when
    that minimum is positive.
    """
    if draws < 2:
        raise ValueError("need at least two draws")
    x = np.asarray(x, dtype=np.float64)
    noisy = x[None, :] + setup.sigma * rng.standard_normal((draws, x.size))
    logits = setup.logits(noisy)
    top = int(logits.mean(axis=0).argmax())
    others = [i for i in range(logits.shape[1]) if i != top]
    margins = logits[:, [top]] - logits[:, others]
    low = margins.min(axis=1)
    return MarginStats(top, margins, low, float(low.mean()), float(low.var(ddof=1)), float((low > 0).mean()))


def _summary(records, grid):
    return {
        "acr": acr(records),
        "accuracy": certified_accuracy(records, 0.0),
        "curve": accuracy_radius_curve(records, grid) if grid is not None else None,
    }


def ablate_ensemble_size(
    ds: Dataset, model, sizes, cfg: SmoothingConfig, indices=None, grid=None, workers: int = 1
) -> list:
    """Rows ``{m, acr, accuracy, curve}`` for self-ensembles of each size.

    Mask sets come from one base seed, so the size-m set is a prefix of the
    larger ones and noise seeds are shared, making the rows paired.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("ensemble sizes must be sorted")
    rows = []
    for m in sizes:
        masks = fixed_mask_set(cfg.base_seed, m, cfg.mask_spec(ds.length))
        setup = SmoothedClassifier([model], cfg.sigma, masks)
        recs = certify_dataset(setup, ds, cfg, indices, workers)
        rows.append({"m": m, **_summary(recs, grid)})
    return rows


def ablate_keep_ratio(
    ds: Dataset,
    model,
    ratios,
    cfg: SmoothingConfig,
    kinds=("binomial", "continuous"),
    indices=None,
    grid=None,
    workers: int = 1,
) -> list:
    """Rows ``{kind, p, acr, accuracy, curve}``, one per (kind, ratio).

    ``model`` is either fixed parameters or a callable ``(kind, p) -> params``
    that supplies a model trained at that keep ratio.
    """
    rows = []
    for kind in kinds:
        for p in ratios:
            if not 0 <= p <= 1:
                raise ValueError("keep ratios must lie in [0, 1]")
            params = model(kind, p) if callable(model) else model
            spec = MaskSpec(kind, float(p), ds.length, cfg.base_seed)
            setup = SmoothedClassifier([params], cfg.sigma, fixed_mask_set(cfg.base_seed, cfg.m, spec))
            recs = certify_dataset(setup, ds, cfg, indices, workers)
            rows.append({"kind": kind, "p": float(p), **_summary(recs, grid)})
    return rows


def subsample(ds: Dataset, count: int, seed: int) -> np.ndarray:
    """Sorted random subset of indices (all of them when count >= len)."""
    if count <= 0 or count >= len(ds):
        return np.arange(len(ds))
    return np.sort(rng_for(seed, 0x5AB).choice(len(ds), size=count, replace=False))

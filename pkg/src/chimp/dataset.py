"""Datasets: synthetic generation from a target measure, CSV persistence.

Synthetic rows are uniform on [0, 1]^n; labels are the target measure's
Choquet integral of each row plus Gaussian noise scaled as a multiple of the
noiseless-label standard deviation.  Rows depend only on (seed, M, n), so
sweeping noise levels re-labels the same rows, and a zero multiplier
reproduces the noiseless labels bit for bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .integral import chi_sort_batch
from .measure import FuzzyMeasure, validate

DEFAULT_MULTIPLIERS = (0.0, 0.01, 0.05, 0.1, 0.3, 0.5)


@dataclass(frozen=True)
class NoiseSpec:
    """Label-noise sweep: Gaussian sigma as multiples of the label sigma."""

    multipliers: tuple[float, ...] = DEFAULT_MULTIPLIERS
    seed: int | None = None

    def __post_init__(self):
        mults = tuple(float(m) for m in self.multipliers)
        if len(mults) == 0 or any(m < 0 or not np.isfinite(m) for m in mults):
            raise ValueError("noise multipliers must be a nonempty list of finite reals >= 0")
        object.__setattr__(self, "multipliers", mults)


@dataclass(frozen=True)
class Dataset:
    n: int
    rows: np.ndarray  # (M, n)
    labels: np.ndarray  # (M,)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        labels = np.asarray(self.labels, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != self.n:
            raise ValueError(f"rows must have shape (M, {self.n}), got {rows.shape}")
        if labels.shape != (rows.shape[0],):
            raise ValueError("rows and labels must have the same length")
        if not (np.isfinite(rows).all() and np.isfinite(labels).all()):
            raise ValueError("rows and labels must be finite")
        rows = rows.copy()
        labels = labels.copy()
        rows.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.rows.shape[0]


def generate_sweep(target: FuzzyMeasure, m_samples: int, noise: NoiseSpec,
                   seed: int) -> list[Dataset]:
    """One dataset per noise multiplier, all sharing the same rows.

    A single standard-normal perturbation vector is scaled per multiplier
    (common random numbers), so sweeping the level degrades the labels
    monotonically instead of redrawing the noise at every level.
    """
    if validate(target):
        raise ValueError("target measure must be a valid capacity")
    if m_samples < 1:
        raise ValueError("need at least one sample")
    rng_rows = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    rows = rng_rows.uniform(0.0, 1.0, (m_samples, target.n))
    clean = chi_sort_batch(target, rows)
    sigma_y = float(np.std(clean))
    noise_seed = noise.seed if noise.seed is not None else seed
    z = np.random.default_rng(
        np.random.SeedSequence(noise_seed, spawn_key=(1,))).normal(size=m_samples)
    out = []
    for mult in noise.multipliers:
        labels = clean + mult * sigma_y * z
        out.append(Dataset(
            target.n, rows, labels,
            provenance={
                "kind": "synthetic",
                "target_values": target.values.tolist(),
                "noise_multiplier": mult,
                "label_sigma": sigma_y,
                "seed": seed,
                "noise_seed": noise_seed,
            },
        ))
    return out


def generate(target: FuzzyMeasure, m_samples: int, noise: NoiseSpec, seed: int) -> Dataset:
    """Synthetic dataset at a single noise level.

    The NoiseSpec must contain exactly one multiplier here; use
    :func:`generate_sweep` for the multi-level sweep.
    """
    if len(noise.multipliers) != 1:
        raise ValueError(
            f"generate() needs exactly one noise multiplier, got {len(noise.multipliers)}; "
            "use generate_sweep() for a sweep"
        )
    return generate_sweep(target, m_samples, noise, seed)[0]


def save_dataset_csv(data: Dataset, path) -> None:
    """CSV with header h_1,...,h_n,label at full double precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"h_{i + 1}" for i in range(data.n)] + ["label"])
        for row, label in zip(data.rows, data.labels):
            writer.writerow([f"{x:.17e}" for x in row] + [f"{label:.17e}"])


def load_dataset_csv(path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty dataset file")
        if header[-1] != "label" or header[:-1] != [f"h_{i + 1}" for i in range(len(header) - 1)]:
            raise ValueError(f"{path}: expected header h_1,...,h_n,label, got {header}")
        n = len(header) - 1
        rows, labels = [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != n + 1:
                raise ValueError(f"{path}:{line_no}: expected {n + 1} fields, got {len(rec)}")
            rows.append([float(x) for x in rec[:-1]])
            labels.append(float(rec[-1]))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return Dataset(n, np.array(rows), np.array(labels),
                   provenance={"kind": "ingested", "path": str(path)})

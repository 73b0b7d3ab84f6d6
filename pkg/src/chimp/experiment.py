"""Synthetic learning study: recover known target measures from noisy labels.

Four target measures with disparate behavior (soft-max, mean, soft-mean,
arbitrary) label uniform random data at six noise levels; each cell is fit
`trials` times from fresh initializations and an 80/20 reshuffled split, and
the mean squared errors against the *noiseless* labels and against the target
measure's values are averaged over trials.  All cells and trials run in
lockstep through the batched SGD engine, so the full grid is one vectorized
computation.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import NoiseSpec
from .integral import chi_sort_batch
from .measure import FuzzyMeasure
from .network import integrand_rows, materialize_flat
from .training import TrainConfig, init_flat_raw, run_sgd_flat

TRAIN_FRACTION = 0.8


def target_measures() -> dict[str, FuzzyMeasure]:
    """The four three-source targets: soft-max, mean, soft-mean, arbitrary."""
    third = 1.0 / 3.0
    return {
        "FM1": FuzzyMeasure(3, [0, 0.7, 0.7, 0.9, 0.7, 0.9, 0.9, 1.0]),
        "FM2": FuzzyMeasure(3, [0, third, third, 2 * third, third, 2 * third, 2 * third, 1.0]),
        "FM3": FuzzyMeasure(3, [0, 0.1, 0.1, 0.3, 0.1, 0.3, 0.3, 1.0]),
        "FM4": FuzzyMeasure(3, [0, 0.1, 0.2, 0.3, 0.3, 0.5, 0.7, 1.0]),
    }


@dataclass
class Experiment1Result:
    fm_names: list[str]
    multipliers: list[float]
    trials: int
    train_mse: np.ndarray  # (F, L) mean over trials, vs noiseless labels
    test_mse: np.ndarray  # (F, L)
    fm_mse: np.ndarray  # (F, L) mean squared error of the learned measure values
    per_trial: np.ndarray  # (F, L, T, 3) the unaveraged metrics
    failures: list = field(default_factory=list)  # (fm, multiplier, trial, epoch, step)

    def to_csv(self, path) -> None:
        """One row per target measure; metric-by-noise-level columns."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["fm"]
            for metric in ("train", "test", "fmvar"):
                header += [f"{metric}_{m:g}" for m in self.multipliers]
            writer.writerow(header)
            for f, name in enumerate(self.fm_names):
                row = [name]
                for block in (self.train_mse, self.test_mse, self.fm_mse):
                    row += [f"{x:.17e}" for x in block[f]]
                writer.writerow(row)


def run_experiment1(cfg: TrainConfig, noise: NoiseSpec | None = None,
                    m_samples: int = 300,
                    targets: dict[str, FuzzyMeasure] | None = None) -> Experiment1Result:
    """Full (measure x noise x trial) grid in one lockstep engine run."""
    noise = noise or NoiseSpec()
    targets = targets or target_measures()
    names = list(targets)
    mults = list(noise.multipliers)
    n = next(iter(targets.values())).n
    if any(t.n != n for t in targets.values()):
        raise ValueError("all target measures must share the same number of sources")
    n_fm, n_lvl, n_trial = len(names), len(mults), cfg.trials
    m_train = int(round(TRAIN_FRACTION * m_samples))

    rng_rows = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    rows = rng_rows.uniform(0.0, 1.0, (m_samples, n))
    o_pool = integrand_rows(rows)

    clean = {name: chi_sort_batch(targets[name], rows) for name in names}
    sigma = {name: float(np.std(clean[name])) for name in names}
    noise_seed = noise.seed if noise.seed is not None else cfg.seed

    nbatch = n_fm * n_lvl * n_trial
    size = 1 << n
    ids = np.empty((nbatch, m_train), dtype=np.int64)
    labels = np.empty((nbatch, m_train))
    raw0 = np.empty((nbatch, size))
    test_ids = np.empty((nbatch, m_samples - m_train), dtype=np.int64)
    noisy = np.empty((n_fm, n_lvl, m_samples))

    b = 0
    for f, name in enumerate(names):
        # one perturbation vector per target, scaled across the sweep
        z = np.random.default_rng(
            np.random.SeedSequence(noise_seed, spawn_key=(1, f))).normal(size=m_samples)
        for l, mult in enumerate(mults):
            noisy[f, l] = clean[name] + mult * sigma[name] * z
            for t in range(n_trial):
                rng = np.random.default_rng(
                    np.random.SeedSequence(cfg.seed, spawn_key=(2, f, l, t)))
                raw0[b] = init_flat_raw(n, cfg, rng)
                perm = rng.permutation(m_samples)
                ids[b] = perm[:m_train]
                test_ids[b] = perm[m_train:]
                labels[b] = noisy[f, l][ids[b]]
                b += 1

    res = run_sgd_flat(o_pool, ids, labels, raw0, n, cfg.learning_rate, cfg.epochs,
                       batch_mode=cfg.batch_mode, momentum=cfg.momentum)
    g_final, _ = materialize_flat(res.raw, n)

    per_trial = np.full((n_fm, n_lvl, n_trial, 3), np.nan)
    failed = {b for b, _, _ in res.failures}
    b = 0
    for f, name in enumerate(names):
        truth = clean[name]
        target_vals = targets[name].values
        for l in range(n_lvl):
            for t in range(n_trial):
                if b not in failed:
                    y_train = o_pool[ids[b]] @ g_final[b]
                    y_test = o_pool[test_ids[b]] @ g_final[b]
                    per_trial[f, l, t, 0] = np.mean((y_train - truth[ids[b]]) ** 2)
                    per_trial[f, l, t, 1] = np.mean((y_test - truth[test_ids[b]]) ** 2)
                    per_trial[f, l, t, 2] = np.mean((g_final[b][1:] - target_vals[1:]) ** 2)
                b += 1

    failures = []
    for b, epoch, step in res.failures:
        f, rem = divmod(b, n_lvl * n_trial)
        l, t = divmod(rem, n_trial)
        failures.append((names[f], mults[l], t, epoch, step))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-failed cells average to nan
        means = np.nanmean(per_trial, axis=2)
    return Experiment1Result(
        fm_names=names,
        multipliers=mults,
        trials=n_trial,
        train_mse=means[:, :, 0],
        test_mse=means[:, :, 1],
        fm_mse=means[:, :, 2],
        per_trial=per_trial,
        failures=failures,
    )

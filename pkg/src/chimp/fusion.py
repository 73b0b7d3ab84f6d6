"""Decision-level fusion of classifier posteriors with a learned measure.

K source models each emit C class posteriors per sample.  For class c the
fusion input is the K-vector of the models' class-c posteriors; training rows
pair that vector with a one-vs-rest 0/1 label, so a shared measure (or one
measure per class) learns how much to trust each model and each model
coalition.  Prediction takes the argmax over the fused per-class scores.
Evaluation is fold-based cross validation with stratified fold assignment.

Two synthetic fixtures mimic the qualitative regimes of interest: a pair of
complementary sources that are each only half right (fusion must beat both),
and many near-identical strong sources (fusion should learn a mean-like,
interaction-free measure).
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .measure import FuzzyMeasure
from .network import integrand_rows, materialize_flat
from .training import TrainConfig, init_flat_raw, run_sgd_flat
from .xai import build_report


@dataclass(frozen=True)
class FusionTask:
    """Aligned posterior matrices of K models over C classes.

    posteriors: (K, M, C) in [0, 1]; labels: (M,) class ids in 0..C-1;
    folds: optional (M,) fold id per row (assigned at run time when None).
    """

    posteriors: np.ndarray
    labels: np.ndarray
    ids: tuple[str, ...]
    model_names: tuple[str, ...]
    folds: np.ndarray | None = None
    mode: str = "shared"  # or "per-class"

    def __post_init__(self):
        post = np.asarray(self.posteriors, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if post.ndim != 3:
            raise ValueError(f"posteriors must have shape (K, M, C), got {post.shape}")
        k, m, c = post.shape
        if labels.shape != (m,):
            raise ValueError("labels must align with the posterior rows")
        if np.any((labels < 0) | (labels >= c)):
            raise ValueError(f"labels must be class ids in 0..{c - 1}")
        if np.any(post < 0) or np.any(post > 1) or not np.isfinite(post).all():
            raise ValueError("posteriors must lie in [0, 1]")
        if len(self.ids) != m or len(self.model_names) != k:
            raise ValueError("ids / model_names lengths disagree with posteriors")
        if self.mode not in ("shared", "per-class"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        post = post.copy()
        post.setflags(write=False)
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "posteriors", post)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "model_names", tuple(str(s) for s in self.model_names))

    @property
    def n_models(self) -> int:
        return self.posteriors.shape[0]

    @property
    def n_classes(self) -> int:
        return self.posteriors.shape[2]


def _read_model_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 3 or header[0] != "id" or header[-1] != "label":
            raise ValueError(f"{path}: expected header id,p_1,...,p_C,label")
        n_classes = len(header) - 2
        if header[1:-1] != [f"p_{i + 1}" for i in range(n_classes)]:
            raise ValueError(f"{path}: expected posterior columns p_1,...,p_{n_classes}")
        ids, rows, labels = [], [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != n_classes + 2:
                raise ValueError(f"{path}:{line_no}: expected {n_classes + 2} fields")
            post = [float(x) for x in rec[1:-1]]
            for col, value in enumerate(post):
                if not 0.0 <= value <= 1.0:
                    raise ValueError(
                        f"{path}:{line_no}: posterior p_{col + 1} = {value} out of [0, 1] "
                        f"for id {rec[0]}"
                    )
            ids.append(rec[0])
            rows.append(post)
            labels.append(int(rec[-1]))
    return ids, np.array(rows), np.array(labels, dtype=np.int64)


def ingest_posteriors(path) -> FusionTask:
    """Load a fusion task from a directory of per-model CSVs or a JSON bundle.

    Directory: every *.csv file (sorted by name) is one model with rows
    id,p_1,...,p_C,label.  JSON bundle: {"models": [{"name", "posteriors"}...],
    "ids": [...], "labels": [...]}.  Row ids and labels must agree across
    models; misalignment errors name the offending id.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if len(files) < 2:
            raise ValueError(f"{path}: need at least two model CSVs, found {len(files)}")
        names, per_model = [], []
        ref_ids = ref_labels = None
        for f in files:
            ids, post, labels = _read_model_csv(f)
            if ref_ids is None:
                ref_ids, ref_labels = ids, labels
            else:
                if ids != ref_ids:
                    bad = next((a for a, b in zip(ids, ref_ids) if a != b),
                               ids[len(ref_ids):] or ref_ids[len(ids):])
                    raise ValueError(f"{f}: row ids misaligned with {files[0].name} near id {bad}")
                if not np.array_equal(labels, ref_labels):
                    where = int(np.flatnonzero(labels != ref_labels)[0])
                    raise ValueError(f"{f}: label mismatch at id {ids[where]}")
            names.append(f.stem)
            per_model.append(post)
        shapes = {p.shape for p in per_model}
        if len(shapes) != 1:
            raise ValueError(f"{path}: models disagree on class count: {sorted(shapes)}")
        return FusionTask(np.stack(per_model), ref_labels, tuple(ref_ids), tuple(names))
    bundle = json.loads(Path(path).read_text())
    names = tuple(m["name"] for m in bundle["models"])
    post = np.array([m["posteriors"] for m in bundle["models"]], dtype=float)
    return FusionTask(post, np.asarray(bundle["labels"], dtype=np.int64),
                      tuple(str(i) for i in bundle["ids"]), names)


def save_task_csvs(task: FusionTask, directory) -> list[Path]:
    """Write one id,p_1,...,p_C,label CSV per model (ingest_posteriors inverse)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for k, name in enumerate(task.model_names):
        f = directory / f"{name}.csv"
        with open(f, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id"] + [f"p_{c + 1}" for c in range(task.n_classes)] + ["label"])
            for i, rid in enumerate(task.ids):
                writer.writerow([rid] + [f"{x:.17e}" for x in task.posteriors[k, i]]
                                + [int(task.labels[i])])
        out.append(f)
    return out


def build_folds(labels: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Stratified fold ids: per class, shuffle and deal round-robin."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(10,)))
    folds = np.empty(len(labels), dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        folds[idx] = np.arange(len(idx)) % n_folds
    return folds


@dataclass
class FusionResult:
    mode: str
    model_names: tuple[str, ...]
    fold_accuracies: list[float]
    mean_accuracy: float
    sd_accuracy: float
    single_accuracies: np.ndarray  # (K,) per-model accuracy over the same test folds
    measures: list  # per fold: FuzzyMeasure (shared) or list per class
    reports: list  # XaiReport per trained measure, aligned with measures
    skipped_folds: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "model_names": list(self.model_names),
            "fold_accuracies": self.fold_accuracies,
            "mean_accuracy": self.mean_accuracy,
            "sd_accuracy": self.sd_accuracy,
            "single_accuracies": {
                name: float(a) for name, a in zip(self.model_names, self.single_accuracies)
            },
            "skipped_folds": self.skipped_folds,
        }


def _class_rows(task: FusionTask, sample_idx: np.ndarray):
    """One-vs-rest training rows: ((n_samples * C, K) inputs, 0/1 labels)."""
    post = task.posteriors[:, sample_idx, :]  # (K, S, C)
    rows = np.transpose(post, (1, 2, 0)).reshape(-1, task.n_models)
    onehot = (task.labels[sample_idx][:, None] == np.arange(task.n_classes)[None, :])
    return rows, onehot.reshape(-1).astype(float)


def _fit_measures(rows, labels01, n_classes, cfg: TrainConfig, seed_key, mode: str):
    """Train the fold's measure(s) on one-vs-rest rows via the batch engine."""
    n = rows.shape[1]
    if mode == "shared":
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=seed_key))
        order = rng.permutation(len(rows))
        raw0 = init_flat_raw(n, cfg, rng)[None, :]
        res = run_sgd_flat(integrand_rows(rows), order[None, :], labels01[order][None, :],
                           raw0, n, cfg.learning_rate, cfg.epochs,
                           batch_mode=cfg.batch_mode, momentum=cfg.momentum)
        g, _ = materialize_flat(res.raw, n)
        return [FuzzyMeasure(n, g[0])], res.failures
    # per-class: measure c trains only on the class-c columns, batched over c
    per_class = rows.reshape(-1, n_classes, n)
    lab = labels01.reshape(-1, n_classes)
    m = per_class.shape[0]
    labs = np.empty((n_classes, m))
    raw0 = np.empty((n_classes, 1 << n))
    pools = []
    for c in range(n_classes):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=seed_key + (c,)))
        order = rng.permutation(m)
        labs[c] = lab[order, c]
        raw0[c] = init_flat_raw(n, cfg, rng)
        pools.append(integrand_rows(per_class[:, c, :])[order])
    ids = (np.arange(n_classes) * m)[:, None] + np.arange(m)[None, :]
    res = run_sgd_flat(np.concatenate(pools), ids, labs, raw0, n,
                       cfg.learning_rate, cfg.epochs,
                       batch_mode=cfg.batch_mode, momentum=cfg.momentum)
    g, _ = materialize_flat(res.raw, n)
    return [FuzzyMeasure(n, g[c]) for c in range(n_classes)], res.failures


def _fused_scores(task: FusionTask, sample_idx: np.ndarray, measures) -> np.ndarray:
    """(len(sample_idx), C) fused class scores under the fold's measure(s)."""
    post = task.posteriors[:, sample_idx, :]
    scores = np.empty((len(sample_idx), task.n_classes))
    for c in range(task.n_classes):
        g = measures[0] if len(measures) == 1 else measures[c]
        o = integrand_rows(post[:, :, c].T)
        scores[:, c] = o @ g.values
    return scores


def run_fusion(task: FusionTask, cfg: TrainConfig, n_folds: int = 3,
               with_reports: bool = True) -> FusionResult:
    """Cross-validated fusion: fit per fold, score held-out rows, aggregate.

    Folds whose training part is missing a class entirely are skipped with a
    warning.  Reported single-model accuracies use the same held-out rows.
    """
    folds = task.folds if task.folds is not None else build_folds(task.labels, n_folds, cfg.seed)
    fold_ids = np.unique(folds)
    accs, measures_out, reports_out, skipped = [], [], [], []
    single_hits = np.zeros(task.n_models)
    single_total = 0
    for fold in fold_ids:
        test_idx = np.flatnonzero(folds == fold)
        train_idx = np.flatnonzero(folds != fold)
        present = np.unique(task.labels[train_idx])
        if len(present) < task.n_classes:
            missing = sorted(set(range(task.n_classes)) - set(present.tolist()))
            warnings.warn(f"fold {int(fold)} skipped: classes {missing} absent from training")
            skipped.append(int(fold))
            continue
        rows, labels01 = _class_rows(task, train_idx)
        measures, failures = _fit_measures(rows, labels01, task.n_classes, cfg,
                                           (20, int(fold)), task.mode)
        if failures:
            warnings.warn(f"fold {int(fold)} skipped: non-finite loss during fit")
            skipped.append(int(fold))
            continue
        scores = _fused_scores(task, test_idx, measures)
        pred = scores.argmax(axis=1)
        accs.append(float(np.mean(pred == task.labels[test_idx])))
        single_pred = task.posteriors[:, test_idx, :].argmax(axis=2)
        single_hits += (single_pred == task.labels[test_idx][None, :]).sum(axis=1)
        single_total += len(test_idx)
        measures_out.append(measures if task.mode == "per-class" else measures[0])
        if with_reports:
            if task.mode == "shared":
                reports_out.append(build_report(measures[0], rows))
            else:
                per_class = rows.reshape(-1, task.n_classes, task.n_models)
                reports_out.append([
                    build_report(m_c, per_class[:, c, :]) for c, m_c in enumerate(measures)
                ])
    if not accs:
        raise ValueError("every fold was skipped; fusion task is degenerate")
    accs_arr = np.array(accs)
    return FusionResult(
        mode=task.mode,
        model_names=task.model_names,
        fold_accuracies=accs,
        mean_accuracy=float(accs_arr.mean()),
        sd_accuracy=float(accs_arr.std(ddof=1)) if len(accs) > 1 else 0.0,
        single_accuracies=single_hits / single_total,
        measures=measures_out,
        reports=reports_out,
        skipped_folds=skipped,
    )


# --- synthetic fixtures ---

def make_complementary_fixture(seed: int = 7, m_per_class: int = 120) -> FusionTask:
    """Two sources, two classes, each source confidently right on one class.

    Source A nails class 0 but leans wrong on class 1; source B mirrors it.
    Alone each is a coin flip overall, yet their confidences are complementary,
    so a fused measure can separate every sample.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(30,)))
    m = 2 * m_per_class
    labels = np.repeat([0, 1], m_per_class)
    p0 = np.empty((2, m))  # class-0 posterior per (model, sample)
    jit = lambda: rng.normal(0.0, 0.02, m_per_class)
    p0[0, :m_per_class] = 0.90 + jit()  # A confident and right on class 0
    p0[1, :m_per_class] = 0.45 + jit()  # B weakly wrong on class 0
    p0[0, m_per_class:] = 0.60 + jit()  # A weakly wrong on class 1
    p0[1, m_per_class:] = 0.10 + jit()  # B confident and right on class 1
    p0 = np.clip(p0, 0.01, 0.99)
    posteriors = np.stack([p0, 1.0 - p0], axis=2)
    ids = tuple(f"s{i:04d}" for i in range(m))
    return FusionTask(posteriors, labels, ids, ("model_a", "model_b"))


def make_redundant_fixture(seed: int = 11, n_models: int = 7, n_classes: int = 5,
                           m_per_class: int = 24) -> FusionTask:
    """Many near-identical strong sources: saturated, nearly tied posteriors.

    Every model is all but certain of the true class on every sample (0.98+
    for the true class, near 0 elsewhere, with sub-percent jitter breaking
    exact ties).  Such data carries next to no information about coalition
    values: only the top of the lattice sees a meaningful gradient, so the
    learned measure keeps its symmetric soft-mean initialization and ends up
    additive and mean-like with near-zero interactions.  Pair it with
    :func:`redundant_fixture_config`.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(31,)))
    m = n_classes * m_per_class
    labels = np.repeat(np.arange(n_classes), m_per_class)
    posteriors = rng.uniform(0.0, 0.005, (n_models, m, n_classes))
    posteriors[:, np.arange(m), labels] = rng.uniform(0.98, 0.99, (n_models, m))
    ids = tuple(f"s{i:04d}" for i in range(m))
    names = tuple(f"model_{chr(ord('a') + k)}" for k in range(n_models))
    return FusionTask(posteriors, labels, ids, names)


def redundant_fixture_config(seed: int = 1) -> TrainConfig:
    """Training settings for the near-identical-sources fixture.

    A moderate init spread keeps the symmetric starting point that saturated
    data cannot (and should not) move; 100 epochs is ample for the top of the
    lattice to fit the saturated outputs.
    """
    return TrainConfig(epochs=100, seed=seed, trials=1, init_low=0.13, init_high=0.17)

"""Posterior ingestion, cross-validated fusion, and the synthetic fixtures."""
import json

import numpy as np
import pytest

from chimp.fusion import (
    FusionTask,
    build_folds,
    ingest_posteriors,
    make_complementary_fixture,
    make_redundant_fixture,
    redundant_fixture_config,
    run_fusion,
    save_task_csvs,
)
from chimp.training import TrainConfig
from chimp.xai import interaction, operator_distances


def small_task(rng, k=3, m=30, c=4):
    labels = rng.integers(0, c, m)
    post = rng.uniform(0, 1, (k, m, c))
    post[:, np.arange(m), labels] += 2.0  # make every model decent
    post /= post.sum(axis=2, keepdims=True)
    ids = tuple(f"r{i}" for i in range(m))
    return FusionTask(post, labels, ids, tuple(f"m{j}" for j in range(k)))


class TestFusionTask:
    def test_shape_and_range_validation(self, rng):
        with pytest.raises(ValueError):
            FusionTask(np.ones((3, 5)), np.zeros(5, int), ("a",) * 5, ("m",) * 3)
        post = rng.uniform(0, 1, (2, 4, 3))
        post[0, 0, 0] = 1.2
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            FusionTask(post, np.zeros(4, int), ("a",) * 4, ("x", "y"))

    def test_label_range_checked(self, rng):
        post = rng.uniform(0, 1, (2, 4, 3))
        with pytest.raises(ValueError):
            FusionTask(post, np.array([0, 1, 2, 3]), ("a",) * 4, ("x", "y"))


class TestIngest:
    def test_directory_round_trip(self, rng, tmp_path):
        task = small_task(rng)
        save_task_csvs(task, tmp_path)
        back = ingest_posteriors(tmp_path)
        assert back.model_names == task.model_names
        assert back.n_models == 3 and back.n_classes == 4
        assert np.array_equal(back.posteriors, task.posteriors)
        assert np.array_equal(back.labels, task.labels)

    def test_misaligned_id_is_named(self, rng, tmp_path):
        task = small_task(rng)
        files = save_task_csvs(task, tmp_path)
        text = files[1].read_text().replace("r7,", "r999,")
        files[1].write_text(text)
        with pytest.raises(ValueError, match="r999"):
            ingest_posteriors(tmp_path)

    def test_out_of_range_posterior_names_position(self, rng, tmp_path):
        task = small_task(rng)
        files = save_task_csvs(task, tmp_path)
        lines = files[0].read_text().splitlines()
        parts = lines[3].split(",")
        parts[2] = "1.2"
        lines[3] = ",".join(parts)
        files[0].write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="p_2"):
            ingest_posteriors(tmp_path)

    def test_json_bundle(self, rng, tmp_path):
        task = small_task(rng, k=2, m=10, c=3)
        bundle = {
            "models": [
                {"name": name, "posteriors": task.posteriors[i].tolist()}
                for i, name in enumerate(task.model_names)
            ],
            "ids": list(task.ids),
            "labels": task.labels.tolist(),
        }
        path = tmp_path / "bundle.json"
        path.write_text(json.dumps(bundle))
        back = ingest_posteriors(path)
        assert np.array_equal(back.posteriors, task.posteriors)

    def test_needs_at_least_two_models(self, tmp_path):
        with pytest.raises(ValueError):
            ingest_posteriors(tmp_path)


class TestRunFusion:
    def test_identical_perfect_models_fuse_perfectly(self, rng):
        c, m = 3, 60
        labels = rng.integers(0, c, m)
        onehot = np.eye(c)[labels] * 0.94 + 0.02
        jitter = rng.uniform(0, 1e-4, (4, m, c))  # break exact ties
        post = np.clip(onehot[None] + jitter, 0, 1)
        task = FusionTask(post, labels, tuple(map(str, range(m))), ("a", "b", "c", "d"))
        # saturated data keeps the init's symmetry; start at the idempotent
        # scale (g(X) near 1) so the top of the lattice has nothing to chase
        cfg = TrainConfig(seed=0, epochs=60, trials=1, init_low=0.24, init_high=0.26)
        res = run_fusion(task, cfg, with_reports=True)
        assert res.mean_accuracy == 1.0
        report = res.reports[0]
        assert report.shapley_normalized == pytest.approx([0.25] * 4, abs=0.05)

    def test_stratified_folds_partition(self, rng):
        labels = rng.integers(0, 3, 61)
        folds = build_folds(labels, 3, seed=5)
        assert set(folds) == {0, 1, 2}
        for cls in range(3):
            counts = np.bincount(folds[labels == cls], minlength=3)
            assert counts.max() - counts.min() <= 1

    def test_degenerate_fold_skipped_with_warning(self, rng):
        task = small_task(rng, m=24)
        folds = np.where(task.labels == 0, 2, np.arange(24) % 2)
        task = FusionTask(task.posteriors, task.labels, task.ids, task.model_names,
                          folds=folds)
        with pytest.warns(UserWarning, match="skipped"):
            res = run_fusion(task, TrainConfig(seed=0, epochs=25, trials=1),
                             with_reports=False)
        assert res.skipped_folds  # folds 0/1 lack class 0 in training

    def test_per_class_mode(self, rng):
        task = small_task(rng, m=36)
        task = FusionTask(task.posteriors, task.labels, task.ids, task.model_names,
                          mode="per-class")
        res = run_fusion(task, TrainConfig(seed=0, epochs=40, trials=1),
                         with_reports=False)
        assert len(res.measures[0]) == task.n_classes
        assert 0.0 <= res.mean_accuracy <= 1.0

    def test_result_json_shape(self, rng):
        task = small_task(rng)
        res = run_fusion(task, TrainConfig(seed=0, epochs=25, trials=1),
                         with_reports=False)
        blob = res.to_json_dict()
        assert set(blob["single_accuracies"]) == set(task.model_names)
        assert len(blob["fold_accuracies"]) == 3


class TestFixtures:
    def test_complementary_sources_fuse_strictly_better(self):
        task = make_complementary_fixture()
        res = run_fusion(task, TrainConfig(seed=1, epochs=200, trials=1),
                         with_reports=False)
        assert all(res.mean_accuracy > acc for acc in res.single_accuracies)
        assert res.mean_accuracy > 0.95
        assert max(res.single_accuracies) < 0.65

    def test_near_identical_sources_keep_mean_like_measure(self):
        task = make_redundant_fixture()
        res = run_fusion(task, redundant_fixture_config(), with_reports=False)
        assert res.mean_accuracy == 1.0
        for g in res.measures:
            assert operator_distances(g, normalized=True)["mean"] < 0.05
            inter = interaction(g.scaled_to_unit())
            assert np.nanmax(np.abs(inter)) < 0.05

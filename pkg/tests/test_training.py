"""Gradients against hand formulas and finite differences; SGD behavior."""
import numpy as np
import pytest
from hypothesis import given, settings

from chimp.dataset import NoiseSpec, generate
from chimp.experiment import target_measures
from chimp.lattice import delta_masks, singleton_masks
from chimp.measure import make_special
from chimp.network import ChimpParams, flat_raw, forward, materialize
from chimp.training import (
    NumericError,
    TrainConfig,
    backward_inputs,
    backward_params,
    error_signals,
    grad_check,
    init_flat_raw,
    loss,
    max_derivative_weights,
    min_derivative_weights,
    mse,
    run_sgd_flat,
    sgd_fit,
)

from conftest import raw_params
from reference_n3 import draw_clean_dyadic_config, input_grads_n3, param_grads_n3


class TestLoss:
    def test_zero_when_equal(self):
        assert loss([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_single_sample(self):
        assert loss([1.0], [0.0]) == 0.5

    def test_two_samples(self):
        assert loss([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.25)

    def test_signals_are_output_minus_label(self):
        assert error_signals([1.0, 0.0], [0.5, 0.5]) == pytest.approx([-0.5, 0.5])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            loss([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            mse([1.0], [1.0, 2.0])


class TestArgmaxWeights:
    def test_unique_max(self):
        assert max_derivative_weights([0.3, 0.7]) == pytest.approx([0.0, 1.0])

    def test_two_way_tie_splits_in_half(self):
        assert max_derivative_weights([0.5, 0.5]) == pytest.approx([0.5, 0.5])

    def test_tie_among_four(self):
        w = max_derivative_weights([0.2, 0.9, 0.9, 0.1])
        assert w == pytest.approx([0.0, 0.5, 0.5, 0.0])

    def test_min_variant(self):
        assert min_derivative_weights([0.2, 0.9, 0.2]) == pytest.approx([0.5, 0.0, 0.5])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            max_derivative_weights([])


class TestBackwardParams:
    def test_zero_error_means_zero_gradient(self, rng):
        p = ChimpParams.random(3, rng=rng)
        h = rng.uniform(0, 1, 3)
        y, cache = forward(p, h)
        bundle = backward_params(p, h, y, cache)  # label equals output
        assert np.all(bundle.d_raw_density == 0)
        assert np.all(bundle.d_raw_delta == 0)
        assert bundle.loss == 0.0

    def test_top_increment_gradient_by_hand(self):
        # active top increment: dE/d(raw of X) = e * o(X)
        p = ChimpParams(3, [0.3, 0.5, 0.4], [0.1, 0.3, 0.3, 0.2])
        h = np.array([0.6, 0.2, 0.9])
        y, cache = forward(p, h)
        bundle = backward_params(p, h, 0.0, cache)
        e = y - 0.0
        assert bundle.d_raw_delta[-1] == pytest.approx(e * 0.2)

    def test_stale_cache_rejected(self, rng):
        p = ChimpParams.random(3, rng=rng)
        h = rng.uniform(0, 1, 3)
        _, cache = forward(p, h)
        with pytest.raises(ValueError):
            backward_params(p, h + 0.5, 0.0, cache)
        p2 = ChimpParams.random(3, rng=rng)
        with pytest.raises(ValueError):
            backward_params(p2, h, 0.0, cache)

    def test_matches_three_source_reference_exactly(self):
        """Bit equality with the transcribed formulas on exact dyadic inputs."""
        rng = np.random.default_rng(42)
        for _ in range(300):
            p, h, label, cache = draw_clean_dyadic_config(rng)
            e = cache.y - label
            ref = param_grads_n3(e, cache.iv.o, cache.measure.g.values,
                                 cache.measure.gmax_aux, flat_raw(p))
            bundle = backward_params(p, h, label, cache)
            got = np.zeros(8)
            got[singleton_masks(3)] = bundle.d_raw_density
            got[delta_masks(3)] = bundle.d_raw_delta
            assert np.array_equal(got, ref)

    @settings(max_examples=100, deadline=None)
    @given(raw_params(n=3))
    def test_matches_reference_on_generic_floats(self, p):
        rng = np.random.default_rng(abs(hash(p.raw_delta.tobytes())) % 2**32)
        h = rng.uniform(-1, 1, 3)
        label = rng.uniform(-1, 1)
        y, cache = forward(p, h)
        ties = any(len(t) != 1 for t in cache.measure.argmax_children.values())
        if ties:  # reference assumes unique argmaxes
            return
        ref = param_grads_n3(y - label, cache.iv.o, cache.measure.g.values,
                             cache.measure.gmax_aux, flat_raw(p))
        bundle = backward_params(p, h, label, cache)
        got = np.zeros(8)
        got[singleton_masks(3)] = bundle.d_raw_density
        got[delta_masks(3)] = bundle.d_raw_delta
        assert np.allclose(got, ref, rtol=1e-13, atol=1e-15)


class TestBackwardInputs:
    def test_mean_params_give_uniform_gradient(self, rng):
        p = ChimpParams.from_measure(make_special("mean", 3))
        h = np.array([0.9, 0.1, 0.5])
        y, cache = forward(p, h)
        label = 0.2
        grads = backward_inputs(p, h, label, cache)
        assert grads == pytest.approx((y - label) * np.ones(3) / 3)

    def test_max_params_hit_argmax_only(self, rng):
        p = ChimpParams.from_measure(make_special("max", 3))
        h = np.array([0.9, 0.1, 0.5])
        y, cache = forward(p, h)
        grads = backward_inputs(p, h, 0.0, cache)
        assert grads == pytest.approx([y, 0.0, 0.0])

    def test_matches_three_source_reference_exactly(self):
        rng = np.random.default_rng(43)
        for _ in range(300):
            p, h, label, cache = draw_clean_dyadic_config(rng)
            ref = input_grads_n3(cache.y - label, h, cache.iv.o, cache.measure.g.values)
            got = backward_inputs(p, h, label, cache)
            assert np.array_equal(got, ref)

    def test_stale_cache_rejected(self, rng):
        p = ChimpParams.random(3, rng=rng)
        h = rng.uniform(0, 1, 3)
        _, cache = forward(p, h)
        with pytest.raises(ValueError):
            backward_inputs(p, np.roll(h, 1), 0.0, cache)


class TestGradCheck:
    def test_smooth_point_is_tiny(self, rng):
        p = ChimpParams.random(3, 0.05, 0.5, rng)
        res = grad_check(p, rng.uniform(-1, 1, 3), 0.3)
        assert res.max_rel_err < 1e-5
        assert res.checked > 0

    def test_exact_tie_is_skipped(self, rng):
        p = ChimpParams.random(3, 0.05, 0.5, rng)
        h = np.array([0.4, 0.4, 0.9])
        res = grad_check(p, h, 0.1)
        skipped_inputs = [c for c in res.skipped if c[0] == "input"]
        assert skipped_inputs  # the tied coordinates cannot be checked

    def test_zero_eps_rejected(self, rng):
        p = ChimpParams.random(2, rng=rng)
        with pytest.raises(ValueError):
            grad_check(p, [0.1, 0.2], 0.0, eps=0.0)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_random_configurations(self, n, rng):
        for _ in range(20):
            p = ChimpParams.random(n, 0.05, 0.5, rng)
            h = rng.uniform(-1, 1, n)
            label = rng.uniform(-1, 1)
            res = grad_check(p, h, label)
            assert res.max_rel_err < 1e-5, (n, res.worst)


class TestSgdFit:
    def test_noiseless_recovery_all_targets(self):
        """Self-generated noiseless labels are recovered to float-level error.

        600 epochs here keeps the suite quick; the acceptance module runs the
        full canonical protocol, which converges much further still.
        """
        cfg = TrainConfig(seed=5, epochs=600)
        for name, target in target_measures().items():
            data = generate(target, 300, NoiseSpec((0.0,)), seed=11)
            params, history = sgd_fit(data, cfg)
            assert history[-1] < 1e-6, name
            learned = materialize(params).g
            assert np.mean((learned.values[1:] - target.values[1:]) ** 2) < 1e-5, name

    def test_idempotent_constant_data(self):
        from chimp.dataset import Dataset

        rows = np.full((40, 3), 0.5)
        data = Dataset(3, rows, np.full(40, 0.5))
        params, history = sgd_fit(data, TrainConfig(seed=1, epochs=50))
        assert history[-1] < 1e-4  # g(X) -> 1 fits every sample at once

    def test_full_batch_loss_decreases(self):
        target = target_measures()["FM2"]
        data = generate(target, 300, NoiseSpec((0.0,)), seed=2)
        cfg = TrainConfig(seed=3, epochs=101, batch_mode="full-batch")
        _, history = sgd_fit(data, cfg)
        assert history[100] < history[0]

    def test_plain_update_without_momentum_still_learns(self):
        target = target_measures()["FM2"]
        data = generate(target, 300, NoiseSpec((0.0,)), seed=2)
        cfg = TrainConfig(seed=3, epochs=200, momentum=0.0)
        _, history = sgd_fit(data, cfg)
        assert history[-1] < 1e-3

    def test_determinism(self):
        target = target_measures()["FM4"]
        data = generate(target, 100, NoiseSpec((0.1,)), seed=4)
        cfg = TrainConfig(seed=9, epochs=30)
        p1, h1 = sgd_fit(data, cfg)
        p2, h2 = sgd_fit(data, cfg)
        assert np.array_equal(h1, h2)
        assert np.array_equal(p1.raw_delta, p2.raw_delta)

    def test_nan_abort_with_diagnostic(self, rng):
        from chimp.dataset import Dataset

        # finite but astronomically scaled labels overflow the forward pass
        rows = rng.uniform(0.2, 1.0, (20, 2))
        data = Dataset(2, rows, np.full(20, 1e155))
        cfg = TrainConfig(seed=9, epochs=10, learning_rate=1e155)
        with pytest.raises(NumericError, match="epoch"):
            sgd_fit(data, cfg)

    def test_non_finite_labels_rejected(self):
        from chimp.dataset import Dataset

        with pytest.raises(ValueError):
            Dataset(2, [[0.1, 0.2]], [np.nan])

    def test_learned_measure_is_always_valid(self):
        target = target_measures()["FM3"]
        data = generate(target, 120, NoiseSpec((0.3,)), seed=6)
        params, _ = sgd_fit(data, TrainConfig(seed=2, epochs=40))
        assert materialize(params).g.violations() == []


class TestEngine:
    def test_batched_fits_match_independent_runs(self, rng):
        """Lockstep batch rows must be bit-identical to one-at-a-time runs."""
        from chimp.network import integrand_rows

        n = 3
        rows = rng.uniform(0, 1, (40, n))
        o_pool = integrand_rows(rows)
        labels = rng.uniform(0, 1, 40)
        cfg = TrainConfig(seed=0)
        ids = np.stack([rng.permutation(40) for _ in range(3)])
        labs = labels[ids]
        raw0 = np.stack([init_flat_raw(n, cfg, np.random.default_rng(k)) for k in range(3)])
        batch = run_sgd_flat(o_pool, ids, labs, raw0, n, 0.01, 25, momentum=0.9)
        for b in range(3):
            single = run_sgd_flat(o_pool, ids[b : b + 1], labs[b : b + 1],
                                  raw0[b : b + 1], n, 0.01, 25, momentum=0.9)
            assert np.array_equal(single.raw[0], batch.raw[b])
            assert np.array_equal(single.history[0], batch.history[b])

    def test_failed_row_does_not_poison_others(self, rng):
        from chimp.network import integrand_rows

        n = 2
        rows = rng.uniform(0.2, 1.0, (20, n))
        o_pool = integrand_rows(rows)
        ids = np.tile(np.arange(20), (2, 1))
        labs = np.tile(rng.uniform(0, 1, 20), (2, 1))
        labs[1] = 1e300  # fit 1 overflows its update under the large lr
        raw0 = np.array([init_flat_raw(n, TrainConfig(seed=0), rng) for _ in range(2)])
        res = run_sgd_flat(o_pool, ids, labs, raw0, n, 1e10, 5)
        assert any(b == 1 for b, _, _ in res.failures)
        assert all(b != 0 for b, _, _ in res.failures)
        assert np.all(np.isfinite(res.raw[0]))
        assert np.all(np.isnan(res.raw[1]))

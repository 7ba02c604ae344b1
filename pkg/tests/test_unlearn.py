from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from unlearnbench.datagen import SampleSet
from unlearnbench.errors import ConfigError, EmptyBatchError, NumericOverflowError, TrainingDivergedError
from unlearnbench.harness import run_cell
from unlearnbench.metrics import macro_f1
from unlearnbench.nn_core import batch_loss, entropy, forward, init_model, per_sample_kl, predict
from unlearnbench.timing import WallClock, WorkClock
from unlearnbench.unlearn import (DEFAULT_LRS, METHODS, MethodConfig, TrainRecipe, bad_teaching, cf_k,
                                  default_grid, finetune_ft, ft, ng, ng_plus, run_method, scrub,
                                  synthesize_noise, train_original, unsir)


def _f1(model, data, n_classes=12):
    return macro_f1(predict(model, data.X), data.y, n_classes)


def _kl_to(model, teacher, data):
    return per_sample_kl(forward(model, data.X), forward(teacher, data.X)).mean()


class TestTrainOriginal:
    def test_separable_toy_reaches_perfect_f1(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(-2, 0.5, (50, 2)), rng.normal(2, 0.5, (50, 2))])
        y = np.repeat([0, 1], 50)
        data = SampleSet(X, y, np.zeros(100))
        model, elapsed = train_original(TrainRecipe(epochs=50, hidden=(8,)), data, 2)
        assert _f1(model, data, 2) == 1.0 and elapsed > 0

    def test_deterministic(self, prep):
        recipe = TrainRecipe(epochs=2)
        a, _ = train_original(recipe, prep.retain, 12, WorkClock())
        b, _ = train_original(recipe, prep.retain, 12, WorkClock())
        assert a.equals(b)

    def test_memorises_forget_speakers(self, prep):
        assert _f1(prep.original, prep.forget) > _f1(prep.original, prep.bundle.test)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_epoch(self, prep):
        with pytest.raises(TrainingDivergedError) as err:
            train_original(TrainRecipe(epochs=3, lr=1e6), prep.retain, 12, WorkClock())
        assert err.value.epoch == 0

    def test_empty_data(self):
        with pytest.raises(EmptyBatchError):
            train_original(TrainRecipe(), SampleSet.empty(3), 2)

    @pytest.mark.parametrize("changes", [{"epochs": 0}, {"lr": 0.0}, {"batch_size": 0}, {"optimizer": "adam"}])
    def test_invalid_recipe(self, changes):
        with pytest.raises(ConfigError):
            replace(TrainRecipe(), **changes).validate()


class TestFineTune:
    def test_zero_lr_keeps_model(self, prep):
        out = ft(prep.original, prep.retain, MethodConfig("ft", lr=0.0))
        assert out.model.equals(prep.original) and out.elapsed > 0

    def test_retain_loss_does_not_rise(self, prep):
        out = ft(prep.original, prep.retain, MethodConfig("ft", lr=1e-5))
        X, y = prep.retain.X, prep.retain.y
        assert batch_loss(out.model, X, y) <= batch_loss(prep.original, X, y)

    @pytest.mark.parametrize("method", ["ft", "cf_k"])
    def test_never_reads_forget(self, prep, audited, method):
        retain, forget = audited(prep.retain), audited(prep.forget)
        run_method(prep.original, retain, forget, MethodConfig(method, lr=0.01))
        assert forget.reads == 0 and retain.reads > 0

    def test_wrong_method_config(self, prep):
        with pytest.raises(ConfigError):
            ft(prep.original, prep.retain, MethodConfig("ng"))


class TestNegGrad:
    def test_forget_loss_rises(self, prep):
        out = ng(prep.original, prep.forget, MethodConfig("ng", lr=5e-7))
        X, y = prep.forget.X, prep.forget.y
        assert batch_loss(out.model, X, y) >= batch_loss(prep.original, X, y)

    def test_zero_lr_keeps_model(self, prep):
        assert ng(prep.original, prep.forget, MethodConfig("ng", lr=0.0)).model.equals(prep.original)

    @pytest.mark.parametrize("clock", [WorkClock, WallClock])
    def test_faster_than_finetune(self, prep, clock):
        t_ng = ng(prep.original, prep.forget, MethodConfig("ng", lr=5e-7), clock()).elapsed
        t_ft = ft(prep.original, prep.retain, MethodConfig("ft", lr=1e-5), clock()).elapsed
        assert t_ng < t_ft

    def test_never_reads_retain(self, prep, audited):
        retain, forget = audited(prep.retain), audited(prep.forget)
        run_method(prep.original, retain, forget, MethodConfig("ng", lr=1e-3))
        assert retain.reads == 0 and forget.reads > 0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_overflow(self, prep):
        with pytest.raises(NumericOverflowError):
            ng(prep.original, prep.forget, MethodConfig("ng", lr=1e300))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_a_failed_row_in_the_grid(self, prep):
        rec = run_cell(prep, MethodConfig("ng", lr=1e296), 2000.0, "work")
        assert rec.failed and rec.error


class TestNegGradPlus:
    def test_zero_gamma_equals_finetune(self, prep):
        cfg = MethodConfig("ng_plus", lr=0.01, gamma=0.0)
        plus = ng_plus(prep.original, prep.retain, prep.forget, cfg).model
        plain = finetune_ft(prep.original, prep.retain, cfg).model
        assert plus.equals(plain)

    def test_small_lr_moves_losses_apart(self, prep):
        out = ng_plus(prep.original, prep.retain, prep.forget, MethodConfig("ng_plus", lr=5e-7))
        R, F = prep.retain, prep.forget
        assert batch_loss(out.model, R.X, R.y) <= batch_loss(prep.original, R.X, R.y)
        assert batch_loss(out.model, F.X, F.y) >= batch_loss(prep.original, F.X, F.y)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_large_lr_is_recorded_not_raised(self, prep):
        rec = run_cell(prep, MethodConfig("ng_plus", lr=1e-1), 2000.0, "work")
        assert rec.failed or rec.f1_test < prep.original_record.f1_test


class TestCatastrophicForgetting:
    def test_all_layers_equals_finetune(self, prep):
        n = prep.original.n_layers
        a = cf_k(prep.original, prep.retain, MethodConfig("cf_k", lr=0.02, k=n)).model
        b = finetune_ft(prep.original, prep.retain, MethodConfig("cf_k", lr=0.02, k=n)).model
        assert a.equals(b)

    def test_last_layer_only(self, prep):
        out = cf_k(prep.original, prep.retain, MethodConfig("cf_k", lr=0.02, k=1)).model
        for before, after in zip(prep.original.layers[:-1], out.layers[:-1]):
            assert_array_equal(before.weights, after.weights)
            assert_array_equal(before.bias, after.bias)
        assert not np.array_equal(prep.original.layers[-1].weights, out.layers[-1].weights)

    def test_cheaper_than_finetune(self, prep):
        t_cf = cf_k(prep.original, prep.retain, MethodConfig("cf_k", lr=1e-5), WorkClock()).elapsed
        t_ft = ft(prep.original, prep.retain, MethodConfig("ft", lr=1e-5), WorkClock()).elapsed
        assert t_cf < t_ft

    @pytest.mark.parametrize("k", [0, 4])
    def test_invalid_k(self, prep, k):
        with pytest.raises(ConfigError):
            cf_k(prep.original, prep.retain, MethodConfig("cf_k", k=k))


class TestNoise:
    def test_zero_noise_lr_returns_initial_draw(self, prep):
        noise = synthesize_noise(prep.original, 3, 32, steps=20, noise_lr=0.0, seed=5)
        assert_array_equal(noise, np.random.default_rng(5).normal(size=32))

    def test_noise_raises_loss(self, prep):
        start = np.random.default_rng(1).normal(size=32)
        noise = synthesize_noise(prep.original, 3, 32, steps=20, noise_lr=0.1, seed=1)
        assert batch_loss(prep.original, noise[None], [3]) >= batch_loss(prep.original, start[None], [3])

    def test_deterministic(self, prep):
        a = synthesize_noise(prep.original, 0, 32, 20, 0.1, seed=2)
        b = synthesize_noise(prep.original, 0, 32, 20, 0.1, seed=2)
        assert_array_equal(a, b)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_overflow(self, prep):
        with pytest.raises(NumericOverflowError):
            synthesize_noise(prep.original, 0, 32, 5, 1e308, seed=0)


class TestUnsir:
    def test_empty_forget_is_two_finetune_epochs(self, prep):
        cfg = MethodConfig("unsir", lr=0.02)
        out = unsir(prep.original, prep.retain, SampleSet.empty(32), cfg)
        twice = finetune_ft(prep.original, prep.retain, replace(cfg, epochs=2)).model
        assert out.model.equals(twice)

    def test_impair_then_repair(self, prep):
        # the harness-scaled default learning rate
        out = unsir(prep.original, prep.retain, prep.forget, MethodConfig("unsir", lr=1e-5 * 2000))
        impaired = out.stages["impair"]
        assert _f1(impaired, prep.forget) <= _f1(prep.original, prep.forget)
        assert _f1(out.model, prep.bundle.test) >= _f1(impaired, prep.bundle.test)


class TestBadTeaching:
    @pytest.mark.parametrize("method", ["bt", "bt_light"])
    def test_zero_epochs_is_identity(self, prep, method):
        out = bad_teaching(prep.original, prep.retain, prep.forget, MethodConfig(method, epochs=0))
        assert out.model.equals(prep.original)

    def test_forget_degrades_more_than_retain(self, prep):
        # the smallest rate at which the surrogate's F1 moves at all
        out = bad_teaching(prep.original, prep.retain, prep.forget, MethodConfig("bt", lr=0.05)).model
        d_retain = _f1(prep.original, prep.retain) - _f1(out, prep.retain)
        d_forget = _f1(prep.original, prep.forget) - _f1(out, prep.forget)
        assert d_retain < d_forget

    def test_light_raises_forget_entropy(self, prep):
        out = bad_teaching(prep.original, prep.retain, prep.forget, MethodConfig("bt_light", lr=1e-3)).model
        X = prep.forget.X
        assert entropy(forward(out, X)).mean() > entropy(forward(prep.original, X)).mean()

    def test_unknown_teacher(self, prep):
        with pytest.raises(ConfigError):
            bad_teaching(prep.original, prep.retain, prep.forget, MethodConfig("bt"), incompetent="oracle")

    def test_explicit_uniform_matches_light(self, prep):
        cfg = MethodConfig("bt", lr=1e-3)
        a = bad_teaching(prep.original, prep.retain, prep.forget, cfg, incompetent="uniform").model
        b = bad_teaching(prep.original, prep.retain, prep.forget, replace(cfg, method="bt_light")).model
        assert a.equals(b)


class TestScrub:
    def test_no_max_steps_leaves_forget_unread(self, prep, audited):
        forget = audited(prep.forget)
        scrub(prep.original, prep.retain, forget, MethodConfig("scrub", lr=1e-3, scrub_max_steps=0))
        assert forget.reads == 0

    def test_forget_kl_grows(self, prep):
        out = scrub(prep.original, prep.retain, prep.forget, MethodConfig("scrub", lr=5e-7)).model
        assert _kl_to(out, prep.original, prep.forget) >= _kl_to(prep.original, prep.original, prep.forget)

    def test_retain_kl_below_forget_kl(self, prep):
        out = scrub(prep.original, prep.retain, prep.forget, MethodConfig("scrub", lr=1e-3)).model
        assert _kl_to(out, prep.original, prep.retain) < _kl_to(out, prep.original, prep.forget)


class TestAllMethods:
    @pytest.mark.parametrize("method", METHODS)
    def test_deterministic(self, prep, method):
        cfg = MethodConfig(method, lr=DEFAULT_LRS[method][-1] * 2000)
        a = run_method(prep.original, prep.retain, prep.forget, cfg, WorkClock())
        b = run_method(prep.original, prep.retain, prep.forget, cfg, WorkClock())
        assert a.model.equals(b.model) and a.elapsed == b.elapsed

    @pytest.mark.parametrize("method", METHODS)
    def test_gentle_regime_preserves_utility(self, prep, method):
        rec = run_cell(prep, MethodConfig(method, lr=DEFAULT_LRS[method][0]), 2000.0, "work")
        assert prep.original_record.f1_test - rec.f1_test < 0.10

    def test_elapsed_ordering(self, prep):
        elapsed = {m: run_method(prep.original, prep.retain, prep.forget,
                                 MethodConfig(m, lr=DEFAULT_LRS[m][0] * 2000), WorkClock()).elapsed
                   for m in METHODS}
        ranked = sorted(elapsed, key=elapsed.get)
        assert ranked[:2] == ["ng", "cf_k"]

    def test_input_model_is_never_mutated(self, prep):
        before = [p.copy() for p in prep.original.parameters()]
        for m in METHODS:
            run_method(prep.original, prep.retain, prep.forget, MethodConfig(m, lr=DEFAULT_LRS[m][-1] * 2000))
        for a, b in zip(prep.original.parameters(), before):
            assert_array_equal(a, b)

    def test_baseline_is_not_a_method(self, prep):
        with pytest.raises(ConfigError):
            run_method(prep.original, prep.retain, prep.forget, MethodConfig("gold"))


class TestMethodConfig:
    @pytest.mark.parametrize("changes", [{"lr": -1.0}, {"epochs": -1}, {"batch_size": 0}, {"method": "nope"}])
    def test_invalid(self, changes):
        with pytest.raises(ConfigError):
            replace(MethodConfig("ft"), **changes).validate()

    def test_round_trip(self):
        cfg = MethodConfig("scrub", lr=3e-6, scrub_max_steps=1)
        assert MethodConfig.from_dict(cfg.to_dict()) == cfg

    def test_default_grid_families(self):
        grid = default_grid()
        assert len(grid) == 3 * len(METHODS)
        assert {c.lr for c in grid if c.method == "ng"} == {5e-7, 1e-6, 5e-6}
        assert {c.lr for c in grid if c.method == "unsir"} == {1e-5, 5e-5, 1e-4}

    def test_small_model_trains(self):
        m = init_model([3, 2], 0)
        data = SampleSet(np.eye(3), [0, 1, 0], [0, 0, 0])
        assert ft(m, data, MethodConfig("ft", lr=0.1)).model.dims == [3, 2]

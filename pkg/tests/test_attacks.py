"""Attack behaviour tests."""

from __future__ import annotations

import numpy as np
import pytest

from resfed.attacks import (
    AttackSpec,
    batch_poisoner,
    flip_labels,
    gaussian_noise,
    mix_models,
    poison_batch,
    poison_batches,
    replacement_scale,
)
from resfed.datasets import BackdoorPattern, synth_blobs
from resfed.models import FlatModel, ModelArch, init_model

ARCH = ModelArch(input_dim=4, hidden_dims=(3,), output_dim=3)


class TestAttackSpec:
    def test_defaults(self):
        spec = AttackSpec()
        assert spec.kind == "none"
        assert spec.scale == 100.0
        assert spec.attack_round == 6
        assert spec.extra_epochs == 5
        assert spec.poison_per_batch == 20

    def test_label_flip_requires_labels(self):
        with pytest.raises(ValueError):
            AttackSpec(kind="label_flip")
        with pytest.raises(ValueError):
            AttackSpec(kind="label_flip", src_label=1, dst_label=1)

    def test_backdoor_requires_pattern_or_target(self):
        with pytest.raises(ValueError):
            AttackSpec(kind="backdoor_naive")
        spec = AttackSpec(kind="backdoor_naive", target_label=2)
        assert spec.resolved_pattern(image_side=8).target_label == 2

    def test_mixing_requires_rate_in_range(self):
        with pytest.raises(ValueError):
            AttackSpec(kind="model_mixing", src_label=0, dst_label=1, mix_rate=1.5)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            AttackSpec(kind="bitflip")


class TestFlipLabels:
    def test_moves_all_sources(self):
        ds = synth_blobs(4, 3, 10, 1.0, seed=1)
        flipped = flip_labels(ds, 1, 3)
        assert np.count_nonzero(flipped.labels == 1) == 0
        assert np.count_nonzero(flipped.labels == 3) == 20
        assert np.array_equal(flipped.features, ds.features)
        assert np.count_nonzero(ds.labels == 1) == 10  # input untouched

    def test_second_flip_is_identity(self):
        ds = synth_blobs(4, 3, 10, 1.0, seed=2)
        once = flip_labels(ds, 1, 3)
        twice = flip_labels(once, 1, 3)
        assert np.array_equal(once.labels, twice.labels)

    def test_rejects_out_of_range(self):
        ds = synth_blobs(4, 3, 10, 1.0, seed=3)
        with pytest.raises(ValueError):
            flip_labels(ds, 1, 9)


class TestGaussianNoise:
    def test_zero_std_is_identity(self):
        model = init_model(ARCH, seed=0)
        out = gaussian_noise(model, 0.0, np.random.default_rng(1))
        assert np.array_equal(out.params, model.params)

    def test_seeded_and_multiplicative(self):
        model = init_model(ARCH, seed=0)
        a = gaussian_noise(model, 3.0, np.random.default_rng(2))
        b = gaussian_noise(model, 3.0, np.random.default_rng(2))
        assert np.array_equal(a.params, b.params)
        factors = a.params[model.params != 0] / model.params[model.params != 0]
        assert factors.std() > 1.0  # std 3 noise really applied

    def test_input_untouched(self):
        model = init_model(ARCH, seed=0)
        before = model.params.copy()
        gaussian_noise(model, 2.0, np.random.default_rng(3))
        assert np.array_equal(model.params, before)


class TestPoisoning:
    PATTERN = BackdoorPattern(np.array([0, 2]), np.array([1.0, 1.0]), target_label=2)

    def test_poison_batch_counts(self):
        features = np.full((8, 4), 0.5)
        labels = np.zeros(8, dtype=int)
        fx, fy = poison_batch(features, labels, self.PATTERN, 2, count=3)
        poisoned = np.flatnonzero((fx[:, 0] == 1.0) & (fx[:, 2] == 1.0))
        assert poisoned.tolist() == [0, 1, 2]
        assert fy.tolist() == [2, 2, 2, 0, 0, 0, 0, 0]
        assert np.all(features == 0.5)  # input untouched

    def test_short_batch_poisoned_whole(self):
        features = np.full((2, 4), 0.5)
        labels = np.zeros(2, dtype=int)
        _, fy = poison_batch(features, labels, self.PATTERN, 2, count=5)
        assert fy.tolist() == [2, 2]

    def test_zero_count_is_identity(self):
        features = np.full((4, 4), 0.5)
        labels = np.ones(4, dtype=int)
        fx, fy = poison_batch(features, labels, self.PATTERN, 2, count=0)
        assert np.array_equal(fx, features)
        assert np.array_equal(fy, labels)

    def test_batch_poisoner_matches_poison_batch(self):
        transform = batch_poisoner(self.PATTERN, 2, count=3)
        features = np.full((8, 4), 0.5)
        labels = np.zeros(8, dtype=int)
        fx, fy = transform(features, labels)
        gx, gy = poison_batch(features, labels, self.PATTERN, 2, count=3)
        assert np.array_equal(fx, gx)
        assert np.array_equal(fy, gy)

    def test_poison_batches_stream(self):
        ds = synth_blobs(3, 4, 11, 0.5, seed=4)  # 33 samples
        batches = list(poison_batches(ds, self.PATTERN, 2, 3, 10, seed=5))
        assert [len(y) for _, y in batches] == [10, 10, 10, 3]
        for fx, fy in batches:
            expected = min(3, len(fy))
            stamped = np.flatnonzero((fx[:, 0] == 1.0) & (fx[:, 2] == 1.0))
            assert stamped.size >= expected
            assert np.all(fy[:expected] == 2)

    def test_poison_batches_rejects_overfull(self):
        ds = synth_blobs(3, 4, 5, 0.5, seed=6)
        with pytest.raises(ValueError):
            list(poison_batches(ds, self.PATTERN, 2, 11, 10))


class TestReplacementScale:
    def test_formula(self):
        local = init_model(ARCH, seed=1)
        global_model = init_model(ARCH, seed=2)
        out = replacement_scale(local, global_model, 100.0)
        expected = global_model.params + 100.0 * (local.params - global_model.params)
        assert np.array_equal(out.params, expected)

    def test_scale_one_returns_local(self):
        local = init_model(ARCH, seed=1)
        global_model = init_model(ARCH, seed=2)
        out = replacement_scale(local, global_model, 1.0)
        assert np.allclose(out.params, local.params)

    def test_rejects_arch_mismatch(self):
        other = ModelArch(input_dim=4, hidden_dims=(), output_dim=3)
        with pytest.raises(ValueError):
            replacement_scale(init_model(ARCH, seed=1), init_model(other, seed=2), 10.0)


class TestMixModels:
    def test_extreme_rates(self):
        honest = init_model(ARCH, seed=1)
        adversarial = init_model(ARCH, seed=2)
        zero = mix_models(honest, adversarial, 0.0, np.random.default_rng(3))
        assert np.array_equal(zero.params, honest.params)
        one = mix_models(honest, adversarial, 1.0, np.random.default_rng(3))
        assert np.array_equal(one.params, adversarial.params)

    def test_fraction_approximates_rate(self):
        arch = ModelArch(input_dim=50, hidden_dims=(40,), output_dim=10)
        honest = FlatModel(np.zeros(arch.param_count()), arch)
        adversarial = FlatModel(np.ones(arch.param_count()), arch)
        mixed = mix_models(honest, adversarial, 0.1, np.random.default_rng(4))
        frac = mixed.params.mean()
        assert abs(frac - 0.1) < 0.02

    def test_deterministic_given_rng(self):
        honest = init_model(ARCH, seed=1)
        adversarial = init_model(ARCH, seed=2)
        a = mix_models(honest, adversarial, 0.5, np.random.default_rng(5))
        b = mix_models(honest, adversarial, 0.5, np.random.default_rng(5))
        assert np.array_equal(a.params, b.params)

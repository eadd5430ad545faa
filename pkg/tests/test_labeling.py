import numpy as np
import pytest

from sslpdl.errors import ConfigError, SamplingError
from sslpdl.labeling import (
    DENSITY,
    ONE_HOT,
    LabelConfig,
    RainyDayRule,
    augment,
    class_field,
    label_field,
    one_hot,
    pdl,
    proportions,
    resample_pixel_ratio,
    sample_rainy_days,
)
from sslpdl.synthgen import RainField, SynthConfig, gen_dataset, gen_forecast, gen_truth

CFG = LabelConfig(thresholds=(0.1, 10.0), alpha=0.0)


class TestOneHot:
    def test_below_first_threshold(self):
        assert np.array_equal(one_hot(0.05, CFG), [1.0, 0.0, 0.0])

    def test_lower_edge_inclusive(self):
        assert np.array_equal(one_hot(0.1, CFG), [0.0, 1.0, 0.0])

    def test_top_bin(self):
        assert np.array_equal(one_hot(10.0, CFG), [0.0, 0.0, 1.0])

    def test_domain_errors(self):
        with pytest.raises(ConfigError):
            one_hot(-0.5, CFG)
        with pytest.raises(ConfigError):
            one_hot(100.0, CFG)

    def test_too_few_classes_rejected(self):
        with pytest.raises(ConfigError):
            LabelConfig(thresholds=())


class TestDensityLabel:
    def test_bin_midpoint_splits_mass(self):
        # rho = (10 - 5.05) / (10 - 0.1) is exactly 0.5
        out = pdl(5.05, CFG)
        assert np.array_equal(out, [0.0, 0.5, 0.5])

    def test_smoothed_dry_pixel(self):
        cfg = LabelConfig(alpha=0.3)
        out = pdl(0.0, cfg)
        expected = np.array([(1 - 0.3) * 1.0 + 0.3 / 3, 0.3 / 3, 0.3 / 3])
        assert np.array_equal(out, expected)
        np.testing.assert_allclose(out, [0.8, 0.1, 0.1], atol=1e-12)

    def test_smoothed_heavy_pixel(self):
        cfg = LabelConfig(alpha=0.3)
        out = pdl(50.0, cfg)
        expected = np.array([0.3 / 3, 0.3 / 3, (1 - 0.3) + 0.3 / 3])
        assert np.array_equal(out, expected)
        np.testing.assert_allclose(out, [0.1, 0.1, 0.8], atol=1e-12)

    def test_degenerates_to_one_hot_at_bin_edge(self):
        assert np.array_equal(pdl(0.0, CFG), [1.0, 0.0, 0.0])
        assert np.array_equal(pdl(0.1, CFG), [0.0, 1.0, 0.0])

    def test_simplex_over_random_draws(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(1, 4))
            taus = np.sort(rng.uniform(0.05, 90.0, size=k))
            while np.any(np.diff(taus) < 1e-3):
                taus = np.sort(rng.uniform(0.05, 90.0, size=k))
            cfg = LabelConfig(thresholds=tuple(taus), alpha=float(rng.uniform(0, 0.99)))
            gammas = rng.uniform(0, 99.9, size=50)
            for g in gammas:
                v = pdl(float(g), cfg)
                assert v.min() >= 0.0
                assert abs(v.sum() - 1.0) <= 1e-9

    def test_argmax_matches_one_hot_in_bin_interior(self):
        rng = np.random.default_rng(1)
        cfg = LabelConfig(alpha=0.25)
        for g in rng.uniform(0, 99.9, size=500):
            oh = one_hot(float(g), cfg)
            dens = pdl(float(g), cfg)
            i = int(np.argmax(oh))
            if i == cfg.n_classes - 1:
                continue
            lo = 0.0 if i == 0 else cfg.thresholds[i - 1]
            hi = cfg.thresholds[i]
            rho = (hi - g) / (hi - lo)
            if rho > 0.5:
                assert int(np.argmax(dens)) == i

    def test_continuity_at_thresholds_and_within_bins(self):
        cfg = LabelConfig(alpha=0.2)
        eps = 1e-9
        for tau in cfg.thresholds:
            left = pdl(tau - eps, cfg)
            right = pdl(tau, cfg)
            np.testing.assert_allclose(left, right, atol=1e-6)
        # linear mass transfer inside a bin
        gs = np.linspace(0.1, 9.999, 64)
        vals = np.stack([pdl(float(g), cfg) for g in gs])
        d1 = np.diff(vals[:, 1])
        d2 = np.diff(vals[:, 2])
        assert np.all(d1 < 0) and np.all(d2 > 0)
        np.testing.assert_allclose(d1, d1[0], rtol=1e-6)

    def test_alpha_near_one_approaches_uniform(self):
        cfg = LabelConfig(alpha=0.999999)
        np.testing.assert_allclose(pdl(3.0, cfg), 1.0 / 3.0, atol=1e-5)

    def test_renormalize_mode_sums_to_one(self):
        cfg = LabelConfig(alpha=0.3, pdl_complement="renormalize")
        for g in (0.0, 0.05, 3.0, 9.9, 20.0):
            v = pdl(g, cfg)
            assert abs(v.sum() - 1.0) <= 1e-9
            assert v.min() >= 0.0


class TestLabelField:
    def test_dry_field_one_hot(self):
        rain = RainField(np.zeros((4, 5)))
        t = label_field(rain, CFG, ONE_HOT)
        assert np.all(t.probs[0] == 1.0)
        assert np.all(t.probs[1:] == 0.0)

    def test_dry_field_density_alpha_zero_equals_one_hot(self):
        rain = RainField(np.zeros((4, 5)))
        oh = label_field(rain, CFG, ONE_HOT)
        dens = label_field(rain, CFG, DENSITY)
        assert np.array_equal(oh.probs, dens.probs)

    def test_pixelwise_sums(self):
        rng = np.random.default_rng(2)
        rain = RainField(rng.uniform(0, 99, size=(16, 16)))
        t = label_field(rain, LabelConfig(alpha=0.4), DENSITY)
        sums = t.probs.sum(axis=0)
        assert np.abs(sums - 1.0).max() <= 1e-9

    def test_matches_scalar_path(self):
        rng = np.random.default_rng(3)
        vals = rng.uniform(0, 99, size=(3, 4))
        cfg = LabelConfig(alpha=0.15)
        t = label_field(RainField(vals), cfg, DENSITY)
        for r in range(3):
            for c in range(4):
                assert np.array_equal(t.probs[:, r, c], pdl(float(vals[r, c]), cfg))

    def test_class_field(self):
        vals = np.array([[0.0, 0.5], [10.0, 99.0]])
        assert np.array_equal(class_field(RainField(vals), CFG), [[0, 1], [2, 2]])


class TestProportions:
    def test_single_pixel(self):
        from sslpdl.labeling import LabelTensor

        t = LabelTensor(np.array([[[1.0]], [[0.0]], [[0.0]]]), ONE_HOT)
        assert np.array_equal(proportions([t]), [1.0, 0.0, 0.0])

    def test_two_pixels(self):
        from sslpdl.labeling import LabelTensor

        probs = np.zeros((3, 1, 2))
        probs[0, 0, 0] = 1.0
        probs[1, 0, 1] = 1.0
        t = LabelTensor(probs, ONE_HOT)
        assert np.array_equal(proportions([t]), [0.5, 0.5, 0.0])

    def test_density_mass_exceeds_one_hot_for_top_class(self):
        cfg = SynthConfig(seed=7)
        lab = LabelConfig(alpha=0.1)
        fields = [gen_truth(cfg, i) for i in range(20)]
        oh = proportions([label_field(f, lab, ONE_HOT) for f in fields])
        dens = proportions([label_field(f, lab, DENSITY) for f in fields])
        assert dens[-1] > oh[-1]
        assert abs(oh.sum() - 1.0) < 1e-9 and abs(dens.sum() - 1.0) < 1e-9


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    cfg = SynthConfig(seed=13)
    manifest = gen_dataset(cfg, (60, 5, 5), out)
    return manifest, out


class TestRainyDaySampling:
    def test_eighty_twenty(self, small_dataset):
        manifest, root = small_dataset
        train = manifest.split("train")
        out = sample_rainy_days(train, 0.8, RainyDayRule(), root, seed=5)
        assert len(out.entries) == len(train.entries)
        rule = RainyDayRule()
        n_rainy = 0
        for e in out.entries:
            from sslpdl.labeling import _load_truth

            truth = _load_truth(e, root)
            if (truth.values > rule.threshold).mean() >= rule.min_frac:
                n_rainy += 1
        assert n_rainy == round(0.8 * len(train.entries))

    def test_zero_fraction_only_dry(self, small_dataset):
        manifest, root = small_dataset
        train = manifest.split("train")
        out = sample_rainy_days(train, 0.0, RainyDayRule(), root, seed=5)
        rule = RainyDayRule()
        for e in out.entries:
            from sslpdl.labeling import _load_truth

            truth = _load_truth(e, root)
            assert (truth.values > rule.threshold).mean() < rule.min_frac

    def test_deterministic(self, small_dataset):
        manifest, root = small_dataset
        train = manifest.split("train")
        a = sample_rainy_days(train, 0.7, RainyDayRule(), root, seed=9)
        b = sample_rainy_days(train, 0.7, RainyDayRule(), root, seed=9)
        assert [e.sample_id for e in a.entries] == [e.sample_id for e in b.entries]

    def test_empty_stratum_error(self, small_dataset, tmp_path):
        manifest, root = small_dataset
        rule = RainyDayRule()
        from sslpdl.gridio import DatasetManifest
        from sslpdl.labeling import _load_truth

        rainy_only = DatasetManifest(
            [
                e
                for e in manifest.entries
                if (_load_truth(e, root).values > rule.threshold).mean()
                >= rule.min_frac
            ]
        )
        with pytest.raises(SamplingError):
            sample_rainy_days(rainy_only, 0.5, rule, root, seed=1)


class TestPixelRatioResampling:
    def _achieved(self, manifest, root, threshold=0.1):
        from sslpdl.labeling import _no_rain_stats

        dry, sizes = _no_rain_stats(manifest, root, threshold)
        return sum(dry) / sum(sizes)

    def test_under_sampling_hits_target(self, small_dataset):
        manifest, root = small_dataset
        train = manifest.split("train")
        out = resample_pixel_ratio(train, 0.8, "under", root)
        achieved = self._achieved(out, root)
        assert 0.78 <= achieved <= 0.82
        assert len(out.entries) < len(train.entries)

    def test_over_sampling_adds_only(self, small_dataset):
        manifest, root = small_dataset
        train = manifest.split("train")
        out = resample_pixel_ratio(train, 0.8, "over", root, seed=3)
        original = {e.sample_id for e in train.entries}
        assert original <= {e.sample_id for e in out.entries}
        duplicates = [e for e in out.entries if e.sample_id not in original]
        assert duplicates and all(e.augment is not None for e in duplicates)
        assert 0.78 <= self._achieved(out, root) <= 0.82

    def test_target_already_met_is_noop(self, small_dataset):
        manifest, root = small_dataset
        train = manifest.split("train")
        current = self._achieved(train, root)
        out = resample_pixel_ratio(train, current, "under", root)
        assert [e.sample_id for e in out.entries] == [
            e.sample_id for e in train.entries
        ]


class TestAugment:
    def _sample(self, seed=0):
        cfg = SynthConfig(height=32, width=32, n_vars=3, seed=seed)
        truth = gen_truth(cfg, 1)
        return gen_forecast(truth, cfg, 1), truth

    def test_flip_h_involution(self):
        sample = self._sample()
        once = augment(sample, "flip_h")
        twice = augment(once, "flip_h")
        assert np.array_equal(twice[0].values, sample[0].values)
        assert np.array_equal(twice[1].values, sample[1].values)

    def test_flips_apply_to_all_channels_and_truth(self):
        fcst, truth = self._sample()
        out_f, out_t = augment((fcst, truth), "flip_v")
        assert np.array_equal(out_f.values, fcst.values[:, ::-1, :])
        assert np.array_equal(out_t.values, truth.values[::-1, :])

    def test_mixup_lambda_one_is_identity(self):
        a = self._sample(seed=1)
        b = self._sample(seed=2)
        out = augment(a, "mixup", partner=b, mixup_lam=1.0)
        assert np.array_equal(out[0].values, a[0].values)
        assert np.array_equal(out[1].values, a[1].values)

    def test_mixup_requires_partner(self):
        with pytest.raises(ConfigError):
            augment(self._sample(), "mixup")

    def test_noise_zero_sigma_is_identity_and_skips_truth(self):
        sample = self._sample()
        out = augment(sample, "gaussian_noise", noise_std=0.0)
        assert np.array_equal(out[0].values, sample[0].values)
        assert np.array_equal(out[1].values, sample[1].values)
        noisy = augment(sample, "gaussian_noise", seed=4, noise_std=0.5)
        assert not np.array_equal(noisy[0].values, sample[0].values)
        assert np.array_equal(noisy[1].values, sample[1].values)

    def test_resize_preserves_shape_and_is_deterministic(self):
        sample = self._sample()
        a = augment(sample, "resize", seed=11)
        b = augment(sample, "resize", seed=11)
        assert a[0].values.shape == sample[0].values.shape
        assert a[1].values.shape == sample[1].values.shape
        assert np.array_equal(a[0].values, b[0].values)

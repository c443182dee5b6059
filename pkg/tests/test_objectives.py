import numpy as np
import pytest

from jpegexplore import objectives as obj
from jpegexplore.errors import InvalidParameterError


def fd_gradient(fn, x, h=1e-3):
    """Central finite differences of fn(x)[0] over every sample."""
    fd = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd[idx] = (fn(xp)[0] - fn(xm)[0]) / (2 * h)
    return fd


def assert_gradient_matches(fn, x, rel_tol=1e-4, h=1e-3):
    _, grad = fn(x)
    fd = fd_gradient(fn, x, h=h)
    scale = max(float(np.linalg.norm(fd)), 1e-12)
    rel = float(np.linalg.norm(grad - fd)) / scale
    assert rel <= rel_tol, f"gradient mismatch: relative error {rel:.2e}"


def full_mask(shape):
    return np.ones(shape[:2])


class TestVariance:
    def test_zero_at_rest(self, rng):
        x0 = rng.uniform(0, 255, (16, 16))
        value, grad = obj.eval_variance(x0, x0, full_mask(x0.shape), 0.0)
        assert value == 0.0
        assert np.all(grad == 0.0)

    def test_constant_patches_give_delta_squared(self):
        x = np.full((8, 8), 90.0)
        value, _ = obj.eval_variance(x, x, full_mask(x.shape), 5.0, "increase")
        n_patches = 3 * 3  # (8-6+1)^2 fully covered corners
        assert value == pytest.approx(25.0 * n_patches)

    def test_gradient(self, rng):
        x0 = rng.uniform(30, 220, (16, 16))
        x = x0 + rng.normal(0, 5, x0.shape)
        mask = full_mask(x.shape)
        assert_gradient_matches(
            lambda z: obj.eval_variance(z, x0, mask, 3.0, "decrease"), x)

    def test_absolute_target_mode(self, rng):
        x = rng.uniform(0, 255, (12, 12))
        mask = full_mask(x.shape)
        value, _ = obj.eval_variance(x, x, mask, 0.0, absolute_target=100.0)
        positions = obj.patch_positions(mask, (1, 1))
        p = x[None]  # recompute by hand
        total = 0.0
        for r, c in positions:
            patch = x[r:r + 6, c:c + 6]
            total += (patch.var() - 100.0) ** 2
        assert value == pytest.approx(total)

    def test_bad_params(self, rng):
        x = rng.uniform(0, 255, (12, 12))
        with pytest.raises(InvalidParameterError):
            obj.eval_variance(x, x, full_mask(x.shape), -1.0)
        with pytest.raises(InvalidParameterError):
            obj.eval_variance(x, x, full_mask(x.shape), 1.0, "sideways")
        with pytest.raises(InvalidParameterError):
            obj.eval_variance(x, x, np.zeros(x.shape), 1.0)


class TestTV:
    def test_constant_region_floor(self):
        x = np.full((10, 10), 55.0)
        value, grad = obj.eval_tv(x, full_mask(x.shape))
        # every in-bounds ordered neighbor pair contributes exactly eps
        pair_count = sum((10 - abs(dy)) * (10 - abs(dx)) for dy, dx in obj._TV_OFFSETS)
        assert value == pytest.approx(pair_count * obj.CHARBONNIER_EPS)
        assert np.allclose(grad, 0.0)

    def test_step_edge_matches_enumeration_oracle(self):
        x = np.zeros((12, 12))
        x[:, 6:] = 40.0
        mask = full_mask(x.shape)
        value, _ = obj.eval_tv(x, mask)
        total = 0.0
        for i in range(12):
            for j in range(12):
                for dy, dx in obj._TV_OFFSETS:
                    ii, jj = i + dy, j + dx
                    if 0 <= ii < 12 and 0 <= jj < 12:
                        d = x[i, j] - x[ii, jj]
                        total += np.sqrt(d * d + obj.CHARBONNIER_EPS ** 2)
        assert value == pytest.approx(total, rel=1e-12)

    def test_gradient(self, rng):
        x = rng.uniform(0, 255, (16, 16))
        mask = rng.random((16, 16))
        assert_gradient_matches(lambda z: obj.eval_tv(z, mask), x)

    def test_gradient_color(self, rng):
        x = rng.uniform(0, 255, (10, 10, 3))
        assert_gradient_matches(lambda z: obj.eval_tv(z, full_mask(x.shape)), x)

    def test_masked_pixels_irrelevant(self, rng):
        x = rng.uniform(0, 255, (12, 12))
        mask = np.zeros((12, 12))
        mask[3:9, 3:9] = 1.0
        v1, g1 = obj.eval_tv(x, mask)
        x2 = x.copy()
        x2[mask == 0] = 0.0
        v2, g2 = obj.eval_tv(x2, mask)
        assert v1 == pytest.approx(v2, rel=1e-12)
        assert np.allclose(g1 * mask, g2 * mask)


class TestL1Target:
    def test_exact_match_is_zero(self, rng):
        x = rng.uniform(0, 255, (8, 8))
        value, grad = obj.eval_l1_target(x, x, full_mask(x.shape))
        assert value == 0.0
        assert np.all(grad == 0.0)

    def test_single_pixel_off_by_two(self):
        x = np.full((8, 8), 100.0)
        t = x.copy()
        x[3, 4] += 2.0
        value, _ = obj.eval_l1_target(x, t, full_mask(x.shape))
        assert value == pytest.approx(2.0, abs=1e-3)

    def test_gradient(self, rng):
        t = rng.uniform(0, 255, (16, 16))
        x = t + rng.normal(0, 10, t.shape)
        assert_gradient_matches(lambda z: obj.eval_l1_target(z, t, full_mask(x.shape)), x)

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidParameterError):
            obj.eval_l1_target(np.zeros((8, 8)), np.zeros((9, 9)), np.ones((8, 8)))


class TestMagnitude:
    def test_zero_at_rest(self, rng):
        x0 = rng.uniform(0, 255, (14, 14))
        value, _ = obj.eval_magnitude(x0, x0, full_mask(x0.shape), 0.0)
        assert value == pytest.approx(0.0, abs=1e-18)

    def test_doubled_ac_with_delta_one(self, rng):
        x0 = rng.uniform(50, 200, (14, 14))
        x = 2.0 * x0  # doubles every patch's mean-removed signal
        value, _ = obj.eval_magnitude(x, x0, full_mask(x0.shape), 1.0, "increase")
        assert value == pytest.approx(0.0, abs=1e-15)

    def test_gradient(self, rng):
        x0 = rng.uniform(0, 255, (16, 16))
        x = x0 + rng.normal(0, 8, x0.shape)
        assert_gradient_matches(
            lambda z: obj.eval_magnitude(z, x0, full_mask(x.shape), 0.5, "decrease"), x)


class TestPatchDict:
    def source_from(self, image, mask):
        return obj.build_patch_set(image, mask, (2, 2))

    def test_verbatim_copy_scores_zero(self, rng):
        x = rng.uniform(0, 255, (24, 24))
        x[12:24, 12:24] = x[0:12, 0:12]
        src_mask = np.zeros((24, 24))
        src_mask[0:12, 0:12] = 1.0
        tgt_mask = np.zeros((24, 24))
        tgt_mask[12:24, 12:24] = 1.0
        source = self.source_from(x, src_mask)
        value, _ = obj.eval_patch_dict(x, x, source, tgt_mask)
        assert value == pytest.approx(0.0, abs=1e-18)

    def test_constant_offset_scores_zero(self, rng):
        x = rng.uniform(0, 200, (24, 24))
        x[12:24, 12:24] = x[0:12, 0:12] + 37.0
        src_mask = np.zeros((24, 24))
        src_mask[0:12, 0:12] = 1.0
        tgt_mask = np.zeros((24, 24))
        tgt_mask[12:24, 12:24] = 1.0
        value, _ = obj.eval_patch_dict(x, x, self.source_from(x, src_mask), tgt_mask)
        assert value == pytest.approx(0.0, abs=1e-15)

    def test_matches_bruteforce_nn_oracle(self, rng):
        x = rng.uniform(0, 255, (16, 16))
        src_mask = np.zeros((16, 16))
        src_mask[0:8, 0:8] = 1.0  # two-ish source patches at stride 2
        tgt_mask = np.zeros((16, 16))
        tgt_mask[8:16, 8:16] = 1.0
        source = self.source_from(x, src_mask)
        value, _ = obj.eval_patch_dict(x, x, source, tgt_mask)

        tgt_positions = obj.patch_positions(tgt_mask, (4, 4))
        total = 0.0
        src_centered = source[0].centered()
        for r, c in tgt_positions:
            patch = x[r:r + 6, c:c + 6].reshape(-1)
            patch = patch - patch.mean()
            best = min(float(np.sum((patch - s) ** 2)) for s in src_centered)
            total += best
        assert value == pytest.approx(total, rel=1e-12)

    def test_gradient_plain(self, rng):
        x = rng.uniform(0, 255, (16, 16))
        src_mask = np.zeros((16, 16))
        src_mask[0:10, 0:10] = 1.0
        tgt_mask = np.zeros((16, 16))
        tgt_mask[8:16, 8:16] = 1.0
        source = self.source_from(x.copy(), src_mask)
        assert_gradient_matches(
            lambda z: obj.eval_patch_dict(z, x, source, tgt_mask), x)

    def test_gradient_ignore_variance(self, rng):
        x0 = rng.uniform(0, 255, (16, 16))
        x = x0 + rng.normal(0, 4, x0.shape)
        src_mask = np.zeros((16, 16))
        src_mask[0:10, 0:10] = 1.0
        tgt_mask = np.zeros((16, 16))
        tgt_mask[8:16, 8:16] = 1.0
        source = self.source_from(x0, src_mask)
        assert_gradient_matches(
            lambda z: obj.eval_patch_dict(z, x0, source, tgt_mask, ignore_variance=True),
            x, rel_tol=1e-4, h=1e-4)

    def test_translation_of_mean_invariance(self, rng):
        x = rng.uniform(20, 200, (16, 16))
        src_mask = np.zeros((16, 16))
        src_mask[0:10, 0:10] = 1.0
        tgt_mask = np.zeros((16, 16))
        tgt_mask[8:16, 8:16] = 1.0
        source = self.source_from(x, src_mask)
        v1, _ = obj.eval_patch_dict(x, x, source, tgt_mask)
        shifted = x.copy()
        shifted[8:16, 8:16] += 25.0
        v2, _ = obj.eval_patch_dict(shifted, x, source, tgt_mask)
        assert v1 == pytest.approx(v2, rel=1e-9)


class TestPeriodicity:
    def test_matching_period_scores_zero(self):
        j = np.arange(32)
        x = np.tile(100.0 + 50.0 * np.sin(2 * np.pi * j / 8.0), (16, 1))
        value, _ = obj.eval_periodicity(x, full_mask(x.shape), [(0, 8)])
        assert value == pytest.approx(0.0, abs=1e-18)

    def test_wrong_period_matches_enumeration_oracle(self):
        j = np.arange(32)
        x = np.tile(100.0 + 50.0 * np.sin(2 * np.pi * j / 8.0), (16, 1))
        mask = full_mask(x.shape)
        value, _ = obj.eval_periodicity(x, mask, [(0, 5)])
        assert value > 0
        total = 0.0
        for i in range(16):
            for jj in range(32 - 5):
                d = x[i, jj] - x[i, jj + 5]
                total += d * d
        assert value == pytest.approx(total, rel=1e-12)

    def test_gradient_two_directions(self, rng):
        x = rng.uniform(0, 255, (16, 16))
        mask = rng.random((16, 16))
        assert_gradient_matches(
            lambda z: obj.eval_periodicity(z, mask, [(0, 4), (3, 0)]), x)

    def test_shifted_by_full_period_same_value_interior(self):
        j = np.arange(40)
        x = np.tile(100.0 + 30.0 * np.sin(2 * np.pi * j / 10.0), (12, 1))
        mask = np.zeros((12, 40))
        mask[:, 10:30] = 1.0
        v1, _ = obj.eval_periodicity(x, mask, [(0, 10)])
        v2, _ = obj.eval_periodicity(np.roll(x, 10, axis=1), mask, [(0, 10)])
        assert v1 == pytest.approx(v2, abs=1e-9)

    def test_oversized_period_rejected(self):
        x = np.zeros((16, 16))
        mask = np.zeros((16, 16))
        mask[4:8, 4:8] = 1.0
        with pytest.raises(InvalidParameterError):
            obj.eval_periodicity(x, mask, [(0, 12)])


class TestAutoPeriod:
    def test_pure_sinusoid(self):
        j = np.arange(48)
        x = np.tile(100.0 + 40.0 * np.sin(2 * np.pi * j / 8.0), (12, 1))
        period, confident = obj.auto_period(x, full_mask(x.shape), axis=1)
        assert period == 8
        assert confident

    def test_superposed_periods_strongest_wins(self):
        # 21-pixel extent: the 12-pixel harmonic exceeds the searchable lag
        # range, the dominant 6-pixel component is found
        j = np.arange(21)
        row = 3.0 * np.sin(2 * np.pi * j / 6.0) + 1.0 * np.sin(2 * np.pi * j / 12.0)
        x = np.tile(128.0 + 10.0 * row, (12, 1))
        mask = full_mask(x.shape)
        period, confident = obj.auto_period(x, mask, axis=1)
        # independent direct autocorrelation oracle over the same lag range
        sig = x[0] - x[0].mean()
        corrs = {}
        for lag in range(3, 21 // 2 + 1):
            a, b = sig[:-lag], sig[lag:]
            corrs[lag] = np.sum(a * b) / np.sqrt(np.sum(a * a) * np.sum(b * b))
        assert period == max(corrs, key=corrs.get) == 6
        assert confident

    def test_white_noise_low_confidence(self, rng):
        x = rng.normal(128, 40, (40, 40))
        period, confident = obj.auto_period(x, full_mask(x.shape), axis=0)
        assert 3 <= period <= 20
        assert not confident

    def test_region_too_small(self):
        x = np.zeros((5, 5))
        with pytest.raises(InvalidParameterError):
            obj.auto_period(x, full_mask(x.shape), axis=0)


class TestDiversity:
    def test_identical_outputs_zero_pairwise(self, rng):
        x = rng.uniform(0, 255, (8, 8))
        value, grads = obj.eval_diversity([x, x.copy()], x, full_mask(x.shape))
        assert value == pytest.approx(0.0, abs=1e-15)
        assert len(grads) == 2

    def test_single_pixel_term(self):
        a = np.full((8, 8), 100.0)
        b = a.copy()
        b[2, 2] += 3.0
        value, _ = obj.eval_diversity([a, b], a, full_mask(a.shape))
        assert -value == pytest.approx(3.0, abs=2e-3)  # maximization surrogate

    def test_gradient(self, rng):
        x0 = rng.uniform(0, 255, (8, 8))
        a = x0 + rng.normal(0, 5, x0.shape)
        b = x0 + rng.normal(0, 5, x0.shape)
        mask = full_mask(x0.shape)

        def fn(z):
            value, grads = obj.eval_diversity([z, b], x0, mask, proximity_weight=0.5)
            return value, grads[0]
        assert_gradient_matches(fn, a)

    def test_needs_two(self, rng):
        x = rng.uniform(0, 255, (8, 8))
        with pytest.raises(InvalidParameterError):
            obj.eval_diversity([x], x, full_mask(x.shape))


class TestRange:
    def test_in_range_zero(self):
        x = np.full((8, 8), 100.0)
        value, grad = obj.eval_range(x, full_mask(x.shape))
        assert value == 0.0 and np.all(grad == 0.0)

    def test_formula(self):
        x = np.full((8, 8), 100.0)
        x[0, 0] = 240.0
        value, _ = obj.eval_range(x, full_mask(x.shape), lo=16, hi=235)
        assert value == pytest.approx(5.0 / 64.0)

    def test_gradient(self, rng):
        x = rng.uniform(0, 255, (16, 16))
        assert_gradient_matches(lambda z: obj.eval_range(z, full_mask(x.shape)), x)

    def test_invalid_bounds(self):
        with pytest.raises(InvalidParameterError):
            obj.eval_range(np.zeros((4, 4)), np.ones((4, 4)), lo=200, hi=100)


class TestHsv:
    def test_zero_amount_identity(self, rng):
        x = rng.uniform(0, 255, (8, 8, 3))
        out = obj.build_hsv_target(x, full_mask(x.shape), "hue", 0.0)
        assert np.allclose(out, x, atol=1e-9)

    def test_value_scales_channels(self):
        x = np.full((4, 4, 3), 128.0)
        out = obj.build_hsv_target(x, full_mask(x.shape), "value", 0.10)
        assert np.allclose(out, 128.0 * 1.10, atol=1e-9)

    def test_hue_full_turn_identity(self, rng):
        x = rng.uniform(0, 255, (8, 8, 3))
        out = obj.build_hsv_target(x, full_mask(x.shape), "hue", 360.0)
        assert np.allclose(out, x, atol=1e-9)

    def test_round_trip_conversions(self, rng):
        x = rng.uniform(0, 255, (32, 32, 3))
        back = obj.hsv_to_rgb(obj.rgb_to_hsv(x))
        assert np.allclose(back, x, atol=1e-9)

    def test_grayscale_rejected(self):
        with pytest.raises(InvalidParameterError):
            obj.build_hsv_target(np.zeros((8, 8)), np.ones((8, 8)), "hue", 10.0)

    def test_mask_blends(self, rng):
        x = rng.uniform(50, 200, (8, 8, 3))
        mask = np.zeros((8, 8))
        mask[0:4, :] = 1.0
        out = obj.build_hsv_target(x, mask, "value", 0.5)
        assert np.allclose(out[4:], x[4:])
        assert not np.allclose(out[:4], x[:4])


class TestClassifier:
    def test_self_match_scores_one(self):
        hook = obj.get_hook("toy")
        mask = np.ones(hook.shape)
        for d, template in enumerate(hook.templates):
            value, _ = obj.eval_classifier(template, mask, hook, d)
            assert -value == pytest.approx(1.0, abs=1e-12)
            others = [hook.evaluate(template, d)[0][k]
                      for k in range(hook.num_classes) if k != d]
            assert all(s < 1.0 - 1e-6 for s in others)

    def test_uniform_crop_all_zero(self):
        hook = obj.get_hook("toy")
        crop = np.full(hook.shape, 70.0)
        scores, grad = hook.evaluate(crop, 0)
        assert np.all(scores == 0.0)
        assert np.all(grad == 0.0)

    def test_gradient(self, rng):
        hook = obj.get_hook("toy")
        x = rng.uniform(0, 255, hook.shape)
        mask = np.ones(hook.shape)
        assert_gradient_matches(
            lambda z: obj.eval_classifier(z, mask, hook, 2), x, rel_tol=1e-3)

    def test_gradient_color(self, rng):
        hook = obj.get_hook("toy")
        x = rng.uniform(0, 255, hook.shape + (3,))
        mask = np.ones(hook.shape)
        assert_gradient_matches(
            lambda z: obj.eval_classifier(z, mask, hook, 1), x, rel_tol=1e-3)

    def test_unknown_hook_and_class(self):
        with pytest.raises(InvalidParameterError):
            obj.get_hook("nonexistent")
        hook = obj.get_hook("toy")
        with pytest.raises(InvalidParameterError):
            hook.evaluate(np.zeros(hook.shape), 99)


class TestMaskInvariance:
    """Zeroing pixels outside the mask changes nothing observable."""

    @pytest.mark.parametrize("name", ["variance", "tv", "l1", "magnitude",
                                      "periodicity", "range", "classifier"])
    def test_invariant(self, rng, name):
        x = rng.uniform(10, 245, (16, 16))
        x0 = rng.uniform(10, 245, (16, 16))
        mask = np.zeros((16, 16))
        mask[4:12, 4:12] = 1.0
        small_hook = obj.TemplateClassifierHook(obj.default_template_bank(8))
        fns = {
            "variance": lambda z: obj.eval_variance(z, x0, mask, 2.0),
            "tv": lambda z: obj.eval_tv(z, mask),
            "l1": lambda z: obj.eval_l1_target(z, x0, mask),
            "magnitude": lambda z: obj.eval_magnitude(z, x0, mask, 0.3),
            "periodicity": lambda z: obj.eval_periodicity(z, mask, [(0, 3)]),
            "range": lambda z: obj.eval_range(z * 2.0, mask),
            "classifier": lambda z: obj.eval_classifier(z, mask, small_hook, 0),
        }
        fn = fns[name]
        v1, g1 = fn(x)
        zeroed = x.copy()
        zeroed[mask == 0] = 0.0
        v2, g2 = fn(zeroed)
        assert v1 == pytest.approx(v2, rel=1e-9, abs=1e-12)
        assert np.allclose(np.asarray(g1) * mask, np.asarray(g2) * mask)

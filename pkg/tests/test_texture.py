"""Texture synthesis statistics and blending arithmetic."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tumorsynth.grids import BBox, GridError, SoftMask3, Volume3
from tumorsynth.texture import (TextureError, TextureParams, blend, salt_noise,
                                texture_field)


class TestSaltNoise:
    def test_density_zero_all_zeros(self):
        assert np.all(salt_noise((8, 8, 8), 0.0, 1.0, seed=1) == 0.0)

    def test_density_one_all_value(self):
        assert np.all(salt_noise((8, 8, 8), 1.0, 2.5, seed=1) == 2.5)

    def test_binomial_bound_64_cubed(self):
        field = salt_noise((64, 64, 64), 0.05, 1.0, seed=123)
        fraction = float((field != 0).mean())
        assert 0.0466 <= fraction <= 0.0534

    def test_deterministic(self):
        a = salt_noise((16, 16, 16), 0.3, 1.0, seed=7)
        b = salt_noise((16, 16, 16), 0.3, 1.0, seed=7)
        c = salt_noise((16, 16, 16), 0.3, 1.0, seed=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_impulse_counts_fit_binomial(self):
        # chi-square goodness of fit over seeds, alpha = 0.01
        n, density, draws = 16 ** 3, 0.3, 200
        counts = np.array([(salt_noise((16, 16, 16), density, 1.0, seed=s) != 0).sum()
                           for s in range(draws)])
        edges = stats.binom.ppf(np.linspace(0.1, 0.9, 9), n, density)
        edges = np.unique(edges)
        observed, _ = np.histogram(counts, bins=[-np.inf, *edges, np.inf])
        cdf = stats.binom.cdf([*edges, np.inf], n, density)
        expected = draws * np.diff([0.0, *cdf])
        keep = expected > 1e-9
        chi2 = float(((observed[keep] - expected[keep]) ** 2
                      / expected[keep]).sum())
        assert chi2 < stats.chi2.ppf(0.99, keep.sum() - 1)

    def test_invalid_density(self):
        with pytest.raises(TextureError):
            salt_noise((4, 4, 4), 1.5, 1.0, seed=0)


class TestTextureField:
    def test_flat_field_with_zero_target_std(self):
        params = TextureParams(salt_density=0.0, target_mean_hu=42.0,
                               target_std_hu=0.0)
        field = texture_field((8, 8, 8), (1, 1, 1), params, seed=0)
        assert np.all(field.values == 42.0)

    def test_flat_field_error_with_nonzero_std(self):
        params = TextureParams(salt_density=0.0, target_std_hu=15.0)
        with pytest.raises(TextureError, match="flat texture"):
            texture_field((8, 8, 8), (1, 1, 1), params, seed=0)

    def test_default_statistics_32_cubed(self):
        params = TextureParams(target_mean_hu=60.0, target_std_hu=15.0,
                               clip_hu=(-500.0, 500.0))  # clip inactive
        field = texture_field((32, 32, 32), (1, 1, 1), params, seed=5)
        assert abs(float(field.values.mean()) - 60.0) <= 5.0
        assert abs(float(field.values.std()) - 15.0) / 15.0 <= 0.2

    def test_clip_contract_exact(self):
        params = TextureParams(target_mean_hu=60.0, target_std_hu=40.0,
                               clip_hu=(40.0, 80.0))
        field = texture_field((16, 16, 16), (1, 1, 1), params, seed=9)
        assert field.values.min() >= 40.0
        assert field.values.max() <= 80.0

    def test_deterministic(self):
        params = TextureParams()
        a = texture_field((12, 12, 12), (1, 1, 2), params, seed=3)
        b = texture_field((12, 12, 12), (1, 1, 2), params, seed=3)
        assert np.array_equal(a.values, b.values)

    def test_param_validation(self):
        with pytest.raises(TextureError):
            TextureParams(clip_hu=(10.0, -10.0))
        with pytest.raises(TextureError):
            TextureParams(target_mean_hu=300.0, clip_hu=(-100.0, 200.0))


def _blend_fixture(host_value=100.0, tex_value=20.0, weight=0.5):
    host = Volume3(np.full((10, 10, 10), host_value, dtype=np.float32),
                   spacing=(1, 1, 1))
    box = BBox((2, 2, 2), (6, 6, 6))
    params = TextureParams(salt_density=0.0, target_mean_hu=tex_value,
                           target_std_hu=0.0, clip_hu=(-200.0, 200.0))
    tex = texture_field(box.shape, (1, 1, 1), params, seed=0)
    soft = SoftMask3(np.full(box.shape, weight, dtype=np.float32),
                     spacing=(1, 1, 1))
    return host, tex, soft, box


class TestBlend:
    def test_zero_weight_exact_host(self):
        host, tex, _, box = _blend_fixture()
        soft = SoftMask3(np.zeros(box.shape, np.float32), spacing=(1, 1, 1))
        out = blend(host, tex, soft, box)
        assert np.array_equal(out.data, host.data)

    def test_full_weight_equals_texture(self):
        host, tex, _, box = _blend_fixture()
        soft = SoftMask3(np.ones(box.shape, np.float32), spacing=(1, 1, 1))
        out = blend(host, tex, soft, box)
        assert np.allclose(out.data[box.slices], tex.values)

    def test_half_weight_hand_value(self):
        host, tex, soft, box = _blend_fixture(100.0, 20.0, 0.5)
        out = blend(host, tex, soft, box)
        assert np.allclose(out.data[box.slices], 60.0)

    def test_locality_outside_support(self):
        host, tex, soft, box = _blend_fixture()
        out = blend(host, tex, soft, box)
        untouched = np.ones(host.dims, dtype=bool)
        untouched[box.slices] = False
        assert np.array_equal(out.data[untouched], host.data[untouched])

    def test_no_input_mutation(self):
        host, tex, soft, box = _blend_fixture()
        before = host.data.copy()
        blend(host, tex, soft, box)
        assert np.array_equal(host.data, before)

    def test_geometry_mismatch_rejected(self):
        host, tex, soft, _ = _blend_fixture()
        with pytest.raises(GridError, match="crop"):
            blend(host, tex, soft, BBox((0, 0, 0), (3, 3, 3)))
        with pytest.raises(GridError, match="exceeds host"):
            blend(host, tex, soft, BBox((8, 8, 8), (12, 12, 12)))

    @settings(max_examples=25, deadline=None)
    @given(weight=st.floats(0.0, 1.0), host_hu=st.floats(-200.0, 200.0),
           tex_hu=st.floats(-100.0, 180.0))
    def test_blended_value_between_host_and_texture(self, weight, host_hu, tex_hu):
        host = Volume3(np.full((4, 4, 4), host_hu, dtype=np.float32),
                       spacing=(1, 1, 1))
        box = BBox((0, 0, 0), (4, 4, 4))
        params = TextureParams(salt_density=0.0, target_mean_hu=tex_hu,
                               target_std_hu=0.0, clip_hu=(-200.0, 200.0))
        tex = texture_field(box.shape, (1, 1, 1), params, seed=0)
        soft = SoftMask3(np.full(box.shape, weight, dtype=np.float32),
                         spacing=(1, 1, 1))
        out = blend(host, tex, soft, box).data
        lo = min(host_hu, tex_hu) - 1e-3
        hi = max(host_hu, tex_hu) + 1e-3
        assert np.all(out >= lo) and np.all(out <= hi)

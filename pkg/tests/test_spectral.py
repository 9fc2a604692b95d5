import numpy as np
import pytest

from percollfft.errors import DimensionError, ParameterError
from percollfft.spectral import (
    Profile, dft_oracle, fft, image_features, smooth_profile, spectral_features,
)

from oracles import block_means


class TestDftOracle:
    def test_impulse(self):
        np.testing.assert_allclose(dft_oracle([1, 0, 0, 0]), np.ones(4), atol=1e-15)

    def test_constant(self):
        out = dft_oracle(np.full(7, 2.5))
        assert abs(out[0] - 17.5) < 1e-12
        assert np.abs(out[1:]).max() < 1e-12

    def test_parseval(self, rng):
        x = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        X = dft_oracle(x)
        assert abs(np.sum(np.abs(x) ** 2) - np.sum(np.abs(X) ** 2) / 64) < 1e-9


class TestFft:
    def test_length_one_is_identity(self):
        assert fft([3.0 - 1j])[0] == 3.0 - 1j

    @pytest.mark.parametrize("n", [2, 8, 128, 3, 5, 100, 255])
    def test_matches_oracle(self, rng, n):
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        assert np.abs(fft(x) - dft_oracle(x)).max() <= 1e-9

    def test_real_input_is_conjugate_symmetric(self, rng):
        X = fft(rng.random(100))
        np.testing.assert_allclose(X[1:], np.conj(X[1:][::-1]), atol=1e-12)

    def test_rejects_empty_and_2d(self):
        with pytest.raises(DimensionError):
            fft([])
        with pytest.raises(DimensionError):
            fft(np.zeros((2, 2)))


def _profile(columns, n=5):
    vals = np.stack(columns, axis=1)
    return Profile(vals, n, vals.shape[0] * n)


class TestSpectralFeatures:
    def test_three_channels_of_100(self):
        feats = spectral_features(_profile([np.zeros(100)] * 3))
        assert feats.values.shape == (300,)
        assert feats.channels.shape == (3, 100)

    def test_constant_channel_reads_2c_at_dc(self):
        feats = spectral_features(_profile([np.full(100, 0.3)]))
        assert abs(feats.values[0] - 0.6) < 1e-9
        assert np.abs(feats.values[1:]).max() < 1e-9

    @pytest.mark.parametrize("j", [1, 7, 49])
    def test_unit_cosine(self, j):
        k = np.arange(100)
        feats = spectral_features(_profile([np.cos(2 * np.pi * j * k / 100)])).values
        assert abs(feats[j] - 1.0) < 1e-9
        assert abs(feats[100 - j] - 1.0) < 1e-9
        rest = np.delete(feats, [j, 100 - j])
        assert rest.max() < 1e-9

    def test_linearity(self, rng):
        base = _profile([rng.random(60), rng.random(60)])
        scaled = Profile(base.values * 0.4, base.n, base.source_height)
        np.testing.assert_allclose(spectral_features(scaled).values,
                                   0.4 * spectral_features(base).values, atol=1e-12)

    def test_non_negative(self, rng):
        feats = spectral_features(_profile([rng.random(33) for _ in range(3)]))
        assert np.all(feats.values >= 0) and np.all(np.isfinite(feats.values))

    def test_json_shape(self):
        doc = spectral_features(_profile([np.ones(4)] * 3)).to_json()
        assert doc["n"] == 5 and doc["height"] == 20
        assert len(doc["channels"]) == 3 and len(doc["channels"][0]) == 4


class TestSmoothProfile:
    def test_constant_image(self):
        prof = smooth_profile(np.full((40, 20, 3), 0.6), n=5)
        np.testing.assert_allclose(prof.values, 0.6, atol=1e-15)

    def test_native_geometry(self):
        prof = smooth_profile(np.zeros((500, 100, 3)), n=5)
        assert prof.values.shape == (100, 3)
        assert image_features(np.zeros((500, 100, 3))).values.shape == (300,)

    def test_ramp_against_hand_sum(self):
        img = (np.arange(50, dtype=np.float64) / 49).reshape(10, 5)
        prof = smooth_profile(img, n=5)
        assert prof.values.shape == (2, 1)
        # both blocks cover all five columns, so each is a plain mean of 25 pixels
        np.testing.assert_allclose(prof.values[:, 0], [img[:5].mean(), img[5:].mean()],
                                   atol=1e-12)

    def test_random_images_match_block_oracle(self, rng):
        for _ in range(25):
            n = int(rng.choice([3, 5, 7]))
            h = int(rng.integers(2 * n, 60))
            w = int(rng.integers(n, 30))
            img = rng.random((h, w, 3))
            np.testing.assert_allclose(smooth_profile(img, n).values, block_means(img, n),
                                       atol=1e-9)

    def test_trailing_rows_dropped(self, rng):
        img = rng.random((23, 9, 3))
        assert smooth_profile(img, 5).length == 4
        img[20:] = 1.0
        np.testing.assert_array_equal(smooth_profile(img, 5).values,
                                      smooth_profile(img[:20], 5).values)

    def test_mean_preserving_on_block_constant(self, rng):
        blocks = rng.random((6, 1, 3))
        img = np.repeat(np.repeat(blocks, 5, axis=0), 11, axis=1)
        np.testing.assert_allclose(smooth_profile(img, 5).values, blocks[:, 0, :], atol=1e-12)

    @pytest.mark.parametrize("n", [4, 2, 1, 0])
    def test_bad_window(self, n):
        with pytest.raises(ParameterError):
            smooth_profile(np.zeros((40, 20, 3)), n=n)

    def test_too_small(self):
        with pytest.raises(DimensionError):
            smooth_profile(np.zeros((9, 20, 3)), n=5)
        with pytest.raises(DimensionError):
            smooth_profile(np.zeros((20, 4, 3)), n=5)

    def test_out_of_range_pixels(self):
        with pytest.raises(ParameterError):
            smooth_profile(np.full((20, 10), 1.5), n=5)

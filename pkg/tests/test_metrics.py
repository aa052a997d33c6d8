"""Image quality metrics and the quality report table."""

import math

import numpy as np
import pytest

from mesongs.metrics import QualityReport, psnr, ssim


class TestPsnr:
    def test_uniform_offset_twenty_db(self):
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.1)
        np.testing.assert_allclose(psnr(a, b), 20.0)

    def test_identical_is_infinite(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(12, 12, 3))
        assert psnr(img, img) == math.inf

    def test_full_swing_is_zero(self):
        a = np.zeros((4, 4, 3))
        b = np.ones((4, 4, 3))
        np.testing.assert_allclose(psnr(a, b), 0.0)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(2, 6, 6, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


class TestSsim:
    def test_identical_is_one(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(16, 16, 3))
        np.testing.assert_allclose(ssim(img, img), 1.0, atol=1e-12)

    def test_constant_pair_luminance_closed_form(self):
        """For flat images only the luminance term survives."""
        a = np.full((16, 16, 3), 0.25)
        b = np.full((16, 16, 3), 0.75)
        c1 = (0.01 * 1.0) ** 2
        expect = (2 * 0.25 * 0.75 + c1) / (0.25 ** 2 + 0.75 ** 2 + c1)
        np.testing.assert_allclose(ssim(a, b), expect, atol=1e-9)

    def test_negated_image_scores_low(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(24, 24, 3))
        assert ssim(img, 1.0 - img) < 0.5

    def test_noise_scores_below_identity(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(0.2, 0.8, size=(20, 20, 3))
        noisy = np.clip(img + rng.normal(0, 0.05, size=img.shape), 0, 1)
        assert 0.5 < ssim(img, noisy) < 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        a, b = rng.uniform(size=(2, 16, 16, 3))
        np.testing.assert_allclose(ssim(a, b), ssim(b, a), atol=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((10, 10, 3)), np.zeros((10, 10, 3)))

    def test_window_exactly_fits(self):
        img = np.random.default_rng(6).uniform(size=(11, 11, 3))
        np.testing.assert_allclose(ssim(img, img), 1.0, atol=1e-12)


class TestQualityReport:
    def make_report(self):
        return QualityReport(view_psnr=(30.0, 32.0, 34.0),
                             view_ssim=(0.90, 0.92, 0.94),
                             input_bytes=1000, compressed_bytes=200)

    def test_aggregates(self):
        rep = self.make_report()
        np.testing.assert_allclose(rep.mean_psnr, 32.0)
        np.testing.assert_allclose(rep.mean_ssim, 0.92)
        np.testing.assert_allclose(rep.compression_ratio, 5.0)

    def test_table_mentions_views_and_means(self):
        text = self.make_report().to_table()
        assert "32.0" in text and "0.92" in text
        assert text.count("\n") >= 4

    def test_csv_shape(self):
        lines = self.make_report().to_csv().strip().splitlines()
        assert lines[0].startswith("view,psnr")
        assert len(lines) == 5  # header, three views, mean row
        assert lines[-1].startswith("mean,")

"""Image quality metrics and the evaluation report.

Images are float arrays in [0, 1] (dynamic range L = 1). PSNR of identical
images is +inf. SSIM follows the standard windowed form: 11x11 Gaussian
window with sigma 1.5, K1 = 0.01, K2 = 0.03, statistics from valid (fully
overlapping) window positions only, averaged over channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ValueError("images must be HxW or HxWxC arrays")
    return a, b


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for unit dynamic range."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window():
    half = (SSIM_WINDOW - 1) / 2.0
    x = np.arange(SSIM_WINDOW) - half
    w = np.exp(-(x * x) / (2.0 * SSIM_SIGMA ** 2))
    return w / w.sum()


def _windowed_mean(img, w):
    # separable valid-mode filtering: full correlate, then crop the border
    half = SSIM_WINDOW // 2
    out = correlate1d(img, w, axis=0, mode="constant")
    out = correlate1d(out, w, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a, b):
    """Mean structural similarity over channels."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    h, w_, _ = a.shape
    if h < SSIM_WINDOW or w_ < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    w = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx = _windowed_mean(x, w)
        my = _windowed_mean(y, w)
        sxx = _windowed_mean(x * x, w) - mx * mx
        syy = _windowed_mean(y * y, w) - my * my
        sxy = _windowed_mean(x * y, w) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass(frozen=True)
class QualityReport:
    """Per-view and aggregate quality plus size accounting."""

    view_psnr: tuple
    view_ssim: tuple
    input_bytes: int
    compressed_bytes: int

    @property
    def mean_psnr(self):
        return float(np.mean(self.view_psnr))

    @property
    def mean_ssim(self):
        return float(np.mean(self.view_ssim))

    @property
    def compression_ratio(self):
        return self.input_bytes / self.compressed_bytes

    def to_table(self):
        lines = [f"{'view':>6} {'psnr_db':>10} {'ssim':>8}"]
        for i, (p, s) in enumerate(zip(self.view_psnr, self.view_ssim)):
            lines.append(f"{i:>6} {p:>10.3f} {s:>8.4f}")
        lines.append(f"{'mean':>6} {self.mean_psnr:>10.3f} {self.mean_ssim:>8.4f}")
        lines.append(f"input bytes:      {self.input_bytes}")
        lines.append(f"compressed bytes: {self.compressed_bytes}")
        lines.append(f"compression:      {self.compression_ratio:.2f}x")
        return "\n".join(lines)

    def to_csv(self):
        lines = ["view,psnr_db,ssim,input_bytes,compressed_bytes,compression_ratio"]
        for i, (p, s) in enumerate(zip(self.view_psnr, self.view_ssim)):
            lines.append(f"{i},{p:.6f},{s:.6f},,,")
        lines.append(f"mean,{self.mean_psnr:.6f},{self.mean_ssim:.6f},"
                     f"{self.input_bytes},{self.compressed_bytes},"
                     f"{self.compression_ratio:.6f}")
        return "\n".join(lines) + "\n"

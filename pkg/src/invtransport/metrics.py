"""Image comparison metrics: RMSE and multi-scale SSIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
MIN_SIZE = 32


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    ms_ssim: float

    @property
    def one_minus_ms_ssim(self):
        return 1.0 - self.ms_ssim

    def as_record(self):
        return {"rmse": self.rmse, "ms_ssim": self.ms_ssim,
                "one_minus_ms_ssim": self.one_minus_ms_ssim}


def _data(img):
    return np.asarray(getattr(img, "data", img), dtype=np.float64)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")


def rmse(a, b) -> float:
    """Root mean squared difference over all pixels and channels."""
    x, y = _data(a), _data(b)
    _check_pair(x, y)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def _gaussian_window():
    r = np.arange(WINDOW_SIZE) - (WINDOW_SIZE - 1) / 2.0
    w = np.exp(-(r**2) / (2.0 * WINDOW_SIGMA**2))
    return w / w.sum()


def _filter(x, w):
    # 'valid' convolution, matching the reference MS-SSIM implementation
    out = correlate1d(x, w, axis=0, mode="constant")
    out = correlate1d(out, w, axis=1, mode="constant")
    h = len(w) // 2
    return out[h:x.shape[0] - h, h:x.shape[1] - h]


def _ssim_terms(x, y, c1, c2, w):
    mu_x = _filter(x, w)
    mu_y = _filter(y, w)
    sxx = _filter(x * x, w) - mu_x**2
    syy = _filter(y * y, w) - mu_y**2
    sxy = _filter(x * y, w) - mu_x * mu_y
    cs = (2.0 * sxy + c2) / (sxx + syy + c2)
    lum = (2.0 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _downsample(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(a, b, dynamic_range=None) -> float:
    """Five-scale MS-SSIM on luminance (channel mean).

    ``dynamic_range`` defaults to the joint maximum of the two images, since
    HDR renders have no fixed white level.
    """
    x, y = _data(a), _data(b)
    _check_pair(x, y)
    if x.ndim == 3:
        x = x.mean(axis=2)
        y = y.mean(axis=2)
    if min(x.shape) < MIN_SIZE:
        raise ValueError(f"MS-SSIM needs images of at least {MIN_SIZE}x{MIN_SIZE}, got "
                         f"{x.shape[1]}x{x.shape[0]}")
    L = float(max(x.max(), y.max())) if dynamic_range is None else float(dynamic_range)
    if L <= 0:
        L = 1.0
    c1 = (K1 * L) ** 2
    c2 = (K2 * L) ** 2
    w = _gaussian_window()
    levels = len(MS_SSIM_WEIGHTS)
    cs_terms = []
    for level in range(levels):
        # the coarsest 2x2 scale is smaller than the window: shrink it to fit
        size = min(WINDOW_SIZE, min(x.shape) - (1 - min(x.shape) % 2))
        win = w if size == WINDOW_SIZE else _shrunk_window(size)
        ssim_val, cs = _ssim_terms(x, y, c1, c2, win)
        if level < levels - 1:
            cs_terms.append(cs)
            x = _downsample(x)
            y = _downsample(y)
    values = np.array(cs_terms + [ssim_val])
    # negative contrast terms would make fractional powers complex
    values = np.maximum(values, 0.0)
    return float(np.prod(values**MS_SSIM_WEIGHTS))


def _shrunk_window(size):
    r = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(r**2) / (2.0 * WINDOW_SIGMA**2))
    return w / w.sum()


def compare(a, b, dynamic_range=None) -> MetricReport:
    return MetricReport(rmse(a, b), ms_ssim(a, b, dynamic_range))

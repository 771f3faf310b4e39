"""Objective quality: PSNR, SSIM, per-view vectors, inter-view delta,
Bjøntegaard deltas (classic cubic least-squares variant)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate

from .errors import ConfigError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
_LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # BT.601


def _peak_of(a: np.ndarray, peak: float | None) -> float:
    if peak is not None:
        return float(peak)
    return 255.0 if a.dtype == np.uint8 else 1.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float | None = None) -> float:
    """10*log10(peak^2 / MSE) over all channels, capped at 100 dB."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dim mismatch: {a.shape} vs {b.shape}")
    p = _peak_of(a, peak)
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(p * p / mse)))


def _luma(img: np.ndarray) -> np.ndarray:
    f = img.astype(np.float64)
    if f.ndim == 3:
        w = _LUMA_WEIGHTS
        f = w[0] * f[..., 0] + w[1] * f[..., 1] + w[2] * f[..., 2]
    return f


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float | None = None) -> float:
    """Mean local SSIM on luma: 11x11 Gaussian window sigma=1.5, valid region."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"dim mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    p = _peak_of(a, peak)
    x, y = _luma(a), _luma(b)
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    pad = SSIM_WINDOW // 2
    crop = (slice(pad, -pad), slice(pad, -pad))

    def f(img):
        return correlate(img, win, mode="nearest")[crop]

    mu_x, mu_y = f(x), f(y)
    sxx = f(x * x) - mu_x * mu_x
    syy = f(y * y) - mu_y * mu_y
    sxy = f(x * y) - mu_x * mu_y
    c1 = (SSIM_K1 * p) ** 2
    c2 = (SSIM_K2 * p) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class QualityVector:
    view_ids: list[str]
    psnr_db: list[float]
    ssim: list[float]

    def __post_init__(self):
        if not (len(self.view_ids) == len(self.psnr_db) == len(self.ssim)):
            raise ConfigError("quality vector fields must have equal length")

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))


def interview_delta(q: QualityVector) -> tuple[float, float]:
    """(max - min) per metric over all rendered views."""
    if len(q.view_ids) == 0:
        raise ConfigError("quality vector is empty")
    return (float(np.max(q.psnr_db) - np.min(q.psnr_db)),
            float(np.max(q.ssim) - np.min(q.ssim)))


@dataclass
class RDCurve:
    points: list[tuple[float, float]]  # (size_bytes, quality), sorted by size
    label: str = ""

    def __post_init__(self):
        if len(self.points) < 4:
            raise ConfigError(f"RD curve {self.label!r} needs >= 4 points, "
                              f"has {len(self.points)}")
        sizes = [p[0] for p in self.points]
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"RD curve {self.label!r} has non-positive sizes")
        if len(set(sizes)) != len(sizes):
            raise ConfigError(f"RD curve {self.label!r} has duplicate sizes")
        self.points = sorted(self.points)

    @property
    def log_sizes(self) -> np.ndarray:
        return np.log10([p[0] for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


def _fit_integrate(x1, y1, x2, y2) -> float:
    """Mean difference of cubic fits (curve2 - curve1) over the overlap of x."""
    lo = max(x1.min(), x2.min())
    hi = min(x1.max(), x2.max())
    if not lo < hi:
        raise ConfigError(f"curves do not overlap: [{x1.min():.4g}, {x1.max():.4g}] vs "
                          f"[{x2.min():.4g}, {x2.max():.4g}]")
    p1 = np.polyfit(x1, y1, 3)
    p2 = np.polyfit(x2, y2, 3)
    i1 = np.polyint(p1)
    i2 = np.polyint(p2)
    int1 = np.polyval(i1, hi) - np.polyval(i1, lo)
    int2 = np.polyval(i2, hi) - np.polyval(i2, lo)
    return float((int2 - int1) / (hi - lo))


def bd_quality(anchor: RDCurve, test: RDCurve) -> float:
    """Average quality gain of test over anchor (quality fitted vs log10 size)."""
    return _fit_integrate(anchor.log_sizes, anchor.qualities,
                          test.log_sizes, test.qualities)


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Average rate change of test over anchor, percent (log10 size fitted vs quality)."""
    q1, q2 = anchor.qualities, test.qualities
    if len(set(q1.tolist())) != len(q1) or len(set(q2.tolist())) != len(q2):
        raise ConfigError("duplicate quality values; BD-rate fit is degenerate")
    diff = _fit_integrate(q1, anchor.log_sizes, q2, test.log_sizes)
    return float((10.0 ** diff - 1.0) * 100.0)

"""Image quality metrics on real-valued images."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PSNR_CAP = 200.0

__all__ = ["MetricReport", "psnr", "ssim", "rmse", "report", "PSNR_CAP"]


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    rmse: float


def _pair(recon, gt):
    recon = np.asarray(recon, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if recon.shape != gt.shape:
        raise ValueError(f"shape mismatch: {recon.shape} vs {gt.shape}")
    return recon, gt


def psnr(recon, gt):
    """Peak signal-to-noise ratio in dB with peak ``max(gt)``.

    Identical inputs return :data:`PSNR_CAP` instead of infinity.
    """
    recon, gt = _pair(recon, gt)
    if not np.any(gt):
        raise ValueError("ground truth is identically zero")
    err = np.sqrt(np.mean((recon - gt) ** 2))
    if err == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 20.0 * np.log10(gt.max() / err)))


def rmse(recon, gt):
    """Normalized root-mean-square error, in percent of ``||gt||``."""
    recon, gt = _pair(recon, gt)
    return float(100.0 * np.linalg.norm(recon - gt) / np.linalg.norm(gt))


def _ssim_window(sigma=1.5, size=11):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(recon, gt, data_range=None):
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    ``data_range`` defaults to ``gt.max() - gt.min()``. Local statistics are
    computed with mirrored borders and the mean is taken over the region at
    least half a window away from the edges.
    """
    recon, gt = _pair(recon, gt)
    if data_range is None:
        data_range = gt.max() - gt.min()
    if data_range <= 0:
        data_range = max(abs(gt.max()), 1.0)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    win = _ssim_window()

    def filt(a):
        return ndimage.correlate(a, win, mode="reflect")

    mu_x, mu_y = filt(recon), filt(gt)
    sxx = filt(recon * recon) - mu_x**2
    syy = filt(gt * gt) - mu_y**2
    sxy = filt(recon * gt) - mu_x * mu_y
    smap = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    )
    pad = win.shape[0] // 2
    if min(smap.shape) > 2 * pad:
        smap = smap[pad:-pad, pad:-pad]
    return float(smap.mean())


def report(recon, gt):
    return MetricReport(psnr=psnr(recon, gt), ssim=ssim(recon, gt), rmse=rmse(recon, gt))

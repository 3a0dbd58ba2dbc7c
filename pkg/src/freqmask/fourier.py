"""Centered orthonormal 2-D Fourier transforms and Gaussian blurring.

Every function here accepts either a numpy array or a torch tensor and
returns the same kind. Transforms act on the last two axes, so batched and
channel-stacked inputs work unchanged.
"""

import math

import numpy as np
import torch
import torch.nn.functional as F

__all__ = ["fft2c", "ifft2c", "gaussian_kernel", "gaussian_blur", "InvalidInputError"]


class InvalidInputError(ValueError):
    """Raised when an operator receives non-finite or malformed data."""


def _check_finite(x):
    if isinstance(x, torch.Tensor):
        ok = bool(torch.isfinite(x).all())
    else:
        ok = bool(np.isfinite(x).all())
    if not ok:
        raise InvalidInputError("input contains NaN or Inf")


def fft2c(x):
    """Unitary 2-D DFT with the zero frequency at the grid center."""
    _check_finite(x)
    if isinstance(x, torch.Tensor):
        x = torch.fft.ifftshift(x, dim=(-2, -1))
        x = torch.fft.fft2(x, norm="ortho")
        return torch.fft.fftshift(x, dim=(-2, -1))
    x = np.fft.ifftshift(np.asarray(x), axes=(-2, -1))
    x = np.fft.fft2(x, norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def ifft2c(k):
    """Inverse of :func:`fft2c`."""
    _check_finite(k)
    if isinstance(k, torch.Tensor):
        k = torch.fft.ifftshift(k, dim=(-2, -1))
        k = torch.fft.ifft2(k, norm="ortho")
        return torch.fft.fftshift(k, dim=(-2, -1))
    k = np.fft.ifftshift(np.asarray(k), axes=(-2, -1))
    k = np.fft.ifft2(k, norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


def gaussian_kernel(sigma, dtype=np.float64):
    """Normalized 2-D Gaussian kernel truncated at radius ``ceil(3 * sigma)``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3 * sigma))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g).astype(dtype)


def gaussian_blur(img, sigma):
    """Blur the last two axes with a truncated Gaussian.

    Boundaries use mirror reflection about the edge pixel (the edge itself is
    not repeated). The convolution is differentiable when ``img`` is a tensor.

    Parameters
    ----------
    img : ndarray or Tensor
        Real image(s) of shape ``(..., H, W)``.
    sigma : float
        Standard deviation in pixels; must be positive.
    """
    kernel = gaussian_kernel(sigma)
    radius = kernel.shape[0] // 2
    is_numpy = not isinstance(img, torch.Tensor)
    x = torch.from_numpy(np.asarray(img, dtype=np.float64)) if is_numpy else img
    h, w = x.shape[-2:]
    if radius >= min(h, w):
        raise ValueError(f"blur radius {radius} too large for a {h}x{w} grid")

    lead = x.shape[:-2]
    x4 = x.reshape(-1, 1, h, w)
    k = torch.as_tensor(kernel, dtype=x.dtype, device=x.device)[None, None]
    x4 = F.pad(x4, (radius, radius, radius, radius), mode="reflect")
    out = F.conv2d(x4, k).reshape(*lead, h, w)
    return out.numpy() if is_numpy else out

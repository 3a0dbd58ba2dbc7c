"""k-space under-sampling masks: fixed baselines, the learnable continuous
mask and its binarization, and the forward acquisition model.

Learned masks are point-wise over the full 2-D grid; the equispaced baseline
samples whole phase-encode columns.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .fourier import fft2c, ifft2c

__all__ = [
    "STANDARD_CENTER_FRACTIONS",
    "AccelerationSpec",
    "center_count",
    "center_columns",
    "center_region",
    "equispaced_mask",
    "variable_density_mask",
    "sparsify",
    "continuous_mask",
    "LearnableMask",
    "binarize_masks",
    "apply_mask",
    "column_density",
]

# acceleration rate -> fully sampled central fraction
STANDARD_CENTER_FRACTIONS = {4: 0.084, 8: 0.042, 10: 0.032, 30: 0.0125}


@dataclass(frozen=True)
class AccelerationSpec:
    """Acceleration rate ``R`` with sampling fraction ``1/R``."""

    rate: int
    center_fraction: float = 0.0

    def __post_init__(self):
        if self.rate < 1:
            raise ValueError(f"acceleration rate must be >= 1, got {self.rate}")
        if not 0.0 <= self.center_fraction < 1.0:
            raise ValueError("center_fraction must lie in [0, 1)")
        if self.rate > 1 and self.center_fraction >= self.gamma:
            raise ValueError(
                f"center_fraction {self.center_fraction} must be below the "
                f"sampling fraction {self.gamma}"
            )

    @property
    def gamma(self):
        return 1.0 / self.rate

    @classmethod
    def from_rate(cls, rate):
        """Use the standard central fraction for 4x, 8x, 10x and 30x."""
        return cls(rate, STANDARD_CENTER_FRACTIONS.get(rate, 0.0))


def center_count(n, center_fraction):
    """Number of central lines along an axis of length ``n`` (nearest, min 1)."""
    if center_fraction <= 0:
        return 0
    return max(1, int(round(center_fraction * n)))


def center_columns(n, center_fraction):
    n_low = center_count(n, center_fraction)
    start = (n - n_low + 1) // 2
    return np.arange(start, start + n_low)


def center_region(shape, center_fraction):
    """Boolean grid marking the central square of lowest frequencies.

    The side length along each axis is ``center_count(n, center_fraction)``.
    """
    h, w = shape
    region = np.zeros(shape, dtype=bool)
    rows = center_columns(h, center_fraction)
    cols = center_columns(w, center_fraction)
    if rows.size and cols.size:
        region[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1] = True
    return region


def equispaced_mask(shape, spec):
    """Column mask: a fully sampled center plus every ``R``-th column.

    The spacing is stretched so that center plus outer columns total roughly
    ``W / R`` columns.
    """
    h, w = shape
    n_low = center_count(w, spec.center_fraction)
    mask_1d = np.zeros(w, dtype=bool)
    mask_1d[center_columns(w, spec.center_fraction)] = True
    if n_low:
        spacing = spec.rate * (n_low - w) / (n_low * spec.rate - w)
    else:
        spacing = float(spec.rate)
    picks = np.around(np.arange(0, w, spacing)).astype(int)
    mask_1d[picks[picks < w]] = True
    return np.broadcast_to(mask_1d, (h, w)).astype(np.float64)


def variable_density_mask(shape, spec, power=2.0, seed=0):
    """Random 2-D point mask with polynomial radial density ``(1 - r)**power``.

    Exactly ``round(gamma * H * W)`` points are drawn without replacement, the
    central region always included.
    """
    h, w = shape
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(h) - h // 2, np.arange(w) - w // 2, indexing="ij")
    r = np.hypot(yy, xx)
    density = (1.0 - r / (r.max() + 1.0)) ** power
    center = center_region(shape, spec.center_fraction)
    k = int(round(spec.gamma * h * w))
    mask = center.copy().ravel()
    remaining = k - int(mask.sum())
    if remaining > 0:
        cand = np.flatnonzero(~mask)
        p = density.ravel()[cand]
        picks = rng.choice(cand, size=remaining, replace=False, p=p / p.sum())
        mask[picks] = True
    return mask.reshape(shape).astype(np.float64)


def sparsify(p, gamma):
    """Rescale probabilities in [0, 1] to have mean ``gamma``.

    Values are scaled down when the mean is too high, and their complements
    are scaled down otherwise, so outputs stay in [0, 1] and keep their order.
    Works on numpy arrays and (differentiably) on tensors.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"target sparsity must lie in (0, 1), got {gamma}")
    mean = p.mean()
    if mean >= gamma:
        return p * (gamma / mean)
    return 1.0 - (1.0 - p) * ((1.0 - gamma) / (1.0 - mean))


def continuous_mask(r_norm, p_mask, gamma, u, slope_prob=5.0, slope_sample=200.0, center=None):
    """Differentiable relaxed mask ``sigmoid_b(S(sigmoid_a(r + P)) - U)``.

    Parameters
    ----------
    r_norm : Tensor
        Normalized frequency error prior, values in [0, 1]; broadcastable
        against ``u``. Use zeros for a prior-free mask.
    p_mask : Tensor
        Learnable modulation logits, shape ``(H, W)``.
    gamma : float
        Target sampling fraction.
    u : Tensor
        Uniform [0, 1) draws, shape ``(..., H, W)``; fresh per image and step.
    center : bool array, optional
        Entries forced to 1.
    """
    if r_norm.shape[-2:] != p_mask.shape or u.shape[-2:] != p_mask.shape:
        raise ValueError("r_norm, p_mask and u must share the grid shape")
    prob = torch.sigmoid(slope_prob * (r_norm + p_mask))
    q = _sparsify_per_image(prob, gamma)
    m = torch.sigmoid(slope_sample * (q - u))
    if center is not None and np.any(center):
        keep = torch.as_tensor(np.asarray(center), device=m.device)
        m = torch.where(keep, torch.ones_like(m), m)
    return m


def _sparsify_per_image(prob, gamma):
    if prob.dim() == 2:
        return sparsify(prob, gamma)
    flat = prob.reshape(-1, *prob.shape[-2:])
    out = torch.stack([sparsify(p, gamma) for p in flat])
    return out.reshape(prob.shape)


class LearnableMask(nn.Module):
    """Holds the modulation logits of a learnable mask.

    Logits are drawn uniform on [-1, 1] from ``seed``.
    """

    def __init__(self, shape, spec, slope_prob=5.0, slope_sample=200.0, seed=0,
                 dtype=torch.float32):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        init = torch.rand(shape, generator=g, dtype=torch.float64) * 2.0 - 1.0
        self.p_mask = nn.Parameter(init.to(dtype))
        self.spec = spec
        self.slope_prob = slope_prob
        self.slope_sample = slope_sample
        self.center = center_region(shape, spec.center_fraction)

    def forward(self, r_norm, u):
        return continuous_mask(
            r_norm, self.p_mask, self.spec.gamma, u,
            self.slope_prob, self.slope_sample, self.center,
        )


def binarize_masks(masks, gamma, center=None):
    """Average continuous masks and threshold them to a binary mask.

    A binary search over the distinct averaged values finds the threshold at
    which ``round(gamma * H * W)`` entries are kept; ties at the threshold are
    filled in raster order. Entries of ``center`` are always kept.
    """
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    if not masks:
        raise ValueError("need at least one mask to binarize")
    shape = masks[0].shape
    if any(m.shape != shape for m in masks):
        raise ValueError("all masks must share one shape")
    avg = np.mean(masks, axis=0)
    if center is not None:
        avg = np.where(center, np.inf, avg)

    n = avg.size
    k = int(round(gamma * n))
    if center is not None:
        k = max(k, int(np.count_nonzero(center)))
    flat = avg.ravel()
    if k == 0:
        return np.zeros(shape)

    values = np.unique(flat)
    # largest threshold tau with count(flat >= tau) >= k
    lo, hi = 0, values.size - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if np.count_nonzero(flat >= values[mid]) >= k:
            lo = mid
        else:
            hi = mid - 1
    tau = values[lo]

    out = flat > tau
    ties = np.flatnonzero(flat == tau)
    out[ties[: k - np.count_nonzero(out)]] = True
    return out.reshape(shape).astype(np.float64)


def apply_mask(x_gt, mask, noise_sigma=0.0, rng=None):
    """Simulate an under-sampled acquisition.

    Returns the masked k-space and the magnitude of its zero-filled inverse.
    Noise of total standard deviation ``noise_sigma`` is added to acquired
    samples only. Accepts numpy arrays or tensors; the tensor path is
    differentiable with respect to both image and mask.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if tuple(mask.shape[-2:]) != tuple(x_gt.shape[-2:]):
        raise ValueError(f"mask {tuple(mask.shape)} does not match image {tuple(x_gt.shape)}")
    k = fft2c(x_gt)
    if noise_sigma > 0:
        scale = noise_sigma / np.sqrt(2.0)
        if isinstance(k, torch.Tensor):
            g = rng if isinstance(rng, torch.Generator) else None
            noise = torch.complex(
                torch.randn(k.shape, generator=g, dtype=k.real.dtype),
                torch.randn(k.shape, generator=g, dtype=k.real.dtype),
            )
        else:
            rng = np.random.default_rng(rng)
            noise = rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape)
        k = k + scale * noise
    k_meas = mask * k
    x_u = abs(ifft2c(k_meas))
    return k_meas, x_u


def column_density(mask):
    """Fraction of sampled rows per k-space column."""
    return np.asarray(mask, dtype=np.float64).mean(axis=0)

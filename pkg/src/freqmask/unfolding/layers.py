"""Network building blocks: residual stacks, the proximal network, the
spatial alignment head with its bilinear warp, and the reconstruction layer."""

import torch
import torch.nn.functional as F
from torch import nn

from .operators import soft_threshold

__all__ = ["ResBlock", "ResStack", "ProxNet", "SoftThresholdProx", "warp", "SANet", "RecLayer"]


class ResBlock(nn.Module):
    """conv3x3 -> ReLU -> conv3x3 with an identity skip, no normalization."""

    def __init__(self, channels, res_scale=0.1):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.res_scale = res_scale
        for conv in (self.conv1, self.conv2):
            nn.init.kaiming_normal_(conv.weight, a=0, mode="fan_in", nonlinearity="relu")
            nn.init.zeros_(conv.bias)

    def forward(self, x):
        return x + self.res_scale * self.conv2(F.relu(self.conv1(x)))


class ResStack(nn.Sequential):
    def __init__(self, channels, n_blocks, res_scale=0.1):
        super().__init__(*[ResBlock(channels, res_scale) for _ in range(n_blocks)])


class ProxNet(nn.Module):
    """Learned proximal map; the step size argument is accepted and ignored."""

    def __init__(self, channels, n_blocks=12, res_scale=0.1):
        super().__init__()
        self.body = ResStack(channels, n_blocks, res_scale)

    def forward(self, z, step=None):
        return self.body(z)


class SoftThresholdProx(nn.Module):
    """Proximal map of ``lam * ||.||_1`` scaled by the step size."""

    def __init__(self, lam=0.0):
        super().__init__()
        self.lam = lam

    def forward(self, z, step=1.0):
        return soft_threshold(z, self.lam * step)


def warp(y, phi):
    """Bilinearly resample ``y`` at ``grid + phi``.

    Parameters
    ----------
    y : Tensor, shape (B, C, H, W)
    phi : Tensor, shape (B, 2, H, W)
        Displacement in pixels, ``(row, column)`` order. Sample positions
        outside the grid are clamped to the border.

    A zero displacement returns ``y`` exactly. The result is differentiable in
    both ``y`` and ``phi`` (almost everywhere in ``phi``).
    """
    b, c, h, w = y.shape
    rows = torch.arange(h, dtype=phi.dtype, device=phi.device).view(1, h, 1)
    cols = torch.arange(w, dtype=phi.dtype, device=phi.device).view(1, 1, w)
    py = (rows + phi[:, 0]).clamp(0, h - 1)
    px = (cols + phi[:, 1]).clamp(0, w - 1)
    y0 = torch.floor(py).detach()
    x0 = torch.floor(px).detach()
    wy = (py - y0)[:, None]
    wx = (px - x0)[:, None]
    y0 = y0.long()
    x0 = x0.long()
    y1 = (y0 + 1).clamp(max=h - 1)
    x1 = (x0 + 1).clamp(max=w - 1)

    flat = y.reshape(b, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    return (
        (1 - wy) * (1 - wx) * gather(y0, x0)
        + (1 - wy) * wx * gather(y0, x1)
        + wy * (1 - wx) * gather(y1, x0)
        + wy * wx * gather(y1, x1)
    )


class SANet(nn.Module):
    """Predicts a displacement field from ``[X, Y]`` and warps ``Y`` with it.

    The last convolution starts at zero, so a fresh head is the identity.
    """

    def __init__(self, channels, hidden=None):
        super().__init__()
        hidden = hidden or channels
        self.head = nn.Sequential(
            nn.Conv2d(2 * channels, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(hidden, 2, 3, padding=1),
        )
        nn.init.zeros_(self.head[-1].weight)
        nn.init.zeros_(self.head[-1].bias)

    def forward(self, x, y):
        phi = self.head(torch.cat([x, y], dim=1))
        return warp(y, phi), phi


class RecLayer(nn.Module):
    """Fuses image-domain and k-space-branch features into one channel."""

    def __init__(self, channels):
        super().__init__()
        self.fuse = nn.Conv2d(2 * channels, channels, 1)
        self.out = nn.Conv2d(channels, 1, 3, padding=1)

    def forward(self, x, k_img):
        return self.out(self.fuse(torch.cat([x, k_img], dim=1)))[:, 0]

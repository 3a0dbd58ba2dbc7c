"""Conditional denoising diffusion that synthesizes the target contrast from
the reference contrast, and the frequency error prior derived from it."""

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .fourier import fft2c

logger = logging.getLogger(__name__)

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "forward_noising",
    "UNetDenoiser",
    "Denoiser",
    "DiffusionConfig",
    "train_denoiser",
    "epsilon_mse",
    "sample_conditional",
    "FrequencyErrorPrior",
    "compute_fep",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule; arrays are indexed by ``t - 1`` for ``t = 1..T``."""

    betas: np.ndarray

    @property
    def T(self):
        return len(self.betas)

    @property
    def alphas(self):
        return 1.0 - self.betas

    @property
    def alpha_bar(self):
        return np.cumprod(self.alphas)

    def alpha_bar_at(self, t):
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return float(self.alpha_bar[t - 1])


def make_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    """Linear beta schedule over ``T`` steps."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T, dtype=np.float64))


def forward_noising(x0, t, eps, sched):
    """``x_t = sqrt(1 - abar_t) * eps + sqrt(abar_t) * x0``.

    ``t`` is an integer in ``[1, T]`` or, for tensors, an integer tensor of
    per-sample timesteps.
    """
    if isinstance(t, torch.Tensor):
        if int(t.min()) < 1 or int(t.max()) > sched.T:
            raise ValueError("timestep outside schedule range")
        abar = torch.as_tensor(sched.alpha_bar, dtype=x0.dtype)[t - 1]
        abar = abar.reshape(-1, *([1] * (x0.dim() - 1)))
        return eps * torch.sqrt(1 - abar) + x0 * torch.sqrt(abar)
    abar = sched.alpha_bar_at(t)
    return eps * math.sqrt(1 - abar) + x0 * math.sqrt(abar)


def timestep_embedding(t, dim):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class _ResBlock(nn.Module):
    def __init__(self, cin, cout, temb):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(temb, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class UNetDenoiser(nn.Module):
    """Three-level U-Net predicting noise from ``[x_t, condition]``."""

    def __init__(self, base_width=32, emb_dim=64):
        super().__init__()
        w1, w2, w3 = base_width, 2 * base_width, 2 * base_width
        self.emb_dim = emb_dim
        self.temb = nn.Sequential(
            nn.Linear(emb_dim, 4 * emb_dim), nn.SiLU(), nn.Linear(4 * emb_dim, 4 * emb_dim)
        )
        e = 4 * emb_dim
        self.inc = nn.Conv2d(2, w1, 3, padding=1)
        self.down1 = _ResBlock(w1, w1, e)
        self.pool1 = nn.Conv2d(w1, w1, 3, stride=2, padding=1)
        self.down2 = _ResBlock(w1, w2, e)
        self.pool2 = nn.Conv2d(w2, w2, 3, stride=2, padding=1)
        self.mid = _ResBlock(w2, w3, e)
        self.up2 = _ResBlock(w3 + w2, w2, e)
        self.up1 = _ResBlock(w2 + w1, w1, e)
        self.out = nn.Sequential(nn.GroupNorm(8, w1), nn.SiLU(), nn.Conv2d(w1, 1, 3, padding=1))

    def forward(self, x_t, cond, t):
        emb = self.temb(timestep_embedding(t, self.emb_dim))
        h1 = self.down1(self.inc(torch.cat([x_t, cond], dim=1)), emb)
        h2 = self.down2(self.pool1(h1), emb)
        h3 = self.mid(self.pool2(h2), emb)
        u = F.interpolate(h3, size=h2.shape[-2:], mode="nearest")
        u = self.up2(torch.cat([u, h2], dim=1), emb)
        u = F.interpolate(u, size=h1.shape[-2:], mode="nearest")
        u = self.up1(torch.cat([u, h1], dim=1), emb)
        return self.out(u)


@dataclass
class DiffusionConfig:
    lr: float = 2e-5
    epochs: int = 300
    batch_size: int = 16
    ema_decay: float = 0.999
    base_width: int = 32
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    seed: int = 0


@dataclass
class Denoiser:
    """Trained noise predictor with its EMA shadow and schedule."""

    model: UNetDenoiser
    ema: UNetDenoiser
    schedule: NoiseSchedule
    config: DiffusionConfig
    loss_history: list = field(default_factory=list)


def _to_signed(img):
    # diffusion runs on [-1, 1]
    return img * 2.0 - 1.0


def _ema_update(ema, model, decay):
    with torch.no_grad():
        for pe, pm in zip(ema.parameters(), model.parameters()):
            pe.mul_(decay).add_(pm, alpha=1.0 - decay)


def train_denoiser(targets, references, config=None, schedule=None):
    """Fit the conditional noise predictor with the epsilon-MSE objective.

    Parameters
    ----------
    targets, references : ndarray, shape (N, H, W)
        Registered contrast pairs with intensities in [0, 1].
    config : DiffusionConfig, optional
    schedule : NoiseSchedule, optional
        Defaults to the linear schedule described by ``config``.

    The EMA shadow uses ``min(decay, (1 + n) / (10 + n))`` at update ``n``.
    """
    config = config or DiffusionConfig()
    targets = np.asarray(targets, dtype=np.float32)
    references = np.asarray(references, dtype=np.float32)
    if targets.size == 0 or len(targets) == 0:
        raise ValueError("training set is empty")
    if targets.shape != references.shape:
        raise ValueError("targets and references must have equal shapes")
    sched = schedule or make_schedule(config.T, config.beta_start, config.beta_end)

    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    model = UNetDenoiser(config.base_width)
    ema = copy.deepcopy(model).requires_grad_(False)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)

    x0_all = _to_signed(torch.from_numpy(targets))[:, None]
    cond_all = _to_signed(torch.from_numpy(references))[:, None]
    n = len(x0_all)
    history = []
    updates = 0
    for epoch in range(config.epochs):
        perm = torch.randperm(n, generator=gen)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            x0, cond = x0_all[idx], cond_all[idx]
            t = torch.randint(1, sched.T + 1, (len(idx),), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            x_t = forward_noising(x0, t, eps, sched)
            loss = F.mse_loss(model(x_t, cond, t), eps)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite diffusion loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            decay = min(config.ema_decay, (1.0 + updates) / (10.0 + updates))
            _ema_update(ema, model, decay)
            updates += 1
            running += loss.item() * len(idx)
        history.append(running / n)
        logger.debug("diffusion epoch %d loss %.4f", epoch, history[-1])
    return Denoiser(model, ema, sched, config, history)


@torch.no_grad()
def epsilon_mse(net, targets, references, schedule, seed=0, draws=4):
    """Noise-prediction MSE averaged over uniform timesteps and fresh noise."""
    gen = torch.Generator().manual_seed(seed)
    x0 = _to_signed(torch.as_tensor(np.asarray(targets), dtype=torch.float32))[:, None]
    cond = _to_signed(torch.as_tensor(np.asarray(references), dtype=torch.float32))[:, None]
    total = 0.0
    for _ in range(draws):
        t = torch.randint(1, schedule.T + 1, (len(x0),), generator=gen)
        eps = torch.randn(x0.shape, generator=gen)
        pred = net(forward_noising(x0, t, eps, schedule), cond, t)
        total += F.mse_loss(pred, eps).item()
    return total / draws


@torch.no_grad()
def sample_conditional(den, references, seed=0, steps=None, use_ema=True, batch_size=64):
    """Ancestral sampling of target images conditioned on ``references``.

    With ``steps`` set, a uniformly strided subsequence of the timesteps is
    used and the per-step betas are recomputed from ``alpha_bar`` so the
    marginals are unchanged. The reverse variance is the (respaced) beta.

    Returns an array shaped like ``references`` with values in [0, 1].
    """
    net = den.ema if use_ema else den.model
    net.eval()
    refs = np.asarray(references, dtype=np.float32)
    single = refs.ndim == 2
    refs = refs[None] if single else refs
    sched = den.schedule
    T = sched.T
    if steps is None or steps >= T:
        ts = np.arange(1, T + 1)
    else:
        ts = np.unique(np.round(np.linspace(1, T, steps)).astype(int))
    abar_full = sched.alpha_bar
    abar = abar_full[ts - 1]
    abar_prev = np.concatenate([[1.0], abar[:-1]])
    betas = 1.0 - abar / abar_prev

    gen = torch.Generator().manual_seed(seed)
    cond_all = _to_signed(torch.from_numpy(refs))[:, None]
    x = torch.randn(cond_all.shape, generator=gen)
    outs = []
    for start in range(0, len(x), batch_size):
        cond = cond_all[start : start + batch_size]
        xt = x[start : start + batch_size]
        for i in range(len(ts) - 1, -1, -1):
            t = torch.full((len(xt),), int(ts[i]), dtype=torch.long)
            eps = net(xt, cond, t)
            a_b, a_bp, b = abar[i], abar_prev[i], betas[i]
            x0_hat = ((xt - math.sqrt(1 - a_b) * eps) / math.sqrt(a_b)).clamp(-1.0, 1.0)
            mean = (math.sqrt(a_bp) * b / (1 - a_b)) * x0_hat + (
                math.sqrt(1 - b) * (1 - a_bp) / (1 - a_b)
            ) * xt
            if i > 0:
                xt = mean + math.sqrt(b) * torch.randn(xt.shape, generator=gen)
            else:
                xt = mean
        outs.append(xt)
    out = ((torch.cat(outs)[:, 0] + 1.0) / 2.0).clamp(0.0, 1.0).numpy().astype(np.float64)
    return out[0] if single else out


@dataclass(frozen=True)
class FrequencyErrorPrior:
    """k-space error magnitude and its per-image [0, 1] normalization."""

    r: np.ndarray
    r_norm: np.ndarray


def compute_fep(x_sys, x_gt):
    """``r = |F(x_sys) - F(x_gt)|`` under the centered unitary FFT.

    Inputs may be single images ``(H, W)`` or stacks ``(N, H, W)``; each image
    is normalized by its own maximum (all-zero error stays zero).
    """
    x_sys = np.asarray(x_sys, dtype=np.float64)
    x_gt = np.asarray(x_gt, dtype=np.float64)
    if x_sys.shape != x_gt.shape:
        raise ValueError(f"shape mismatch: {x_sys.shape} vs {x_gt.shape}")
    r = np.abs(fft2c(x_sys) - fft2c(x_gt))
    peak = r.max(axis=(-2, -1), keepdims=True)
    r_norm = np.divide(r, peak, out=np.zeros_like(r), where=peak > 0)
    return FrequencyErrorPrior(r, r_norm)

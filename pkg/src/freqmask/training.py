"""Losses, joint mask/network optimization, fixed-mask fine-tuning and
evaluation."""

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import nn

from .fourier import gaussian_blur
from .metrics import report
from .sampling import apply_mask, binarize_masks

logger = logging.getLogger(__name__)

__all__ = [
    "LossConfig",
    "OptimizerConfig",
    "frequency_loss",
    "TrainResult",
    "joint_optimize",
    "finetune",
    "collect_continuous_masks",
    "learned_discrete_mask",
    "EvaluationResult",
    "evaluate",
    "format_table",
]


@dataclass
class LossConfig:
    """Weights of the combined frequency-domain loss.

    ``kind="l1"`` trains on the plain mean absolute error instead.
    ``blur_sigma=0`` replaces the blur with the identity.
    """

    lambda1: float = 0.8
    lambda2: float = 0.2
    alpha: float = 0.2
    beta: float = 0.8
    blur_sigma: float = 1.5
    kind: str = "combined"

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.alpha, self.beta) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.kind not in ("combined", "l1"):
            raise ValueError(f"unknown loss kind {self.kind!r}")


@dataclass
class OptimizerConfig:
    lr: float = 1e-4
    mask_lr: Optional[float] = None
    batch_size: int = 2
    epochs: int = 30
    seed: int = 0
    clip_norm: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def frequency_loss(x_hat, x_gt, cfg=None):
    """Combined low/high-frequency and l1 loss (mean absolute errors)."""
    cfg = cfg or LossConfig()
    if x_hat.shape != x_gt.shape:
        raise ValueError(f"shape mismatch: {tuple(x_hat.shape)} vs {tuple(x_gt.shape)}")
    l1 = (x_hat - x_gt).abs().mean()
    if cfg.kind == "l1":
        return l1
    if cfg.blur_sigma and cfg.blur_sigma > 0:
        low_hat, low_gt = gaussian_blur(x_hat, cfg.blur_sigma), gaussian_blur(x_gt, cfg.blur_sigma)
    else:
        low_hat, low_gt = x_hat, x_gt
    high_hat = (x_hat - low_hat).abs()
    high_gt = (x_gt - low_gt).abs()
    l_fre = cfg.lambda1 * (low_hat - low_gt).abs().mean() + cfg.lambda2 * (high_hat - high_gt).abs().mean()
    return cfg.alpha * l_fre + cfg.beta * l1


@dataclass
class TrainResult:
    net: nn.Module
    mask: Optional[nn.Module]
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf


def _dtype(net):
    return next(net.parameters()).dtype


def _as_tensor(a, dtype):
    return torch.as_tensor(np.asarray(a), dtype=dtype)


def _forward(net, x_gt, y, mask, noise_sigma=0.0, gen=None):
    k_meas, x_u = apply_mask(x_gt, mask, noise_sigma, gen)
    return net(x_u, y, mask, k_meas)


class _JsonlLog:
    def __init__(self, path):
        self.fh = open(path, "a") if path else None

    def write(self, record):
        logger.info("%s", record)
        if self.fh:
            self.fh.write(json.dumps(record, sort_keys=True) + "\n")
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def _val_loss(net, targets, refs, mask, loss_cfg, batch_size=16):
    net.eval()
    total = 0.0
    with torch.no_grad():
        for s in range(0, len(targets), batch_size):
            m = mask if mask.dim() == 2 else mask[s : s + batch_size]
            x_hat = _forward(net, targets[s : s + batch_size], refs[s : s + batch_size], m)
            total += frequency_loss(x_hat, targets[s : s + batch_size], loss_cfg).item() * len(x_hat)
    net.train()
    return total / len(targets)


def _train(net, train, val, mask_fn, val_mask, opt_cfg, loss_cfg, mask_module=None,
           log_path=None):
    dtype = _dtype(net)
    tgt, ref = (_as_tensor(a, dtype) for a in train)
    vtgt, vref = (_as_tensor(a, dtype) for a in val)
    if len(tgt) == 0:
        raise ValueError("training set is empty")
    gen = torch.Generator().manual_seed(opt_cfg.seed)
    groups = [{"params": list(net.parameters()), "lr": opt_cfg.lr}]
    mask_lr = opt_cfg.lr if opt_cfg.mask_lr is None else opt_cfg.mask_lr
    learn_mask = mask_module is not None and mask_lr > 0
    if learn_mask:
        groups.append({"params": [mask_module.p_mask], "lr": mask_lr})
    opt = torch.optim.Adam(groups)

    log = _JsonlLog(log_path)
    history = []
    best = (_val_loss(net, vtgt, vref, val_mask(), loss_cfg), 0)
    best_state = copy.deepcopy(net.state_dict())
    best_mask = mask_module.p_mask.detach().clone() if mask_module is not None else None
    history.append({"epoch": 0, "step": 0, "train_loss": None, "val_loss": best[0]})
    log.write(history[-1])

    step = 0
    net.train()
    for epoch in range(1, opt_cfg.epochs + 1):
        perm = torch.randperm(len(tgt), generator=gen)
        running, achieved = 0.0, 0.0
        for s in range(0, len(tgt), opt_cfg.batch_size):
            idx = perm[s : s + opt_cfg.batch_size]
            mask = mask_fn(idx, gen)
            x_hat = _forward(net, tgt[idx], ref[idx], mask, opt_cfg.noise_sigma, gen)
            loss = frequency_loss(x_hat, tgt[idx], loss_cfg)
            if not torch.isfinite(loss):
                log.close()
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, step {step}: "
                    f"x_hat range [{x_hat.min().item()}, {x_hat.max().item()}]"
                )
            opt.zero_grad()
            loss.backward()
            if opt_cfg.clip_norm:
                nn.utils.clip_grad_norm_(net.parameters(), opt_cfg.clip_norm)
            opt.step()
            step += 1
            running += loss.item() * len(idx)
            achieved += float(mask.detach().mean()) * len(idx)
        val = _val_loss(net, vtgt, vref, val_mask(), loss_cfg)
        rec = {
            "epoch": epoch,
            "step": step,
            "train_loss": running / len(tgt),
            "val_loss": val,
            "lr": opt_cfg.lr,
            "gamma_achieved": achieved / len(tgt),
        }
        history.append(rec)
        log.write(rec)
        if val < best[0]:
            best = (val, epoch)
            best_state = copy.deepcopy(net.state_dict())
            if mask_module is not None:
                best_mask = mask_module.p_mask.detach().clone()
    log.close()

    net.load_state_dict(best_state)
    net.eval()
    if mask_module is not None:
        with torch.no_grad():
            mask_module.p_mask.copy_(best_mask)
    return TrainResult(net, mask_module, history, best[1], best[0])


def joint_optimize(train, val, net, mask_module, fep_train, opt_cfg=None, loss_cfg=None,
                   log_path=None):
    """Jointly learn the mask logits and the network weights.

    Parameters
    ----------
    train, val : tuple of ndarray
        ``(targets, references)``, each ``(N, H, W)``.
    net : UnfoldingNet
    mask_module : LearnableMask
    fep_train : ndarray, shape (N_train, H, W)
        Normalized frequency error prior per training image; zeros give a
        prior-free mask.
    opt_cfg, loss_cfg : OptimizerConfig, LossConfig

    Every step draws fresh uniforms per image. Validation uses the training
    set's mean prior with uniforms from a fixed seed. Returns the weights and
    logits of the epoch with the lowest validation loss.
    """
    opt_cfg = opt_cfg or OptimizerConfig()
    loss_cfg = loss_cfg or LossConfig()
    if fep_train is None:
        raise ValueError("a frequency error prior is required for every training image")
    fep_train = np.asarray(fep_train)
    if fep_train.shape != np.shape(train[0]):
        raise ValueError(f"prior shape {fep_train.shape} does not match training set {np.shape(train[0])}")
    dtype = _dtype(net)
    mask_module.to(dtype)
    r_train = _as_tensor(fep_train, dtype)
    r_mean = r_train.mean(dim=0)
    shape = r_mean.shape
    n_val = len(val[0])
    val_u = torch.rand((n_val, *shape), generator=torch.Generator().manual_seed(opt_cfg.seed + 1),
                       dtype=dtype)

    def mask_fn(idx, gen):
        u = torch.rand((len(idx), *shape), generator=gen, dtype=dtype)
        return mask_module(r_train[idx], u)

    def val_mask():
        with torch.no_grad():
            return mask_module(r_mean, val_u)

    return _train(net, train, val, mask_fn, val_mask, opt_cfg, loss_cfg, mask_module, log_path)


def finetune(train, val, net, mask, opt_cfg=None, loss_cfg=None, log_path=None):
    """Train network weights only, under a fixed (typically binary) mask."""
    opt_cfg = opt_cfg or OptimizerConfig()
    loss_cfg = loss_cfg or LossConfig()
    m = _as_tensor(mask, _dtype(net))
    return _train(net, train, val, lambda idx, gen: m, lambda: m, opt_cfg, loss_cfg, None, log_path)


@torch.no_grad()
def collect_continuous_masks(mask_module, fep, seed=0):
    """One continuous mask per prior image, each with its own uniform draw."""
    dtype = mask_module.p_mask.dtype
    r = _as_tensor(fep, dtype)
    u = torch.rand(r.shape, generator=torch.Generator().manual_seed(seed), dtype=dtype)
    return mask_module(r, u).double().numpy()


def learned_discrete_mask(mask_module, fep, seed=0):
    masks = collect_continuous_masks(mask_module, fep, seed)
    return binarize_masks(list(masks), mask_module.spec.gamma, mask_module.center)


@dataclass
class EvaluationResult:
    reports: list
    reconstructions: np.ndarray

    def values(self, name):
        return np.array([getattr(r, name) for r in self.reports])

    def summary(self):
        return {
            name: (float(self.values(name).mean()), float(self.values(name).std()))
            for name in ("psnr", "ssim", "rmse")
        }

    def median_psnr(self):
        return float(np.median(self.values("psnr")))


def evaluate(test, net, mask, batch_size=16):
    """Simulate acquisition with ``mask`` and score reconstructions.

    ``net`` is any callable ``(x_u, y, mask, k_meas) -> x_hat`` on tensors;
    ``None`` scores the zero-filled images.
    """
    targets, refs = (np.asarray(a, dtype=np.float64) for a in test)
    if len(targets) == 0:
        raise ValueError("test set is empty")
    dtype = _dtype(net) if isinstance(net, nn.Module) else torch.float64
    m = _as_tensor(mask, dtype)
    outs = []
    if isinstance(net, nn.Module):
        net.eval()
    with torch.no_grad():
        for s in range(0, len(targets), batch_size):
            x_gt = _as_tensor(targets[s : s + batch_size], dtype)
            y = _as_tensor(refs[s : s + batch_size], dtype)
            k_meas, x_u = apply_mask(x_gt, m)
            x_hat = x_u if net is None else net(x_u, y, m, k_meas)
            outs.append(x_hat.double().numpy())
    recons = np.concatenate(outs)
    return EvaluationResult([report(r, g) for r, g in zip(recons, targets)], recons)


def format_table(rows):
    """Tab-separated metric table with ``mean ± std`` cells.

    ``rows`` maps a row label to :meth:`EvaluationResult.summary` output.
    """
    lines = ["method\tPSNR\tSSIM\tRMSE"]
    for label, summ in rows.items():
        p, s, r = summ["psnr"], summ["ssim"], summ["rmse"]
        lines.append(
            f"{label}\t{p[0]:.2f} ± {p[1]:.2f}\t{s[0]:.4f} ± {s[1]:.4f}\t{r[0]:.2f} ± {r[1]:.2f}"
        )
    return "\n".join(lines) + "\n"

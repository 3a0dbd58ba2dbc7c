"""Learned k-space under-sampling guided by a diffusion-based frequency error
prior, with unrolled multi-contrast MRI reconstruction."""

from .config import ConfigError, ExperimentConfig, load_config
from .diffusion import compute_fep, sample_conditional, train_denoiser
from .estimators import ContrastSynthesizer, SampledReconstructor
from .fourier import fft2c, ifft2c
from .metrics import psnr, rmse, ssim
from .sampling import AccelerationSpec, LearnableMask, apply_mask, binarize_masks, equispaced_mask
from .training import evaluate, finetune, frequency_loss, joint_optimize
from .unfolding import UnfoldingNet

__version__ = "0.1.0"

__all__ = [
    "AccelerationSpec",
    "ConfigError",
    "ContrastSynthesizer",
    "ExperimentConfig",
    "LearnableMask",
    "SampledReconstructor",
    "UnfoldingNet",
    "apply_mask",
    "binarize_masks",
    "compute_fep",
    "equispaced_mask",
    "evaluate",
    "fft2c",
    "finetune",
    "frequency_loss",
    "ifft2c",
    "joint_optimize",
    "load_config",
    "psnr",
    "rmse",
    "sample_conditional",
    "ssim",
    "train_denoiser",
]

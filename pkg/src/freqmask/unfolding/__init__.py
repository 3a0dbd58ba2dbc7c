"""Unrolled multi-contrast reconstruction network."""

from .classical import solve_classical
from .layers import ProxNet, RecLayer, ResBlock, ResStack, SANet, SoftThresholdProx, warp
from .network import Stage, UnfoldingNet
from .operators import (
    AblationMode,
    ConfigurationError,
    FeatureTransforms,
    StageParams,
    StepValues,
    UnfoldingState,
    classical_objective,
    d_step,
    grad_f_d,
    grad_f_k,
    grad_f_s,
    grad_f_x,
    k_step,
    s_step,
    smooth_objective,
    soft_threshold,
    x_step,
)

__all__ = [
    "AblationMode", "ConfigurationError", "FeatureTransforms", "ProxNet", "RecLayer",
    "ResBlock", "ResStack", "SANet", "SoftThresholdProx", "Stage", "StageParams",
    "StepValues", "UnfoldingNet", "UnfoldingState", "classical_objective", "d_step",
    "grad_f_d", "grad_f_k", "grad_f_s", "grad_f_x", "k_step", "s_step",
    "smooth_objective", "soft_threshold", "solve_classical", "warp", "x_step",
]

"""Smooth data terms of the multi-contrast objective, their block gradients,
and the inertial proximal-gradient block updates.

Variables live in a C-channel feature space, laid out ``(B, C, H, W)``:
``X``, ``S`` and ``D`` are real, ``K`` is complex. The measured k-space
``k_meas`` has shape ``(B, H, W)`` and constrains feature channel 0 only.
"""

import enum
from dataclasses import dataclass, fields, replace
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from ..fourier import fft2c, ifft2c

__all__ = [
    "AblationMode",
    "ConfigurationError",
    "StepValues",
    "StageParams",
    "FeatureTransforms",
    "UnfoldingState",
    "grad_f_x",
    "grad_f_k",
    "grad_f_s",
    "grad_f_d",
    "smooth_objective",
    "classical_objective",
    "soft_threshold",
    "inertial",
    "x_step",
    "k_step",
    "s_step",
    "d_step",
]


class ConfigurationError(ValueError):
    pass


class AblationMode(str, enum.Enum):
    FULL = "full"
    NO_REFERENCE = "no_reference"
    NO_KSPACE = "no_kspace"
    NO_DECOMPOSITION = "no_decomposition"

    @property
    def uses_reference(self):
        return self is not AblationMode.NO_REFERENCE

    @property
    def uses_kspace(self):
        return self is not AblationMode.NO_KSPACE

    @property
    def uses_decomposition(self):
        return self in (AblationMode.FULL, AblationMode.NO_KSPACE)


@dataclass
class StepValues:
    """Scalar weights, step sizes and inertial factors for one stage."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    eta_x: float = 1.0
    eta_k: float = 1.0
    eta_s: float = 1.0
    eta_d: float = 1.0
    xi_x: float = 0.25
    xi_k: float = 0.25
    xi_s: float = 0.25
    xi_d: float = 0.25

    def as_floats(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return out


_POSITIVE = ("alpha", "beta", "gamma", "eta_x", "eta_k", "eta_s", "eta_d")
_INERTIAL = ("xi_x", "xi_k", "xi_s", "xi_d")


class StageParams(nn.Module):
    """Learnable stage scalars.

    Weights and steps are stored as logs (initial value 1); inertial factors
    are ``0.5 * sigmoid(u)`` (initial value 0.25), which keeps them inside
    [0, 0.5) for every parameter value.
    """

    def __init__(self):
        super().__init__()
        for name in _POSITIVE:
            setattr(self, "log_" + name, nn.Parameter(torch.zeros(())))
        for name in _INERTIAL:
            setattr(self, "u_" + name, nn.Parameter(torch.zeros(())))

    def values(self):
        kw = {n: torch.exp(getattr(self, "log_" + n)) for n in _POSITIVE}
        for n in _INERTIAL:
            u = getattr(self, "u_" + n)
            # sigmoid rounds to exactly 1 for large u in single precision
            kw[n] = 0.5 * torch.sigmoid(u).clamp(max=1.0 - torch.finfo(u.dtype).eps)
        return StepValues(**kw)


class FeatureTransforms(nn.Module):
    """Linear 3x3 feature transforms ``A`` and ``B`` with their adjoints.

    With ``tied=True`` the adjoints are the exact transposes (transposed
    convolutions sharing the weights); otherwise they are independent
    learned convolutions.
    """

    def __init__(self, channels, tied=False, init_scale=None):
        super().__init__()
        self.tied = tied
        self.A = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.B = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        if not tied:
            self.A_adj = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
            self.B_adj = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        if init_scale is not None:
            with torch.no_grad():
                for p in self.parameters():
                    p.mul_(init_scale)

    def a(self, x):
        return self.A(x)

    def b(self, x):
        return self.B(x)

    def a_adj(self, y):
        if self.tied:
            return F.conv_transpose2d(y, self.A.weight, padding=1)
        return self.A_adj(y)

    def b_adj(self, y):
        if self.tied:
            return F.conv_transpose2d(y, self.B.weight, padding=1)
        return self.B_adj(y)


@dataclass
class UnfoldingState:
    """Current and previous iterates of every block.

    Blocks disabled by the ablation mode are ``None``.
    """

    X: torch.Tensor
    X_prev: torch.Tensor
    K: Optional[torch.Tensor] = None
    K_prev: Optional[torch.Tensor] = None
    S: Optional[torch.Tensor] = None
    S_prev: Optional[torch.Tensor] = None
    D: Optional[torch.Tensor] = None
    D_prev: Optional[torch.Tensor] = None
    Y_init: Optional[torch.Tensor] = None
    Y_SA: Optional[torch.Tensor] = None
    phi: Optional[torch.Tensor] = None

    @classmethod
    def start(cls, X, K=None, S=None, D=None, Y_init=None, Y_SA=None, phi=None):
        """Build a state whose previous iterates equal the current ones."""
        return cls(X, X, K, K, S, S, D, D, Y_init, Y_SA, phi)

    def with_updates(self, **kw):
        return replace(self, **kw)


def _mode(mode):
    try:
        return AblationMode(mode)
    except ValueError as exc:
        raise ConfigurationError(f"unknown ablation mode {mode!r}") from exc


def _ref_features(state, mode):
    # the feature the beta term matches A X against
    return state.S if mode.uses_decomposition else state.Y_SA


def data_residual(x_img, k_meas, mask):
    """``M * F(x) - k_meas`` for the image channel."""
    return mask * fft2c(x_img) - k_meas


def data_consistency_grad(x_img, k_meas, mask):
    """``Re F^*(F x - k_meas)`` with ``F = M * fft2c``: the soft DC term."""
    return ifft2c(mask * data_residual(x_img, k_meas, mask)).real


def grad_f_x(state, v, k_meas, mask, transforms, mode="full"):
    """Gradient of the smooth objective with respect to ``X``."""
    mode = _mode(mode)
    X = state.X
    g_dc = data_consistency_grad(X[:, 0], k_meas, mask)
    grad = torch.cat([g_dc[:, None], torch.zeros_like(X[:, 1:])], dim=1)
    if mode.uses_kspace:
        grad = grad + v.alpha * ifft2c(fft2c(X) - state.K).real
    if mode.uses_reference:
        ref = _ref_features(state, mode)
        grad = grad + v.beta * transforms.a_adj(transforms.a(X) - transforms.b(ref))
    return grad


def grad_f_k(state, v, mode="full"):
    """``alpha * (K - F X)`` (complex, one entry per real/imag coordinate)."""
    mode = _mode(mode)
    if not mode.uses_kspace:
        raise ConfigurationError("K block is disabled in this ablation mode")
    return v.alpha * (state.K - fft2c(state.X))


def grad_f_s(state, v, transforms, mode="full"):
    mode = _mode(mode)
    if not mode.uses_decomposition:
        raise ConfigurationError("S block is disabled in this ablation mode")
    r = state.S + state.D - state.Y_SA
    return v.gamma * r + v.beta * transforms.b_adj(transforms.b(state.S) - transforms.a(state.X))


def grad_f_d(state, v, mode="full"):
    mode = _mode(mode)
    if not mode.uses_decomposition:
        raise ConfigurationError("D block is disabled in this ablation mode")
    return v.gamma * (state.S + state.D - state.Y_SA)


def _sq(z):
    if torch.is_complex(z):
        return (z.real**2 + z.imag**2).sum()
    return (z**2).sum()


def smooth_objective(state, v, k_meas, mask, transforms, mode="full"):
    """Sum of the data terms active under ``mode``."""
    mode = _mode(mode)
    f = 0.5 * _sq(data_residual(state.X[:, 0], k_meas, mask))
    if mode.uses_decomposition:
        f = f + 0.5 * v.gamma * _sq(state.S + state.D - state.Y_SA)
    if mode.uses_kspace:
        f = f + 0.5 * v.alpha * _sq(state.K - fft2c(state.X))
    if mode.uses_reference:
        ref = _ref_features(state, mode)
        f = f + 0.5 * v.beta * _sq(transforms.a(state.X) - transforms.b(ref))
    return f


def classical_objective(state, v, k_meas, mask, transforms, lambdas, mode="full"):
    """Smooth data terms plus explicit l1 regularizers.

    ``lambdas`` maps block names ``x``, ``k``, ``s``, ``d`` to l1 weights; the
    ``k`` penalty applies to real and imaginary parts separately.
    """
    mode = _mode(mode)
    h = smooth_objective(state, v, k_meas, mask, transforms, mode)
    h = h + lambdas.get("x", 0.0) * state.X.abs().sum()
    if mode.uses_kspace:
        h = h + lambdas.get("k", 0.0) * (state.K.real.abs().sum() + state.K.imag.abs().sum())
    if mode.uses_decomposition:
        h = h + lambdas.get("s", 0.0) * state.S.abs().sum()
        h = h + lambdas.get("d", 0.0) * state.D.abs().sum()
    return h


def soft_threshold(z, tau):
    return torch.sign(z) * torch.clamp(z.abs() - tau, min=0.0)


def inertial(cur, prev, xi):
    return cur + xi * (cur - prev)


def x_step(state, v, k_meas, mask, transforms, prox, mode="full"):
    """``prox(X_bar - eta_x * grad_X f(X))`` with inertial extrapolation."""
    grad = grad_f_x(state, v, k_meas, mask, transforms, mode)
    return prox(inertial(state.X, state.X_prev, v.xi_x) - v.eta_x * grad, v.eta_x)


def k_step(state, v, prox_re, prox_im, mode="full"):
    z = inertial(state.K, state.K_prev, v.xi_k) - v.eta_k * grad_f_k(state, v, mode)
    return torch.complex(prox_re(z.real, v.eta_k), prox_im(z.imag, v.eta_k))


def s_step(state, v, transforms, prox, mode="full"):
    z = inertial(state.S, state.S_prev, v.xi_s) - v.eta_s * grad_f_s(state, v, transforms, mode)
    return prox(z, v.eta_s)


def d_step(state, v, prox, mode="full"):
    z = inertial(state.D, state.D_prev, v.xi_d) - v.eta_d * grad_f_d(state, v, mode)
    return prox(z, v.eta_d)

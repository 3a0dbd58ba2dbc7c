"""Unrolled inertial block proximal-gradient network for multi-contrast
reconstruction."""

from torch import nn

from ..fourier import fft2c, ifft2c
from .layers import ProxNet, RecLayer, ResStack, SANet, SoftThresholdProx
from .operators import (
    AblationMode,
    ConfigurationError,
    FeatureTransforms,
    StageParams,
    UnfoldingState,
    classical_objective,
    d_step,
    k_step,
    s_step,
    x_step,
)

__all__ = ["UnfoldingNet", "Stage"]


class Stage(nn.Module):
    """One iterative sub-module: alignment, then X, K, S and D updates."""

    def __init__(self, channels, mode, prox_blocks=12, prox="learned", lambdas=None,
                 tied_adjoint=False, res_scale=0.1):
        super().__init__()
        self.mode = mode
        self.params = StageParams()
        lambdas = lambdas or {}

        def make(name):
            if prox == "soft":
                return SoftThresholdProx(lambdas.get(name, 0.0))
            return ProxNet(channels, prox_blocks, res_scale)

        self.prox_x = make("x")
        if mode.uses_kspace:
            self.prox_k_re = make("k")
            self.prox_k_im = make("k")
        if mode.uses_reference:
            self.transforms = FeatureTransforms(channels, tied=tied_adjoint or prox == "soft")
            self.sanet = SANet(channels) if prox == "learned" else None
        if mode.uses_decomposition:
            self.prox_s = make("s")
            self.prox_d = make("d")

    def forward(self, state, k_meas, mask, values=None):
        v = values if values is not None else self.params.values()
        mode = self.mode
        transforms = getattr(self, "transforms", None)
        if mode.uses_reference and self.sanet is not None:
            y_sa, phi = self.sanet(state.X, state.Y_init)
            state = state.with_updates(Y_SA=y_sa, phi=phi)

        x_new = x_step(state, v, k_meas, mask, transforms, self.prox_x, mode)
        state = state.with_updates(X=x_new, X_prev=state.X)
        if mode.uses_kspace:
            k_new = k_step(state, v, self.prox_k_re, self.prox_k_im, mode)
            state = state.with_updates(K=k_new, K_prev=state.K)
        if mode.uses_decomposition:
            s_new = s_step(state, v, transforms, self.prox_s, mode)
            state = state.with_updates(S=s_new, S_prev=state.S)
            d_new = d_step(state, v, self.prox_d, mode)
            state = state.with_updates(D=d_new, D_prev=state.D)
        return state


class UnfoldingNet(nn.Module):
    """Unrolled reconstruction network.

    Parameters
    ----------
    channels : int
        Feature width ``C``.
    iterations : int
        Number of unrolled stages.
    prox_blocks, init_blocks : int
        Residual blocks per proximal network and per initializer.
    ablation : str or AblationMode
        ``full``, ``no_reference``, ``no_kspace`` or ``no_decomposition``.
    prox : {"learned", "soft"}
        ``soft`` swaps every proximal network for soft thresholding with the
        weights in ``lambdas``, uses exact adjoint transforms and keeps the
        reference alignment fixed; it is the verification mode in which
        :meth:`objective` is defined.

    The blocks follow a Gauss-Seidel order within a stage: each update sees
    the newest iterate of the blocks updated before it.
    """

    def __init__(self, channels=32, iterations=4, prox_blocks=12, init_blocks=10,
                 ablation="full", prox="learned", lambdas=None, tied_adjoint=False,
                 res_scale=0.1):
        super().__init__()
        try:
            self.mode = AblationMode(ablation)
        except ValueError as exc:
            raise ConfigurationError(f"unknown ablation mode {ablation!r}") from exc
        if prox not in ("learned", "soft"):
            raise ConfigurationError(f"prox must be 'learned' or 'soft', got {prox!r}")
        self.channels = channels
        self.iterations = iterations
        self.prox_kind = prox
        self.prox_blocks = prox_blocks
        self.init_blocks = init_blocks
        self.tied_adjoint = tied_adjoint
        self.res_scale = res_scale
        self.lambdas = dict(lambdas or {})

        self.expand_x = nn.Conv2d(1, channels, 3, padding=1)
        self.init_x = ResStack(channels, init_blocks, res_scale)
        if self.mode.uses_reference:
            self.expand_y = nn.Conv2d(1, channels, 3, padding=1)
            self.init_y = ResStack(channels, init_blocks, res_scale)
            self.init_sanet = SANet(channels)
        if self.mode.uses_decomposition:
            self.init_s = ResStack(channels, init_blocks, res_scale)
        self.stages = nn.ModuleList(
            Stage(channels, self.mode, prox_blocks, prox, self.lambdas, tied_adjoint, res_scale)
            for _ in range(iterations)
        )
        self.rec = RecLayer(channels)

    @property
    def classical(self):
        return self.prox_kind == "soft"

    def init_module(self, x_u, y=None):
        """Map the zero-filled image and reference into the initial state."""
        if x_u.dim() != 3:
            raise ValueError("x_u must have shape (B, H, W)")
        X0 = self.init_x(self.expand_x(x_u[:, None]))
        K0 = fft2c(X0) if self.mode.uses_kspace else None
        Y_init = Y_SA = phi = S0 = D0 = None
        if self.mode.uses_reference:
            if y is None:
                raise ConfigurationError(f"ablation mode {self.mode.value} needs a reference image")
            if y.shape != x_u.shape:
                raise ValueError(f"reference {tuple(y.shape)} does not match {tuple(x_u.shape)}")
            Y_init = self.init_y(self.expand_y(y[:, None]))
            Y_SA, phi = self.init_sanet(X0, Y_init)
        if self.mode.uses_decomposition:
            S0 = self.init_s(Y_SA)
            D0 = Y_SA - S0
        return UnfoldingState.start(X0, K0, S0, D0, Y_init, Y_SA, phi)

    def rec_layer(self, state):
        if self.mode.uses_kspace:
            k_img = ifft2c(state.K).real
        else:
            # K is tied to F X when the k-space block is off
            k_img = state.X
        return self.rec(state.X, k_img)

    def iterate(self, state, k_meas, mask, values=None):
        """Run every stage and return the list of states (initial first)."""
        states = [state]
        for stage in self.stages:
            states.append(stage(states[-1], k_meas, mask, values))
        return states

    def forward(self, x_u, y, mask, k_meas, return_states=False):
        """Reconstruct ``(B, H, W)`` images.

        ``mask`` is ``(H, W)`` or ``(B, H, W)`` (binary or continuous) and
        ``k_meas`` the complex masked k-space ``(B, H, W)``.
        """
        if self.mode.uses_reference and y is None:
            raise ConfigurationError(f"ablation mode {self.mode.value} needs a reference image")
        y_in = y if self.mode.uses_reference else None
        states = self.iterate(self.init_module(x_u, y_in), k_meas, mask)
        out = self.rec_layer(states[-1])
        return (out, states) if return_states else out

    def objective(self, state, k_meas, mask, values, stage=0):
        """Explicit objective value; only defined in the ``soft`` prox mode."""
        if not self.classical:
            raise ConfigurationError("the explicit objective exists only with prox='soft'")
        transforms = getattr(self.stages[stage], "transforms", None)
        return classical_objective(state, values, k_meas, mask, transforms, self.lambdas, self.mode)

    def stage_values(self):
        """Current learned scalars per stage, as plain floats."""
        return [s.params.values().as_floats() for s in self.stages]

    def hyperparameters(self):
        return {
            "channels": self.channels,
            "iterations": self.iterations,
            "prox_blocks": self.prox_blocks,
            "init_blocks": self.init_blocks,
            "ablation": self.mode.value,
            "prox": self.prox_kind,
            "lambdas": self.lambdas,
            "tied_adjoint": self.tied_adjoint,
            "res_scale": self.res_scale,
        }

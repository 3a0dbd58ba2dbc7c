"""Estimator-style wrappers around the diffusion prior and the reconstructor.

Both follow the scikit-learn conventions: hyperparameters in ``__init__``,
learned state in trailing-underscore attributes, ``get_params`` /
``set_params`` from :class:`~sklearn.base.BaseEstimator`. Images are
``(n_images, height, width)`` arrays; ``X`` is always the reference
contrast and ``y`` the target contrast.
"""

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .diffusion import DiffusionConfig, compute_fep, sample_conditional, train_denoiser
from .fourier import ifft2c
from .metrics import psnr
from .sampling import AccelerationSpec, LearnableMask, apply_mask, equispaced_mask, variable_density_mask
from .training import LossConfig, OptimizerConfig, finetune, joint_optimize, learned_discrete_mask
from .unfolding import UnfoldingNet
from .validation import check_image_pairs, check_images, check_mask

__all__ = ["ContrastSynthesizer", "SampledReconstructor"]


class ContrastSynthesizer(TransformerMixin, BaseEstimator):
    """Conditional diffusion model mapping a reference contrast to the target.

    ``transform`` draws one synthetic target per reference image;
    :meth:`frequency_error_prior` turns those into normalized k-space error
    maps against the true targets.
    """

    def __init__(self, lr=2e-5, epochs=300, batch_size=16, ema_decay=0.999, base_width=32,
                 n_timesteps=1000, sample_steps=None, random_state=0):
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.ema_decay = ema_decay
        self.base_width = base_width
        self.n_timesteps = n_timesteps
        self.sample_steps = sample_steps
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_image_pairs(X, y)
        cfg = DiffusionConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                              ema_decay=self.ema_decay, base_width=self.base_width,
                              T=self.n_timesteps, seed=self.random_state)
        self.denoiser_ = train_denoiser(y, X, cfg)
        self.loss_history_ = list(self.denoiser_.loss_history)
        self.image_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "denoiser_")
        X = check_images(X)
        return sample_conditional(self.denoiser_, X, seed=self.random_state, steps=self.sample_steps)

    def frequency_error_prior(self, X, y):
        """Normalized k-space error of synthesized ``X`` against ``y``."""
        X, y = check_image_pairs(X, y)
        return compute_fep(self.transform(X), y).r_norm


class SampledReconstructor(RegressorMixin, BaseEstimator):
    """Sampling mask plus unrolled reconstruction network, trained together.

    Parameters
    ----------
    rate : int
        Acceleration; the mask keeps ``1/rate`` of k-space.
    center_fraction : float, optional
        Always-sampled central fraction; defaults to the standard value for
        the rate.
    mask_mode : {"learned_fep", "learned_loupe", "equispaced", "variable_density"}
        Learned modes optimize the mask logits with the network, then
        binarize and fine-tune. ``learned_fep`` needs a ``prior`` in
        :meth:`fit`.
    ablation : str
        Network variant, see :class:`~freqmask.unfolding.UnfoldingNet`.
    validation_fraction : float
        Share of the training images held out for checkpoint selection when
        no explicit validation set is passed.

    Attributes
    ----------
    net_ : UnfoldingNet
    mask_ : ndarray of shape (height, width)
        Binary sampling mask.
    history_ : list of dict
        Per-epoch records of both training phases.
    """

    def __init__(self, rate=4, center_fraction=None, mask_mode="learned_fep", ablation="full",
                 channels=32, iterations=4, prox_blocks=12, init_blocks=10, lr=1e-4,
                 mask_lr=None, batch_size=2, epochs=30, finetune_epochs=30, loss="combined",
                 validation_fraction=0.125, random_state=0):
        self.rate = rate
        self.center_fraction = center_fraction
        self.mask_mode = mask_mode
        self.ablation = ablation
        self.channels = channels
        self.iterations = iterations
        self.prox_blocks = prox_blocks
        self.init_blocks = init_blocks
        self.lr = lr
        self.mask_lr = mask_lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.finetune_epochs = finetune_epochs
        self.loss = loss
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _spec(self):
        if self.center_fraction is None:
            return AccelerationSpec.from_rate(self.rate)
        return AccelerationSpec(self.rate, self.center_fraction)

    def _holdout(self, X, y, prior):
        n_val = max(1, int(round(self.validation_fraction * len(X))))
        if n_val >= len(X):
            raise ValueError("not enough images to hold out a validation set")
        order = np.random.default_rng(self.random_state).permutation(len(X))
        tr, va = order[n_val:], order[:n_val]
        return (y[tr], X[tr]), (y[va], X[va]), None if prior is None else prior[tr]

    def fit(self, X, y, prior=None, X_val=None, y_val=None):
        """Train on references ``X`` and fully sampled targets ``y``.

        ``prior`` holds one normalized frequency error grid per training
        image (see :meth:`ContrastSynthesizer.frequency_error_prior`).
        """
        modes = ("learned_fep", "learned_loupe", "equispaced", "variable_density")
        if self.mask_mode not in modes:
            raise ValueError(f"mask_mode must be one of {modes}, got {self.mask_mode!r}")
        X, y = check_image_pairs(X, y)
        if prior is not None:
            prior = check_images(prior, "prior")
            if prior.shape != y.shape:
                raise ValueError(f"prior {prior.shape} must match y {y.shape}")
        elif self.mask_mode == "learned_fep":
            raise ValueError("mask_mode='learned_fep' needs a frequency error prior")
        if X_val is None:
            train, val, prior = self._holdout(X, y, prior)
        else:
            X_val, y_val = check_image_pairs(X_val, y_val, "X_val", "y_val")
            train, val = (y, X), (y_val, X_val)

        spec = self._spec()
        shape = X.shape[1:]
        loss_cfg = LossConfig(kind=self.loss)
        opt = OptimizerConfig(lr=self.lr, mask_lr=self.mask_lr, batch_size=self.batch_size,
                              epochs=self.epochs, seed=self.random_state)
        torch.manual_seed(self.random_state)
        net = UnfoldingNet(self.channels, self.iterations, self.prox_blocks, self.init_blocks,
                           self.ablation)
        if self.mask_mode.startswith("learned"):
            if self.mask_mode == "learned_loupe":
                prior = np.zeros(train[0].shape)
            mask_module = LearnableMask(shape, spec, seed=self.random_state)
            res = joint_optimize(train, val, net, mask_module, prior, opt, loss_cfg)
            self.p_mask_ = mask_module.p_mask.detach().double().numpy()
            mask = learned_discrete_mask(mask_module, prior, seed=self.random_state)
            history = res.history
            opt.epochs = self.finetune_epochs
            res = finetune(train, val, res.net, mask, opt, loss_cfg)
            history = history + res.history
        else:
            if self.mask_mode == "equispaced":
                mask = equispaced_mask(shape, spec)
            else:
                mask = variable_density_mask(shape, spec, seed=self.random_state)
            res = finetune(train, val, net, mask, opt, loss_cfg)
            history = res.history
        self.net_ = res.net
        self.mask_ = mask
        self.history_ = history
        return self

    def acquire(self, y):
        """Masked k-space of fully sampled images ``y`` under ``mask_``."""
        check_is_fitted(self, "mask_")
        y = check_images(y, "y")
        check_mask(self.mask_, y.shape[1:])
        return apply_mask(y, self.mask_)[0]

    def predict(self, X, kspace):
        """Reconstruct from references ``X`` and masked k-space ``kspace``."""
        check_is_fitted(self, "net_")
        X = check_images(X)
        kspace = np.asarray(kspace)
        if kspace.ndim == 2:
            kspace = kspace[None]
        if kspace.shape != X.shape:
            raise ValueError(f"kspace {kspace.shape} must match X {X.shape}")
        if not np.isfinite(kspace).all():
            raise ValueError("kspace contains non-finite values")
        dtype = next(self.net_.parameters()).dtype
        k = torch.as_tensor(kspace * self.mask_).to(torch.complex64 if dtype == torch.float32
                                                    else torch.complex128)
        x_u = ifft2c(k).abs()
        m = torch.as_tensor(self.mask_, dtype=dtype)
        self.net_.eval()
        with torch.no_grad():
            out = self.net_(x_u, torch.as_tensor(X, dtype=dtype), m, k)
        return out.double().numpy()

    def score(self, X, y, sample_weight=None):
        """Mean PSNR (dB) of reconstructions from simulated acquisitions of ``y``."""
        X, y = check_image_pairs(X, y)
        recon = self.predict(X, self.acquire(y))
        values = np.array([psnr(r, g) for r, g in zip(recon, y)])
        return float(np.average(values, weights=sample_weight))

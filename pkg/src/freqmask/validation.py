"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

__all__ = ["check_images", "check_image_pairs", "check_mask"]


def check_images(X, name="X", min_size=4):
    """Return ``X`` as a finite float64 stack of shape ``(N, H, W)``.

    A single 2-D image is promoted to a stack of one.
    """
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64,
                    ensure_all_finite=True, input_name=name)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name} must have shape (n_images, height, width), got {X.shape}")
    if min(X.shape[1:]) < min_size:
        raise ValueError(f"{name} images must be at least {min_size}x{min_size}, got {X.shape[1:]}")
    return X


def check_image_pairs(X, y, x_name="X", y_name="y"):
    X = check_images(X, x_name)
    y = check_images(y, y_name)
    if X.shape != y.shape:
        raise ValueError(f"{x_name} {X.shape} and {y_name} {y.shape} must have equal shapes")
    return X, y


def check_mask(mask, shape):
    mask = check_array(mask, dtype=np.float64, ensure_all_finite=True, input_name="mask")
    if mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match images {tuple(shape)}")
    if mask.min() < 0 or mask.max() > 1:
        raise ValueError("mask entries must lie in [0, 1]")
    return mask

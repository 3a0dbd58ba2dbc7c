import numpy as np
import pytest
import torch
from hypothesis import example, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqmask.fourier import fft2c
from freqmask.sampling import (
    STANDARD_CENTER_FRACTIONS,
    AccelerationSpec,
    LearnableMask,
    apply_mask,
    binarize_masks,
    center_count,
    center_region,
    column_density,
    continuous_mask,
    equispaced_mask,
    sparsify,
    variable_density_mask,
)
from oracles import central_difference, direct_centered_dft, direct_centered_idft, top_k_mask


# --- acceleration spec and fixed masks --------------------------------------------

@pytest.mark.parametrize("rate, cf", sorted(STANDARD_CENTER_FRACTIONS.items()))
def test_standard_center_fractions(rate, cf):
    spec = AccelerationSpec.from_rate(rate)
    assert spec.center_fraction == cf
    assert spec.gamma == pytest.approx(1 / rate)


def test_center_fraction_must_be_below_gamma():
    with pytest.raises(ValueError):
        AccelerationSpec(4, 0.25)
    with pytest.raises(ValueError):
        equispaced_mask((8, 8), AccelerationSpec(4, 0.3))


def test_equispaced_enumeration_w8_r4():
    mask = equispaced_mask((3, 8), AccelerationSpec(4, 0.0))
    assert np.flatnonzero(mask[0]).tolist() == [0, 4]
    assert (mask == mask[0]).all()


def test_equispaced_rate_one_is_all_ones():
    assert (equispaced_mask((6, 6), AccelerationSpec(1)) == 1).all()


def test_equispaced_center_width_256():
    spec = AccelerationSpec.from_rate(4)
    mask = equispaced_mask((4, 256), spec)
    n_low = center_count(256, spec.center_fraction)
    assert n_low in (21, 22)
    start = (256 - n_low + 1) // 2
    assert (mask[:, start : start + n_low] == 1).all()
    assert abs(mask.mean() - 0.25) < 0.02


def test_center_count_rounding():
    assert center_count(32, 0.084) == 3
    assert center_count(32, 0.0125) == 1
    assert center_count(32, 0.0) == 0


def test_variable_density_mask_exact_count_and_center():
    spec = AccelerationSpec.from_rate(4)
    mask = variable_density_mask((32, 32), spec, seed=3)
    assert mask.sum() == 256
    assert (mask[center_region((32, 32), spec.center_fraction)] == 1).all()
    prof = column_density(mask)
    assert prof[12:20].mean() > prof[:4].mean()


# --- sparsify -----------------------------------------------------------------------

@pytest.mark.parametrize("p, gamma, expected", [(0.5, 0.25, 0.25), (0.5, 0.75, 0.75), (0.3, 0.3, 0.3)])
def test_sparsify_closed_form(p, gamma, expected):
    np.testing.assert_allclose(sparsify(np.full((4, 4), p), gamma), expected, atol=1e-15)


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.5])
def test_sparsify_rejects_gamma(gamma):
    with pytest.raises(ValueError):
        sparsify(np.full((4, 4), 0.5), gamma)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 5), elements=st.floats(0.0, 1.0)).filter(lambda a: 0 < a.mean() < 1),
       st.floats(0.01, 0.99))
def test_sparsify_mean_range_and_order(p, gamma):
    out = sparsify(p, gamma)
    assert abs(out.mean() - gamma) < 1e-9
    assert out.min() >= -1e-15 and out.max() <= 1 + 1e-15
    order = np.argsort(p.ravel(), kind="stable")
    assert np.all(np.diff(out.ravel()[order]) >= -1e-15)


# --- continuous mask ------------------------------------------------------------------

def _t(a):
    return torch.as_tensor(np.asarray(a), dtype=torch.float64)


def test_continuous_mask_saturation_and_midpoint():
    # with P chosen so every probability equals gamma, q is exactly gamma
    gamma = 0.25
    p = np.full((4, 4), np.log(gamma / (1 - gamma)) / 5.0)
    u = np.full((4, 4), 0.7)
    u[0, 0] = gamma
    u[1, 1] = 0.0
    m = continuous_mask(_t(np.zeros((4, 4))), _t(p), gamma, _t(u)).numpy()
    assert m[0, 0] == 0.5
    assert m[2, 2] < 1e-8


def test_continuous_mask_saturates_at_one():
    # a single very likely entry: q = 1 after sparsification when others are ~0
    p = np.full((4, 4), -20.0)
    p[2, 3] = 20.0
    m = continuous_mask(_t(np.zeros((4, 4))), _t(p), 1 / 16, _t(np.zeros((4, 4)))).numpy()
    assert abs(m[2, 3] - 1.0) < 1e-8


def test_continuous_mask_center_forced():
    spec = AccelerationSpec.from_rate(4)
    lm = LearnableMask((32, 32), spec, seed=1, dtype=torch.float64)
    m = lm(_t(np.zeros((2, 32, 32))), torch.rand(2, 32, 32, dtype=torch.float64)).detach().numpy()
    assert (m[:, lm.center] == 1).all()
    assert m.min() >= 0 and m.max() <= 1


def test_continuous_mask_monte_carlo_mean():
    rng = torch.Generator().manual_seed(0)
    p = torch.rand(4, 4, generator=rng, dtype=torch.float64) * 2 - 1
    r = torch.rand(4, 4, generator=rng, dtype=torch.float64)
    gamma = 0.3
    q = sparsify(torch.sigmoid(5 * (r + p)), gamma)
    u = torch.rand(100_000, 4, 4, generator=rng, dtype=torch.float64)
    m = torch.sigmoid(200 * (q - u)).mean(0)
    m_api = continuous_mask(r, p, gamma, u[:3])
    np.testing.assert_allclose(m_api.numpy(), torch.sigmoid(200 * (q - u[:3])).numpy(), atol=1e-15)
    assert (m - q).abs().max() < 0.01


def test_continuous_mask_shape_mismatch():
    with pytest.raises(ValueError):
        continuous_mask(_t(np.zeros((4, 4))), _t(np.zeros((4, 5))), 0.25, _t(np.zeros((4, 4))))


@pytest.mark.parametrize("seed", range(5))
def test_continuous_mask_gradient_matches_finite_differences(seed):
    g = torch.Generator().manual_seed(seed)
    r = torch.rand(2, 8, 8, generator=g, dtype=torch.float64)
    u = torch.rand(2, 8, 8, generator=g, dtype=torch.float64)
    w = torch.randn(2, 8, 8, generator=g, dtype=torch.float64)
    p = (torch.rand(8, 8, generator=g, dtype=torch.float64) * 2 - 1).requires_grad_(True)

    def f(pp):
        return float((continuous_mask(r, pp, 0.25, u, slope_sample=20.0) * w).sum())

    (continuous_mask(r, p, 0.25, u, slope_sample=20.0) * w).sum().backward()
    d = torch.randn(8, 8, generator=g, dtype=torch.float64)
    fd = central_difference(f, p.detach(), d, h=1e-6)
    an = float((p.grad * d).sum())
    assert abs(fd - an) <= 1e-5 * max(abs(an), 1e-8)


# --- binarization -------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_binarize_single_mask_matches_top_k(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(4, 12, size=2))
    a = rng.random(shape)
    k = int(rng.integers(1, a.size))
    out = binarize_masks([a], k / a.size)
    np.testing.assert_array_equal(out, top_k_mask(a, k))


def test_binarize_fixed_point_on_binary_masks():
    mask = equispaced_mask((8, 8), AccelerationSpec(4, 0.0))
    np.testing.assert_array_equal(binarize_masks([mask, mask, mask], 0.25), mask)


def test_binarize_duplicates_broken_in_raster_order():
    a = np.array([
        [0.1, 0.5, 0.5, 0.1],
        [0.5, 0.9, 0.5, 0.1],
        [0.1, 0.1, 0.5, 0.1],
        [0.5, 0.1, 0.1, 0.1],
    ])
    out = binarize_masks([a], 4 / 16)
    expected = np.zeros((4, 4))
    expected[1, 1] = 1  # the unique maximum
    expected[0, 1] = expected[0, 2] = expected[1, 0] = 1  # first three of six ties
    np.testing.assert_array_equal(out, expected)
    np.testing.assert_array_equal(out, top_k_mask(a, 4))


def test_binarize_center_forced_and_idempotent():
    rng = np.random.default_rng(0)
    center = center_region((16, 16), 0.084)
    masks = [rng.random((16, 16)) for _ in range(5)]
    for m in masks:
        m[center] = 0.0
    out = binarize_masks(masks, 0.25, center)
    assert (out[center] == 1).all()
    assert out.sum() == 64
    np.testing.assert_array_equal(binarize_masks([out], 0.25, center), out)


def test_binarize_rejects_empty_and_ragged():
    with pytest.raises(ValueError):
        binarize_masks([], 0.25)
    with pytest.raises(ValueError):
        binarize_masks([np.zeros((4, 4)), np.zeros((4, 5))], 0.25)


@settings(max_examples=100, deadline=None)
@given(st.integers(4, 10), st.integers(4, 10), st.integers(1, 4), st.floats(0.05, 0.95),
       st.integers(0, 2**31 - 1), st.booleans())
@example(7, 10, 1, 0.55, 0, False)  # half-integer budget: 0.55 * 70 = 38.5
def test_binarize_fraction_and_top_k(h, w, n, gamma, seed, coarse):
    rng = np.random.default_rng(seed)
    masks = [rng.random((h, w)) for _ in range(n)]
    if coarse:
        masks = [np.round(m * 3) / 3 for m in masks]
    out = binarize_masks(masks, gamma)
    assert set(np.unique(out)) <= {0.0, 1.0}
    assert abs(out.mean() - gamma) <= 1 / (h * w) / 2 + 1e-12
    np.testing.assert_array_equal(out, top_k_mask(np.mean(masks, axis=0), int(round(gamma * (h * w)))))


# --- acquisition ---------------------------------------------------------------------

def test_apply_mask_identity_and_zero():
    x = np.random.default_rng(1).random((8, 8))
    k, x_u = apply_mask(x, np.ones((8, 8)))
    np.testing.assert_allclose(x_u, x, atol=1e-10)
    np.testing.assert_allclose(k, fft2c(x), atol=1e-15)
    _, x_u = apply_mask(x, np.zeros((8, 8)))
    assert not x_u.any()


def test_apply_mask_center_row_matches_direct_dft():
    x = np.random.default_rng(2).random((8, 8))
    mask = np.zeros((8, 8))
    mask[4] = 1.0
    k, x_u = apply_mask(x, mask)
    spectrum = direct_centered_dft(x) * mask
    np.testing.assert_allclose(k, spectrum, atol=1e-12)
    np.testing.assert_allclose(x_u, np.abs(direct_centered_idft(spectrum)), atol=1e-12)


def test_apply_mask_noise_only_on_acquired_samples():
    x = np.random.default_rng(3).random((8, 8))
    mask = equispaced_mask((8, 8), AccelerationSpec(4, 0.0))
    k, _ = apply_mask(x, mask, noise_sigma=0.1, rng=0)
    assert not k[mask == 0].any()
    assert np.abs(k - mask * fft2c(x)).max() > 0
    k2, _ = apply_mask(x, mask, noise_sigma=0.1, rng=0)
    np.testing.assert_array_equal(k, k2)


def test_apply_mask_noise_level():
    x = np.zeros((64, 64))
    k, _ = apply_mask(x, np.ones((64, 64)), noise_sigma=0.2, rng=5)
    assert np.std(k) == pytest.approx(0.2, rel=0.05)


def test_apply_mask_errors():
    with pytest.raises(ValueError):
        apply_mask(np.zeros((4, 4)), np.ones((4, 4)), noise_sigma=-1)
    with pytest.raises(ValueError):
        apply_mask(np.zeros((4, 4)), np.ones((4, 5)))


def test_apply_mask_differentiable_in_mask():
    x = torch.rand(2, 8, 8, dtype=torch.float64)
    m = torch.full((8, 8), 0.5, dtype=torch.float64, requires_grad=True)
    _, x_u = apply_mask(x, m)
    x_u.sum().backward()
    assert torch.isfinite(m.grad).all() and m.grad.abs().sum() > 0


def test_learnable_mask_init_uniform_and_seeded():
    spec = AccelerationSpec.from_rate(4)
    a = LearnableMask((64, 64), spec, seed=7).p_mask.detach()
    b = LearnableMask((64, 64), spec, seed=7).p_mask.detach()
    assert torch.equal(a, b)
    assert a.min() >= -1 and a.max() <= 1
    assert abs(float(a.mean())) < 0.05

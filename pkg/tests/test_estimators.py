import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from freqmask import ContrastSynthesizer, SampledReconstructor
from freqmask.data import generate_phantom_pairs, stack_pairs
from freqmask.metrics import psnr
from freqmask.sampling import apply_mask
from freqmask.validation import check_image_pairs, check_images, check_mask

TINY = dict(channels=4, iterations=1, prox_blocks=1, init_blocks=1, epochs=1, finetune_epochs=1,
            lr=1e-3)


@pytest.fixture(scope="module")
def pairs():
    tgt, ref = stack_pairs(generate_phantom_pairs(10, 16, seed=0))
    return ref, tgt


# --- validation helpers -----------------------------------------------------------------

def test_check_images_promotes_single_image():
    assert check_images(np.zeros((5, 6))).shape == (1, 5, 6)
    assert check_images([[[0, 1, 2, 3]] * 4]).dtype == np.float64


@pytest.mark.parametrize("bad", [np.zeros(5), np.zeros((1, 2, 3, 4)), np.zeros((1, 3, 3)),
                                 np.full((1, 4, 4), np.nan), np.full((1, 4, 4), np.inf)])
def test_check_images_rejects(bad):
    with pytest.raises(ValueError):
        check_images(bad)


def test_check_pairs_and_mask():
    with pytest.raises(ValueError, match="equal shapes"):
        check_image_pairs(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)))
    with pytest.raises(ValueError, match="does not match"):
        check_mask(np.ones((4, 5)), (4, 4))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        check_mask(np.full((4, 4), 2.0), (4, 4))
    assert check_mask(np.eye(4), (4, 4)).shape == (4, 4)


# --- reconstructor ----------------------------------------------------------------------

def test_params_round_trip_and_clone():
    est = SampledReconstructor(rate=8, mask_mode="equispaced", channels=8)
    params = est.get_params()
    assert params["rate"] == 8 and params["mask_mode"] == "equispaced" and params["channels"] == 8
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert est.set_params(rate=4).rate == 4


def test_unfitted_estimators_raise(pairs):
    X, y = pairs
    with pytest.raises(NotFittedError):
        SampledReconstructor().predict(X, y)
    with pytest.raises(NotFittedError):
        SampledReconstructor().acquire(y)
    with pytest.raises(NotFittedError):
        ContrastSynthesizer().transform(X)


@pytest.mark.parametrize("mode", ["equispaced", "variable_density", "learned_loupe"])
def test_fit_predict_score(pairs, mode):
    X, y = pairs
    est = SampledReconstructor(mask_mode=mode, **TINY).fit(X[:8], y[:8])
    assert est.mask_.shape == (16, 16) and set(np.unique(est.mask_)) <= {0.0, 1.0}
    k = est.acquire(y[8:])
    np.testing.assert_allclose(k, apply_mask(y[8:], est.mask_)[0])
    recon = est.predict(X[8:], k)
    assert recon.shape == (2, 16, 16) and np.isfinite(recon).all()
    score = est.score(X[8:], y[8:])
    assert score == pytest.approx(np.mean([psnr(r, g) for r, g in zip(recon, y[8:])]), rel=1e-6)
    assert len(est.history_) == (4 if mode == "learned_loupe" else 2)
    assert hasattr(est, "p_mask_") == (mode == "learned_loupe")


def test_fit_with_prior_and_explicit_validation(pairs):
    X, y = pairs
    prior = np.random.default_rng(0).random((6, 16, 16))
    est = SampledReconstructor(mask_mode="learned_fep", **TINY)
    est.fit(X[:6], y[:6], prior=prior, X_val=X[6:8], y_val=y[6:8])
    assert est.mask_.sum() == 64


def test_fit_is_deterministic(pairs):
    X, y = pairs
    a = SampledReconstructor(mask_mode="learned_loupe", **TINY).fit(X[:8], y[:8])
    b = SampledReconstructor(mask_mode="learned_loupe", **TINY).fit(X[:8], y[:8])
    np.testing.assert_array_equal(a.mask_, b.mask_)
    np.testing.assert_array_equal(a.predict(X[8:], a.acquire(y[8:])), b.predict(X[8:], b.acquire(y[8:])))


@pytest.mark.parametrize("kwargs, fit_kw, message", [
    (dict(mask_mode="learned_fep"), {}, "prior"),
    (dict(mask_mode="random"), {}, "mask_mode"),
    (dict(mask_mode="learned_fep"), dict(prior=np.zeros((3, 16, 16))), "must match"),
    (dict(mask_mode="equispaced", validation_fraction=1.0), {}, "validation"),
])
def test_fit_errors(pairs, kwargs, fit_kw, message):
    X, y = pairs
    with pytest.raises(ValueError, match=message):
        SampledReconstructor(**{**TINY, **kwargs}).fit(X[:8], y[:8], **fit_kw)


def test_predict_input_checks(pairs):
    X, y = pairs
    est = SampledReconstructor(mask_mode="equispaced", **TINY).fit(X[:8], y[:8])
    with pytest.raises(ValueError):
        est.predict(X[8:], np.zeros((2, 16, 8)))
    with pytest.raises(ValueError):
        est.predict(X[8:], np.full((2, 16, 16), np.nan))
    with pytest.raises(ValueError):
        est.acquire(np.zeros((1, 8, 8)))
    assert est.predict(X[8], est.acquire(y[8])[0]).shape == (1, 16, 16)


# --- synthesizer ------------------------------------------------------------------------

def test_synthesizer_fit_transform_prior(pairs):
    X, y = pairs
    syn = ContrastSynthesizer(lr=1e-3, epochs=1, batch_size=4, base_width=8, n_timesteps=20,
                              sample_steps=5)
    assert clone(syn).get_params() == syn.get_params()
    syn.fit(X[:6], y[:6])
    assert len(syn.loss_history_) == 1 and syn.image_shape_ == (16, 16)
    out = syn.transform(X[:2])
    assert out.shape == (2, 16, 16)
    np.testing.assert_array_equal(out, syn.transform(X[:2]))
    prior = syn.frequency_error_prior(X[:2], y[:2])
    assert prior.shape == (2, 16, 16)
    np.testing.assert_allclose(prior.max(axis=(1, 2)), 1.0)

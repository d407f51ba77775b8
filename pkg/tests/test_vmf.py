import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_dataset
from laplace_metric.contrastive import MarginConfig, TargetMode, dataset_loss
from laplace_metric.net import NetSpec, init_params, normalize, pack
from laplace_metric.vmf import (
    K_MAX,
    dataset_log_likelihood,
    kappa_from_r,
    vmf_estimate,
    vmf_estimate_batch,
    vmf_log_density_unnorm,
)


def test_log_density_examples():
    mu = np.array([0.0, 0.6, 0.8])
    assert vmf_log_density_unnorm(mu, mu, 3.0) == 0.0
    assert vmf_log_density_unnorm(-mu, mu, 3.0) == pytest.approx(-6.0, abs=1e-15)
    assert vmf_log_density_unnorm(np.array([1.0, 0, 0]), mu, 0.0) == 0.0
    with pytest.raises(ValueError):
        vmf_log_density_unnorm(np.array([1.0, 1.0, 0]), mu, 1.0)
    with pytest.raises(ValueError):
        vmf_log_density_unnorm(mu, mu, -1.0)


def test_estimate_degenerate_cases():
    z = normalize(np.array([1.0, 2.0, 3.0]))
    est = vmf_estimate(np.tile(z, (5, 1)))
    assert est.kappa == K_MAX and est.clamped
    np.testing.assert_allclose(est.mu, z)
    anti = vmf_estimate(np.array([z, -z]))
    assert anti.kappa == 0.0 and not anti.mu_defined
    with pytest.raises(ValueError):
        vmf_estimate(z[None, :])


def test_kappa_hand_value():
    # 0.9 * (3 - 0.81) / (1 - 0.81)
    assert float(kappa_from_r(0.9, 3)) == pytest.approx(10.373684210526315, rel=1e-12)


def test_kappa_monotone_on_grid():
    for dim in (2, 3, 16):
        k = kappa_from_r(np.linspace(0.0, 0.999999, 2001), dim)
        assert np.all(np.diff(k) >= 0)


@given(st.floats(0.0, 0.999), st.floats(0.0, 0.999), st.integers(2, 64))
def test_kappa_monotone_property(a, b, dim):
    lo, hi = sorted((a, b))
    assert kappa_from_r(lo, dim) <= kappa_from_r(hi, dim)


def test_direction_converges_as_noise_shrinks():
    rng = np.random.default_rng(11)
    mu = normalize(np.array([0.3, -1.0, 0.5]))
    cos = []
    for sigma in (1.0, 0.3, 0.05):
        est = vmf_estimate(normalize(mu + sigma * rng.normal(size=(200, 3))))
        cos.append(float(est.mu @ mu))
    assert cos[0] < cos[1] < cos[2] and cos[2] > 0.9999


def test_batch_estimate_matches_single():
    rng = np.random.default_rng(2)
    S = normalize(rng.normal(size=(30, 4, 3)) + np.array([1.0, 0, 0]))
    r, k = vmf_estimate_batch(S)
    for n in range(4):
        est = vmf_estimate(S[:, n])
        assert r[n] == pytest.approx(est.r_bar, rel=1e-12)
        assert k[n] == pytest.approx(est.kappa, rel=1e-12)


def _linear_spec(W, b):
    spec = NetSpec((W.shape[1], W.shape[0]))
    return spec, pack([(W, b)])


def test_log_likelihood_examples():
    spec, params = _linear_spec(np.zeros((2, 2)), np.array([0.0, 1.0]))
    same = make_dataset(np.random.default_rng(0).normal(size=(3, 2)), [0, 0, 0])
    assert dataset_log_likelihood(same, params, spec, 2.0) == 0.0
    spec, params = _linear_spec(np.eye(2), np.zeros(2))
    anti = make_dataset([[1.0, 0.0], [-2.0, 0.0]], [0, 1])
    assert dataset_log_likelihood(anti, params, spec, 2.0) == pytest.approx(0.0, abs=1e-15)


def test_log_likelihood_matches_loss_differences(rng):
    spec = NetSpec((2, 5, 3), "tanh")
    ds = make_dataset(rng.normal(size=(7, 2)), [0, 0, 1, 1, 1, 2, 2])
    kappa = 1.7
    t1, t2 = init_params(spec, 1), init_params(spec, 2)
    mode, cover = TargetMode("vmf", kappa), MarginConfig.covering()
    dl = dataset_loss(ds, t1, spec, cover, mode) - dataset_loss(ds, t2, spec, cover, mode)
    dlog = dataset_log_likelihood(ds, t1, spec, kappa) - dataset_log_likelihood(ds, t2, spec, kappa)
    assert dl == pytest.approx(-dlog, abs=1e-10)

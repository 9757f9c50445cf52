import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from ra2vipas import gp
from ra2vipas._statespace import matern52_lml_1d


def dense_oracle(x, y, noise, xs, signal_var, lengthscale, mean_const=0.0):
    """Literal conditioning with an explicit inverse, written independently of gp.py."""
    def k(a, b):
        r = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
        s = math.sqrt(5) * r / lengthscale
        return signal_var * (1 + s + s**2 / 3) * np.exp(-s)

    c = k(x, x) + np.diag(noise + gp.NOISE_FLOOR)
    c_inv = np.linalg.inv(c)
    ks = k(xs, x)
    mean = mean_const + ks @ c_inv @ (y - mean_const)
    cov = k(xs, xs) - ks @ c_inv @ ks.T
    r = y - mean_const
    n = len(y)
    lml = -0.5 * r @ c_inv @ r - 0.5 * np.linalg.slogdet(c)[1] - 0.5 * n * math.log(2 * math.pi)
    return mean, cov, lml


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def test_matern_hand_value():
    spec = gp.KernelSpec(gp.MATERN52, 1.0, 1.0)
    expected = (1 + math.sqrt(5) + 5 / 3) * math.exp(-math.sqrt(5))
    assert gp.kernel_eval(spec, [0.0], [1.0]) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.52399, abs=1e-5)


def test_kernel_limits_and_dimension_check():
    spec = gp.KernelSpec(gp.MATERN52, 2.5, 0.7)
    assert gp.kernel_eval(spec, [1.0, 2.0], [1.0, 2.0]) == 2.5
    assert gp.kernel_eval(spec, [0.0], [1e4]) < 1e-250
    with pytest.raises(ValueError):
        gp.kernel_eval(spec, [0.0, 1.0], [0.0])


def test_other_families():
    x = np.array([[0.0], [1.0], [3.0]])
    se = gp.KernelSpec(gp.SQEXP, 2.0, 1.5).gram(x, x)
    np.testing.assert_allclose(se[0, 1], 2.0 * math.exp(-1 / (2 * 1.5**2)))
    const = gp.KernelSpec(gp.CONSTANT, 0.7).gram(x, x)
    np.testing.assert_allclose(const, 0.7)
    lin = gp.KernelSpec(gp.LINEAR, 2.0).gram(x, x)
    np.testing.assert_allclose(lin, 2.0 * x @ x.T)


def test_composition():
    x = np.linspace(0, 2, 5)[:, None]
    a = gp.KernelSpec(gp.MATERN52, 1.0, 0.5)
    b = gp.KernelSpec(gp.LINEAR, 0.3)
    np.testing.assert_allclose((a + b).gram(x, x), a.gram(x, x) + b.gram(x, x))
    np.testing.assert_allclose((a * b).gram(x, x), a.gram(x, x) * b.gram(x, x))
    np.testing.assert_allclose((a + b).diag(x), np.diag((a + b).gram(x, x)))


def test_kernel_spec_validates():
    with pytest.raises(ValueError):
        gp.KernelSpec(gp.MATERN52, -1.0, 1.0)
    with pytest.raises(ValueError):
        gp.KernelSpec(gp.MATERN52, 1.0, 0.0)
    with pytest.raises(ValueError):
        gp.KernelSpec("cubic")


@given(st.integers(1, 8), st.integers(1, 3), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_gram_symmetric_psd(n, p, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    for fam in gp.STATIONARY:
        k = gp.KernelSpec(fam, rng.uniform(0.1, 3), rng.uniform(0.1, 3)).gram(x, x)
        np.testing.assert_array_equal(k, k.T)
        assert np.linalg.eigvalsh(k).min() > -1e-10


def test_prior_recovered_on_empty_dataset():
    spec = gp.KernelSpec(gp.MATERN52, 1.3, 0.8)
    model = gp.condition(spec, gp.GpDataset(np.zeros((0, 1)), np.zeros(0)), mean_const=0.4)
    xs = np.linspace(-1, 1, 4)[:, None]
    pred = gp.posterior_predict(model, xs)
    np.testing.assert_allclose(pred.mean, 0.4)
    np.testing.assert_allclose(pred.cov, spec.gram(xs, xs))


def test_noiseless_interpolation():
    model = gp.condition(gp.KernelSpec(gp.MATERN52, 1.0, 1.0), gp.GpDataset([[0.3]], [1.7], 0.0))
    pred = model.predict([[0.3]])
    assert pred.mean[0] == pytest.approx(1.7, abs=1e-5)
    assert pred.var[0] == pytest.approx(0.0, abs=2e-6)


def test_hand_conditioning_single_noisy_point():
    # k(x, x) = 1, noise 1 (floor included in the expected value)
    model = gp.condition(gp.KernelSpec(gp.MATERN52, 1.0, 1.0), gp.GpDataset([[0.0]], [2.0], 1.0))
    pred = model.predict([[0.0]])
    s = 1.0 + 1.0 + gp.NOISE_FLOOR
    assert pred.mean[0] == pytest.approx(2.0 / s, rel=1e-12)
    assert pred.var[0] == pytest.approx(1 - 1 / s, rel=1e-12)
    assert pred.mean[0] == pytest.approx(1.0, abs=1e-6)
    assert pred.var[0] == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("y, expected", [(0.0, -0.91894), (1.0, -1.41894)])
def test_lml_scalar_gaussian(y, expected):
    # signal_var + noise + floor = 1
    spec = gp.KernelSpec(gp.MATERN52, 0.5, 1.0)
    model = gp.condition(spec, gp.GpDataset([[0.0]], [y], 0.5 - gp.NOISE_FLOOR))
    assert gp.log_marginal_likelihood(model) == pytest.approx(expected, abs=1e-5)


def test_lml_requires_data():
    model = gp.condition(gp.KernelSpec(gp.MATERN52), gp.GpDataset(np.zeros((0, 1)), np.zeros(0)))
    with pytest.raises(ValueError):
        gp.log_marginal_likelihood(model)


def test_oracle_equivalence_random_instances():
    rng = np.random.default_rng(123)
    for _ in range(100):
        n, p, m = rng.integers(1, 7), rng.integers(1, 3), rng.integers(1, 5)
        x = rng.normal(size=(n, p))
        y = rng.normal(size=n)
        noise = rng.uniform(0.0, 0.5, size=n)
        xs = rng.normal(size=(m, p))
        sv, ls, mc = rng.uniform(0.2, 3), rng.uniform(0.2, 3), rng.normal()
        model = gp.condition(gp.KernelSpec(gp.MATERN52, sv, ls), gp.GpDataset(x, y, noise), mc)
        pred = model.predict(xs)
        mean, cov, lml = dense_oracle(x, y, noise, xs, sv, ls, mc)
        assert rel_err(pred.mean, mean) < 1e-8
        assert rel_err(pred.cov, cov) < 1e-8
        assert abs(gp.log_marginal_likelihood(model) - lml) / max(1.0, abs(lml)) < 1e-8


def test_factorization_reproduces_covariance():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 2))
    model = gp.condition(gp.KernelSpec(gp.MATERN52, 1.0, 2.0), gp.GpDataset(x, rng.normal(size=30), 0.01))
    np.testing.assert_allclose(model.chol @ model.chol.T, model.covariance_matrix(), atol=1e-10)


def test_jitter_escalation_on_singular_matrix():
    # duplicate noiseless points with a near-constant kernel: rank one
    k = np.ones((4, 4))
    k[0, 1] = k[1, 0] = 1 + 1e-3
    chol, jitter = gp.jittered_cholesky(k)
    assert jitter > 0
    np.testing.assert_allclose(chol @ chol.T, k + (gp.NOISE_FLOOR + jitter) * np.eye(4), atol=1e-12)
    with pytest.raises(linalg.LinAlgError):
        gp.jittered_cholesky(-np.eye(3))


@given(st.integers(1, 6), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_posterior_variance_below_prior(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    spec = gp.KernelSpec(gp.MATERN52, rng.uniform(0.1, 3), rng.uniform(0.1, 3))
    model = gp.condition(spec, gp.GpDataset(x, rng.normal(size=n), rng.uniform(0, 1, n)))
    xs = rng.normal(size=(10, 2))
    pred = model.predict(xs, full_cov=False)
    assert np.all(pred.var <= spec.diag(xs) + 1e-10)
    full = model.predict(xs)
    np.testing.assert_array_equal(full.cov, full.cov.T)
    np.testing.assert_allclose(full.std, pred.std, atol=1e-10)


@given(st.integers(2, 6), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    x, y, noise = rng.normal(size=(n, 1)), rng.normal(size=n), rng.uniform(0, 0.3, n)
    spec = gp.KernelSpec(gp.MATERN52, 1.0, rng.uniform(0.2, 2))
    perm = rng.permutation(n)
    a = gp.condition(spec, gp.GpDataset(x, y, noise))
    b = gp.condition(spec, gp.GpDataset(x[perm], y[perm], noise[perm]))
    xs = np.linspace(-2, 2, 7)[:, None]
    pa, pb = a.predict(xs), b.predict(xs)
    np.testing.assert_allclose(pa.mean, pb.mean, atol=1e-10)
    np.testing.assert_allclose(pa.cov, pb.cov, atol=1e-10)


def test_kalman_evidence_matches_dense():
    rng = np.random.default_rng(9)
    x = np.round(rng.uniform(-3, 3, 300), 2)  # rounding forces duplicate inputs
    y = np.sin(x) + 0.3 * rng.normal(size=300)
    noise = rng.uniform(0.01, 0.2, 300)
    for sv, ls in [(1.0, 1.0), (0.1, 0.05), (3.0, 10.0)]:
        model = gp.condition(gp.KernelSpec(gp.MATERN52, sv, ls), gp.GpDataset(x, y, noise))
        dense = gp.log_marginal_likelihood(model)
        assert model.jitter == 0
        fast = matern52_lml_1d(x, y, noise + gp.NOISE_FLOOR, sv, ls)
        assert fast == pytest.approx(dense, rel=1e-9)


def test_fit_recovers_lengthscale():
    rng = np.random.default_rng(21)
    x = np.sort(rng.uniform(0, 20, 200))
    k = gp.KernelSpec(gp.MATERN52, 1.0, 1.0).gram(x[:, None], x[:, None])
    f = np.linalg.cholesky(k + 1e-8 * np.eye(200)) @ rng.normal(size=200)
    y = f + 0.1 * rng.normal(size=200)
    model = gp.fit_hyperparams(gp.GpDataset(x, y, 0.01), gp.KernelSpec(gp.MATERN52))
    assert 0.5 <= model.kernel.lengthscale <= 2.0


def test_fit_not_worse_than_grid_and_matches_lml():
    rng = np.random.default_rng(4)
    x = rng.uniform(-2, 2, (25, 1))
    data = gp.GpDataset(x, np.cos(2 * x[:, 0]) + 0.1 * rng.normal(size=25), 0.01)
    fit = gp.fit_hyperparams_full(data, gp.KernelSpec(gp.MATERN52))
    assert fit.lml >= fit.grid_best_lml - 1e-12
    assert gp.log_marginal_likelihood(fit.model) == pytest.approx(fit.lml, rel=1e-9)
    # exhaustive grid check against the public LML
    for lsv in np.linspace(*gp.LOG_SIGNAL_VAR_BOUNDS, 8):
        for lls in np.linspace(*gp.LOG_LENGTHSCALE_BOUNDS, 8):
            m = gp.condition(gp.KernelSpec(gp.MATERN52, math.exp(lsv), math.exp(lls)), data)
            assert fit.lml >= gp.log_marginal_likelihood(m) - 1e-8


def test_fit_constant_labels_shrinks_signal_var():
    data = gp.GpDataset(np.linspace(0, 1, 10), np.zeros(10), 1e-6)
    model = gp.fit_hyperparams(data, gp.KernelSpec(gp.MATERN52))
    assert model.kernel.signal_var <= math.exp(gp.LOG_SIGNAL_VAR_BOUNDS[0]) * 1.5


def test_fit_noise_adds_on_top_of_given_noise():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 5, 40)
    base = np.full(40, 0.001)
    data = gp.GpDataset(x, np.sin(x) + 0.5 * rng.normal(size=40), base)
    fit = gp.fit_hyperparams_full(data, gp.KernelSpec(gp.MATERN52), fit_noise=True)
    assert fit.noise is not None and 0.05 < fit.noise < 1.0
    np.testing.assert_allclose(fit.model.dataset.noise, base + fit.noise)


def test_fit_errors():
    with pytest.raises(ValueError):
        gp.fit_hyperparams(gp.GpDataset([[0.0]], [1.0]), gp.KernelSpec(gp.MATERN52))
    data = gp.GpDataset([[0.0], [1.0]], [1.0, 0.0])
    with pytest.raises(TypeError):
        gp.fit_hyperparams(data, gp.KernelSpec(gp.LINEAR))


def test_dataset_validation():
    with pytest.raises(ValueError):
        gp.GpDataset([[0.0], [1.0]], [1.0])
    with pytest.raises(ValueError):
        gp.GpDataset([[0.0]], [1.0], -0.1)
    with pytest.raises(ValueError):
        gp.GpDataset([[0.0], [1.0]], [1.0, 2.0], [0.1, 0.1, 0.1])


def test_r2_examples():
    t = np.array([0.0, 1.0, 2.0])
    assert gp.r2_score(t, t) == 1.0
    assert gp.r2_score(t, np.full(3, t.mean())) == 0.0
    assert gp.r2_score(t, np.zeros(3)) == pytest.approx(-1.5)
    with pytest.raises(ValueError):
        gp.r2_score([1.0, 1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        gp.r2_score([1.0, 2.0], [1.0])

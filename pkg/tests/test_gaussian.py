import numpy as np
import pytest

from thermalphi.covariance import CovKernel, quad_C
from thermalphi.gaussian import (SampleStream, characteristic_derivative, double_factorial,
                                 generating_functional_free, mc_generating_functional, mc_moment,
                                 moment_free, mode_variance, sample_free, stream_pairings)
from thermalphi.lattice import LatticeSpec
from thermalphi.stats import (bootstrap, effective_sample_size, mean_estimate, ratio_estimate,
                              weighted_mean)

N = 100_000


@pytest.fixture(scope="module")
def setup():
    spec = LatticeSpec(1.0, 2.0, 8, 16, 1.0)
    kernel = CovKernel(spec)
    r = np.random.default_rng(7)
    t, x = spec.times[:, None], spec.positions[None, :]
    fns = [r.uniform(0.5, 1.5) * np.exp(-(x - r.uniform(-1, 1)) ** 2 / 0.5)
           * (1 + r.uniform(-0.5, 0.5) * np.cos(2 * np.pi * t)) for _ in range(5)]
    vals = stream_pairings(kernel, 11, N, fns, batch_size=5000)
    return kernel, fns, vals


def test_same_seed_same_fields():
    k = CovKernel(LatticeSpec(1.0, 2.0, 8, 16, 1.0))
    a = sample_free(k, 3, 2)
    b = sample_free(k, 3, 2)
    assert np.abs(a[0] - b[0]).max() == 0
    assert not np.array_equal(a, sample_free(k, 4, 2))


def test_batching_does_not_change_samples():
    k = CovKernel(LatticeSpec(1.0, 2.0, 8, 16, 1.0))
    whole = sample_free(k, 5, 10)
    parts = np.concatenate(list(SampleStream(k, 5, 10).batches(3)))
    np.testing.assert_array_equal(whole, parts)
    np.testing.assert_array_equal(sample_free(k, 5, 4, start=6), whole[6:])


def test_fields_are_real_and_finite():
    k = CovKernel(LatticeSpec(1.0, 2.0, 8, 16, 1.0), "finite_difference")
    f = sample_free(k, 0, 4)
    assert f.dtype == float and np.all(np.isfinite(f))


def test_mean_is_zero(setup):
    _, _, vals = setup
    for i in range(vals.shape[1]):
        assert mean_estimate(vals[:, i]).pull(0.0) < 4


def test_second_moment_matches_quadratic_form(setup):
    kernel, fns, vals = setup
    for i, f in enumerate(fns):
        assert mc_moment(vals[:, i], 2).pull(quad_C(kernel, f)) < 4


def test_generating_functional(setup):
    kernel, fns, vals = setup
    assert generating_functional_free(kernel, np.zeros(kernel.spec.shape)) == 1.0
    for i, f in enumerate(fns):
        assert mc_generating_functional(vals[:, i]).pull(generating_functional_free(kernel, f)) < 4


def test_higher_moments(setup):
    kernel, fns, vals = setup
    f = fns[0]
    c = quad_C(kernel, f)
    assert moment_free(kernel, f, 3) == 0.0
    assert moment_free(kernel, f, 4) == pytest.approx(3 * c**2, rel=1e-14)
    assert moment_free(kernel, f, 6) == pytest.approx(15 * c**3, rel=1e-14)
    assert mc_moment(vals[:, 0], 6).pull(15 * c**3) < 5
    with pytest.raises(ValueError):
        moment_free(kernel, f, 0)


def test_double_factorial():
    assert [double_factorial(n) for n in range(-1, 8)] == [1, 1, 1, 2, 3, 8, 15, 48, 105]


def test_mode_variance_matches_multiplier():
    k = CovKernel(LatticeSpec(1.0, 2.0, 8, 16, 1.0))
    mean, se = mode_variance(SampleStream(k, 1, 20000).batches(5000), k)
    assert np.max(np.abs(mean - k.multiplier) / se) < 5


def test_characteristic_derivative(setup):
    kernel, fns, vals = setup
    d2 = characteristic_derivative(vals[:, 1], 2, 1e-3)
    assert d2.pull(-quad_C(kernel, fns[1])) < 4
    assert characteristic_derivative(vals[:, 1], 1, 1e-3).pull(0.0) < 4
    with pytest.raises(ValueError):
        characteristic_derivative(vals[:, 1], 3, 1e-3)


def test_weighted_mean_with_flat_weights_is_plain_mean(rng):
    v = rng.standard_normal(1000)
    a = weighted_mean(v, np.zeros(1000))
    b = mean_estimate(v)
    assert a.value == pytest.approx(b.value, rel=1e-12)
    assert a.stderr == pytest.approx(b.stderr, rel=2e-3)
    assert effective_sample_size(np.zeros(1000)) == pytest.approx(1000)


def test_ratio_and_bootstrap(rng):
    a = rng.normal(2.0, 0.1, 4000)
    b = rng.normal(1.0, 0.1, 4000)
    r = ratio_estimate(a, b)
    assert r.pull(2.0) < 4
    boots = bootstrap(lambda idx: a[idx].mean(), a.size, 100, seed=1)
    assert boots.std() == pytest.approx(a.std() / np.sqrt(a.size), rel=0.3)

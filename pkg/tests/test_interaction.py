import numpy as np
import pytest

from thermalphi.covariance import CovKernel
from thermalphi.gaussian import sample_free
from thermalphi.interaction import (InteractionSpec, SamplingError, eval_V0, eval_VC, fkn_weight,
                                    jensen_sides, os_gram_free, os_positivity_gram,
                                    quadratic_exact, sample_interacting, weyl_family)
from thermalphi.lattice import LatticeError, LatticeSpec, pair
from thermalphi.stats import mean_estimate

SPEC = LatticeSpec(1.0, 3.0, 8, 24, 1.0)
KERNEL = CovKernel(SPEC)
PHI4 = InteractionSpec((0.0, 0.0, 0.0, 0.0, 0.1), 2.0)
SQUARE = InteractionSpec((0.0, 0.0, 1.0), 2.0)


def test_rejects_unbounded_polynomials():
    with pytest.raises(LatticeError):
        InteractionSpec((0.0, 0.0, 0.0, 1.0), 1.0)
    with pytest.raises(LatticeError):
        InteractionSpec((0.0, 0.0, 1.0), 0.0)
    with pytest.raises(LatticeError):
        eval_V0(np.zeros(SPEC.shape), 0, KERNEL, InteractionSpec((0, 0, 1), 5.0))


def test_wick_square_is_centred():
    fields = sample_free(KERNEL, 0, 4000)
    assert mean_estimate(eval_V0(fields, 2, KERNEL, SQUARE)).pull(0.0) < 4
    assert mean_estimate(eval_VC(fields, 5, KERNEL, SQUARE)).pull(0.0) < 4


def test_zero_field_quartic():
    c = KERNEL.wick_constant
    v = eval_V0(np.zeros(SPEC.shape), 0, KERNEL, InteractionSpec((0, 0, 0, 0, 1), 2.0))
    assert v == pytest.approx(2 * 2.0 * 3 * c**2, rel=1e-12)


def test_constant_field_square():
    c = KERNEL.wick_constant
    v = eval_VC(np.full(SPEC.shape, 0.7), 3, KERNEL, SQUARE)
    assert v == pytest.approx(SPEC.beta * (0.49 - c), rel=1e-12)


def test_additivity_in_cutoff():
    phi = sample_free(KERNEL, 1, 1)[0]
    small = eval_V0(phi, 1, KERNEL, InteractionSpec(SQUARE.coeffs, 1.0))
    big = eval_V0(phi, 1, KERNEL, InteractionSpec(SQUARE.coeffs, 2.0))
    ring = (np.abs(SPEC.positions) > 1.0) & (np.abs(SPEC.positions) <= 2.0)
    dens = SQUARE.wick_poly(KERNEL)(phi[1, ring])
    assert big - small == pytest.approx(SPEC.a_x * dens.sum(), rel=1e-12)


def test_slice_sum_invariant_under_time_shift():
    phi = sample_free(KERNEL, 2, 1)[0]
    assert eval_VC(np.roll(phi, 3, axis=0), 4, KERNEL, PHI4) == pytest.approx(
        eval_VC(phi, 4, KERNEL, PHI4), rel=1e-13)


def test_nelson_symmetry_per_sample():
    fields = sample_free(KERNEL, 3, 50)
    a = fkn_weight(fields, KERNEL, PHI4, which="time").log_weight
    b = fkn_weight(fields, KERNEL, PHI4, which="space").log_weight
    assert np.abs(a - b).max() < 1e-12


def test_empty_window_has_unit_weight():
    fields = sample_free(KERNEL, 3, 5)
    w = fkn_weight(fields, KERNEL, PHI4, window=(0.5, 0.5), which="space")
    np.testing.assert_array_equal(w.weight, 1.0)
    with pytest.raises(LatticeError):
        fkn_weight(fields, KERNEL, PHI4, window=(0.0, 0.9), which="time")
    with pytest.raises(ValueError):
        fkn_weight(fields, KERNEL, PHI4, which="diagonal")


def test_jensen_bound():
    fields = sample_free(KERNEL, 4, 500)
    g, bound = jensen_sides(fields, KERNEL, PHI4, (-1.0, 1.0))
    assert np.all(g <= bound * (1 + 1e-12))


def test_free_interaction_reduces_to_gaussian():
    ens = sample_interacting(KERNEL, InteractionSpec((0.0,), 1.0), "reweight", 5, 300,
                             {"phi": lambda b: b[:, 0, 0]})
    np.testing.assert_array_equal(ens.log_weights, 0.0)
    np.testing.assert_array_equal(ens.values["phi"], sample_free(KERNEL, 5, 300)[:, 0, 0])
    assert ens.weights.sum() == pytest.approx(1.0, abs=1e-15)


def test_quadratic_interaction_against_exact():
    spec = LatticeSpec(1.0, 2.0, 4, 8, 1.0)
    kernel = CovKernel(spec)
    sigma, l = 0.3, 1.0
    f = np.exp(-spec.positions**2)[None, :] * np.ones((spec.nt, 1))
    z, c2 = quadratic_exact(kernel, sigma, l, f)
    ens = sample_interacting(kernel, InteractionSpec((0.0, 0.0, sigma), l), "reweight", 6, 40000,
                             {"f2": lambda b: pair(b, f, spec) ** 2})
    assert ens.z.pull(z) < 4
    assert ens.mean("f2").pull(c2) < 4


def test_reweight_and_metropolis_agree():
    spec = LatticeSpec(1.0, 1.0, 4, 8, 1.0)
    kernel = CovKernel(spec)
    inter = InteractionSpec((0.0, 0.0, 0.0, 0.0, 0.1), 1.0)
    f = np.ones(spec.shape)
    obs = {"f2": lambda b: pair(b, f, spec) ** 2}
    rw = sample_interacting(kernel, inter, "reweight", 7, 20000, obs).mean("f2")
    mh = sample_interacting(kernel, inter, "metropolis", 7, 8000, obs, burn_in=500, thin=5)
    m = mh.mean("f2")
    assert 0.2 <= mh.acceptance <= 0.8
    assert abs(rw.value - m.value) < 4 * np.hypot(rw.stderr, m.stderr)


def test_degenerate_weights_raise():
    strong = InteractionSpec((0.0, 0.0, 0.0, 0.0, 50.0), 3.0)
    with pytest.raises(SamplingError):
        sample_interacting(KERNEL, strong, "reweight", 0, 200)


def test_os_gram_free_is_positive():
    spec = LatticeSpec(1.0, 4.0, 8, 32, 1.0)
    kernel = CovKernel(spec, "finite_difference")
    r = np.random.default_rng(0)
    ts = [1, 2, 3, 1, 2, 3, 1, 2]
    hs = [np.exp(-(spec.positions - r.uniform(-1, 1)) ** 2) for _ in ts]
    assert os_gram_free(kernel, ts, hs).min_eig >= -1e-10


def test_time_zero_functionals_have_nonnegative_diagonal():
    fields = sample_free(KERNEL, 8, 200)
    hs = [np.exp(-SPEC.positions**2), np.cos(SPEC.positions)]
    f, fr = weyl_family(fields, SPEC, [0, 0], hs)
    g = os_positivity_gram(f, fr, rounds=20)
    assert np.all(np.diag(g.matrix).real >= 0)
    with pytest.raises(ValueError):
        os_positivity_gram(f[:1], fr[:1])

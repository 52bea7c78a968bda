import csv
import math

import numpy as np
import pytest

from thermalphi.covariance import (CovKernel, ThermalKernel, c0_equal_time, c0_kernel,
                                   c0_mollified, cbeta_kernel, line_green_quadrature,
                                   matsubara_identity, quad_C, thermal_closed_form, unit_mode)
from thermalphi.lattice import LatticeError, LatticeSpec


def test_closed_form_values():
    s, c = matsubara_identity(0.0, 1.0, 1.0, 100000)
    assert c == pytest.approx(1.0819767, abs=1e-7)
    assert s == pytest.approx(c, abs=1e-5)
    half = 2 * math.exp(-0.5) / (2 * (1 - math.exp(-1)))
    assert thermal_closed_form(0.5, 1.0, 1.0) == pytest.approx(half, rel=1e-14)
    assert half == pytest.approx(0.959517, abs=1e-6)


def test_closed_form_symmetric_about_half_period():
    t = np.linspace(0, 2.0, 9)
    np.testing.assert_allclose(thermal_closed_form(t, 0.7, 2.0), thermal_closed_form(2.0 - t, 0.7, 2.0),
                               rtol=1e-13)


@pytest.mark.parametrize("N", [10, 100, 1000])
def test_truncation_error_bound(N):
    for beta in (0.5, 1.0, 4.0):
        t = np.linspace(0, beta, 5)[:, None]
        eps = np.array([0.1, 1.0, 5.0])[None, :]
        s, c = matsubara_identity(t, eps, beta, N)
        assert np.all(np.abs(s - c) <= 3 * beta / (2 * np.pi**2 * N))


def test_matsubara_rejects_bad_args():
    with pytest.raises(ValueError):
        matsubara_identity(0.0, -1.0, 1.0, 10)
    with pytest.raises(ValueError):
        matsubara_identity(2.0, 1.0, 1.0, 10)


@pytest.mark.parametrize("scheme", ["continuum", "finite_difference"])
def test_multiplier_bounds_and_symmetry(scheme):
    spec = LatticeSpec(1.0, 3.0, 8, 24, 1.3)
    m = CovKernel(spec, scheme).multiplier
    assert np.all(m > 0) and np.all(m <= 1 / spec.mass**2 + 1e-15)
    flip = m[(-np.arange(spec.nt)) % spec.nt][:, (-np.arange(spec.nx)) % spec.nx]
    np.testing.assert_array_equal(flip, m)


def test_sampled_scheme_is_symmetric_and_positive():
    spec = LatticeSpec(1.0, 3.0, 8, 24, 1.0)
    m = CovKernel(spec, "sampled").multiplier
    assert np.all(m > 0)
    flip = m[(-np.arange(spec.nt)) % spec.nt][:, (-np.arange(spec.nx)) % spec.nx]
    np.testing.assert_allclose(flip, m, rtol=1e-14)


def test_sampled_scheme_tends_to_continuum_on_fine_grid():
    coarse = CovKernel(LatticeSpec(1.0, 4.0, 4, 16, 1.0), "sampled").multiplier[0, 1]
    fine = CovKernel(LatticeSpec(1.0, 4.0, 4, 1024, 1.0), "sampled").multiplier[0, 1]
    exact = 1 / ((np.pi / 4.0) ** 2 + 1.0)
    assert abs(fine - exact) < abs(coarse - exact)
    assert fine == pytest.approx(exact, rel=1e-4)


def test_time_cutoff_zeroes_high_modes():
    spec = LatticeSpec(1.0, 3.0, 8, 24, 1.0)
    k = CovKernel(spec, "continuum", time_cutoff=1)
    kept = np.abs(spec.mode_index_t) <= 1
    assert np.all(k.multiplier[~kept] == 0)
    assert np.all(k.multiplier[kept] > 0)
    with pytest.raises(LatticeError):
        CovKernel(spec, time_cutoff=4)
    with pytest.raises(LatticeError):
        CovKernel(spec, "spline")


def test_quad_C_on_unit_modes():
    spec = LatticeSpec(2.0, 3.0, 8, 24, 1.0)
    k = CovKernel(spec)
    assert quad_C(k, np.zeros(spec.shape)) == 0.0
    for n, j in [(0, 0), (1, 2), (3, 5)]:
        f = unit_mode(spec, n, j)
        expect = 1 / ((2 * np.pi * n / spec.beta) ** 2 + (spec.dp * j) ** 2 + spec.mass**2)
        assert quad_C(k, f) == pytest.approx(expect, rel=1e-12)


def test_quad_C_positive_and_symmetric(rng):
    spec = LatticeSpec(1.0, 3.0, 8, 24, 1.0)
    k = CovKernel(spec, "finite_difference")
    f, g = rng.standard_normal((2, *spec.shape))
    assert quad_C(k, f) > 0
    assert quad_C(k, f, g) == pytest.approx(quad_C(k, g, f), rel=1e-12)


def test_wick_constant_is_site_variance():
    spec = LatticeSpec(1.0, 3.0, 8, 24, 1.0)
    k = CovKernel(spec, "sampled")
    assert k.wick_constant == pytest.approx(k.site_covariance[0, 0], rel=1e-12)


def test_sharp_time_kernel_examples():
    spec = LatticeSpec(1.0, 4.0, 8, 32, 1.0)
    h = np.full(spec.nx, 1 / math.sqrt(2 * spec.length))  # only p = 0, unit norm
    assert c0_kernel(spec, 0.3, 0.3, h, h) == pytest.approx(1.0819767, abs=1e-7)
    cold = LatticeSpec(50.0, 4.0, 8, 32, 1.0)
    assert c0_kernel(cold, 0.0, 0.0, h, h) == pytest.approx(0.5, abs=1e-10)


def test_thermal_identity_bose_factor(rng):
    spec = LatticeSpec(1.5, 4.0, 8, 32, 0.8)
    h1, h2 = rng.standard_normal((2, spec.nx))
    assert c0_kernel(spec, 0.2, 0.2, h1, h2) == pytest.approx(c0_equal_time(spec, h1, h2), abs=1e-14)
    th = ThermalKernel(spec)
    np.testing.assert_allclose(th.rho, 1 / (np.exp(spec.beta * th.epsilon) - 1), rtol=1e-13)


def test_mollified_kernel_approaches_sharp_kernel():
    spec = LatticeSpec(1.0, 4.0, 8, 32, 1.0)
    h = np.exp(-spec.positions**2)
    exact = c0_kernel(spec, 0.25, 0.0, h, h)
    gaps = [abs(c0_mollified(spec, 0.25, h, h, k) - exact) for k in (100, 1000, 10000)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-5


def test_sharp_space_kernel_examples():
    spec = LatticeSpec(1.0, 4.0, 8, 32, 1.0)
    g = np.full(spec.nt, 1 / math.sqrt(spec.beta))  # only n = 0, b = m = 1
    assert cbeta_kernel(spec, 0.4, 0.4, g, g) == pytest.approx(0.5, abs=1e-14)
    assert cbeta_kernel(spec, 0.0, 3.0, g, g) == pytest.approx(0.5 * math.exp(-3), rel=1e-13)
    assert line_green_quadrature(1.0, 1.0) == pytest.approx(math.exp(-1) / 2, abs=1e-6)
    assert line_green_quadrature(0.0, 2.0) == pytest.approx(0.25, abs=1e-10)


def test_multiplier_csv(tmp_path):
    spec = LatticeSpec(1.0, 2.0, 4, 4, 1.0)
    k = CovKernel(spec)
    k.to_csv(tmp_path / "k.csv")
    rows = list(csv.reader(open(tmp_path / "k.csv")))
    assert rows[0] == ["n", "j", "multiplier"]
    assert len(rows) == 1 + spec.nt * spec.nx

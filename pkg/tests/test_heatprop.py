import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.linalg import expm

from thermalphi.fock import FockBasisSpec, FockSpace, build_HC
from thermalphi.heatprop import (FieldDrive, MatrixDrive, PropagatorError, PropagatorProblem,
                                 ZeroDrive, clustering_bound, growth_exponent, lambda_derivatives,
                                 ordered_integrals, renormalized_problem, solve_U, trotter_U,
                                 vacuum_expectation, w_matrix_element)
from thermalphi.lattice import Profile, ProfileTerm

PROFILE = Profile((ProfileTerm({0: 0.8, 1: 0.3 + 0.2j}, 1.0, 0.0, 0.3),))


@pytest.fixture(scope="module")
def fock_problem():
    space = FockSpace(FockBasisSpec(1.0, 1.0, 1, 5))
    H = build_HC(space, (0, 0, 0, 0, 0.1))
    problem, e0 = renormalized_problem(H, space, PROFILE)
    return space, problem


def test_identity_at_equal_times(fock_problem):
    _, problem = fock_problem
    assert np.array_equal(solve_U(problem, 0.2, 0.2).U, np.eye(problem.dim))
    with pytest.raises(PropagatorError):
        solve_U(problem, 1.0, 0.0)


def test_free_evolution_is_matrix_exponential(fock_problem):
    _, problem = fock_problem
    free = problem.with_drive(ZeroDrive(problem.dim))
    ref = expm(-1.3 * problem.H.toarray())
    assert np.abs(solve_U(free, -0.4, 0.9).U - ref).max() < 1e-8
    assert np.abs(trotter_U(free, -0.4, 0.9, 1, 1).U - ref).max() < 1e-10


def test_cocycle(fock_problem, rng):
    _, problem = fock_problem
    s, r, t = np.sort(rng.uniform(-1.5, 1.5, 3))
    whole = solve_U(problem, s, t).U
    split = solve_U(problem, r, t).U @ solve_U(problem, s, r).U
    assert np.linalg.norm(whole - split, 2) < 1e-8


def test_contraction(fock_problem):
    _, problem = fock_problem
    lo, hi = problem.R.support()
    assert np.linalg.svd(solve_U(problem, lo, hi).U, compute_uv=False).max() <= 1 + 1e-10
    for n, p in [(1, 1), (4, 2), (16, 1)]:
        assert np.linalg.svd(trotter_U(problem, lo, hi, n, p).U, compute_uv=False).max() <= 1 + 1e-10


def test_trotter_converges(fock_problem):
    _, problem = fock_problem
    lo, hi = problem.R.support()
    exact = solve_U(problem, lo, hi, rtol=1e-12, atol=1e-14).U
    errs = [np.linalg.norm(trotter_U(problem, lo, hi, n).U - exact, 2) for n in (8, 16, 32)]
    assert errs[0] > errs[1] > errs[2]


def test_zero_profile_gives_free_semigroup(fock_problem):
    space, problem = fock_problem
    zero = problem.with_drive(ZeroDrive(problem.dim))
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal((2, problem.dim))
    got = w_matrix_element(zero, -0.5, 0.5, u, v)
    ref = np.vdot(u, expm(-problem.H.toarray()) @ v)
    assert got == pytest.approx(ref, abs=1e-9)


def test_vacuum_element_is_stable_and_bounded(fock_problem):
    _, problem = fock_problem
    lo, hi = problem.R.support()
    a = vacuum_expectation(problem, interval=(lo, hi))
    b = vacuum_expectation(problem, interval=(lo - 1, hi + 1))
    assert abs(a - b) < 1e-8
    assert abs(a) <= 1 + 1e-12


def test_first_derivative_is_mean_field():
    # an odd term in P gives the ground state a nonzero field expectation
    space = FockSpace(FockBasisSpec(1.0, 1.0, 1, 5))
    problem, _ = renormalized_problem(build_HC(space, (0, 0.2, 0, 0, 0.1)), space, PROFILE)
    omega = problem.ground_vector()
    xs = np.linspace(*problem.R.support(), 2001)
    vals = [np.vdot(omega, problem.R.apply(x, omega.astype(complex))) for x in xs]
    expect = -1j * trapezoid(vals, xs)
    got = lambda_derivatives(problem, 1)
    assert got == pytest.approx(expect, rel=1e-6, abs=1e-10)
    fd = lambda_derivatives(problem, 1, method="fd")
    assert abs(got - fd) / abs(fd) < 1e-4


def test_second_derivative_is_even_in_profile(fock_problem):
    space, problem = fock_problem
    flipped = problem.with_drive(FieldDrive(space, PROFILE.scaled(-1.0)))
    a, b = lambda_derivatives(problem, 2), lambda_derivatives(flipped, 2)
    assert a == pytest.approx(b, rel=1e-10)
    assert abs(a - lambda_derivatives(problem, 2, method="fd")) / abs(a) < 1e-4


def test_moment_identity_two_routes(fock_problem):
    _, problem = fock_problem
    via_integral = 2 * ordered_integrals(problem, 2)[-1]
    via_derivative = -lambda_derivatives(problem, 2, method="fd")
    assert abs(via_integral - via_derivative) < 1e-6
    with pytest.raises(PropagatorError):
        ordered_integrals(problem, 4)


def _three_level(a=0.7):
    H = np.diag([0.0, a, 2 * a])
    M = np.array([[0.0, 1.0, 0.2], [1.0, 0.5, 1.0], [0.2, 1.0, 0.0]])
    env = lambda x: 0.5 * np.exp(-x**2 / 0.08) if abs(x) <= 1.0 else 0.0
    return PropagatorProblem(H, MatrixDrive(M, env, (-1.0, 1.0))), a


def test_clustering_vanishes_without_second_drive():
    problem, a = _three_level()
    pts = clustering_bound(problem, problem.R, ZeroDrive(3), 1.0, [2.5, 4.0], a)
    assert all(p.lhs < 1e-14 for p in pts)
    with pytest.raises(PropagatorError):
        clustering_bound(problem, problem.R, problem.R, 1.0, [1.5], a)
    with pytest.raises(PropagatorError):
        clustering_bound(problem, problem.R, problem.R, 1.0, [3.0], 0.0)


def test_clustering_rate_on_three_levels():
    problem, a = _three_level()
    ts = [3.0, 4.0, 5.0, 6.0, 7.0]
    pts = clustering_bound(problem, problem.R, problem.R, 1.0, ts, a)
    assert all(p.holds for p in pts)
    slope = -np.polyfit(ts, np.log([p.lhs for p in pts]), 1)[0]
    assert slope == pytest.approx(a, rel=0.1)


def test_clustering_rate_on_fock_problem(fock_problem):
    _, problem = fock_problem
    gap = float(np.sort(problem.eig.eigenvalues)[1])
    T = PROFILE.support_radius()
    ts = [2 * T + d for d in (1.0, 2.0, 3.0, 4.0)]
    pts = clustering_bound(problem, problem.R, problem.R, T, ts, gap)
    assert all(p.holds for p in pts)
    slope = -np.polyfit(ts, np.log([p.lhs for p in pts]), 1)[0]
    assert slope >= 0.8 * gap


def test_growth_exponent_is_at_most_two():
    problem, _ = _three_level()
    assert growth_exponent(problem, [1.0, 2.0, 4.0, 8.0]) <= 2.2

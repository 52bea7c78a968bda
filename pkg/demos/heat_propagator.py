"""Driven heat propagator on a truncated Fock space.

Shows the contraction property, the first-order convergence of the ordered
product, the clustering bound against the spectral gap and the coupling
derivatives computed two ways.

Run: python demos/heat_propagator.py
"""
import numpy as np

from thermalphi.fock import FockBasisSpec, FockSpace, build_HC
from thermalphi.heatprop import (FieldDrive, clustering_bound, lambda_derivatives,
                                 renormalized_problem, solve_U, trotter_U)
from thermalphi.lattice import Profile, ProfileTerm

space = FockSpace(FockBasisSpec(beta=1.0, mass=1.0, mode_cutoff=1, occupation_cap=6))
H = build_HC(space, (0.0, 0.2, 0.0, 0.0, 0.1))
profile = Profile((ProfileTerm({0: 0.8, 1: 0.3 + 0.2j}, 1.0, 0.0, 0.3),))
problem, e0 = renormalized_problem(H, space, profile)
gap = float(np.sort(problem.eig.eigenvalues)[1])
lo, hi = problem.R.support()
print(f"dimension {space.dim}, E_C = {e0:.6f}, gap = {gap:.4f}, drive on [{lo:.2f}, {hi:.2f}]")

U = solve_U(problem, lo, hi).U
print(f"largest singular value of U: {np.linalg.svd(U, compute_uv=False).max():.12f}")

exact = solve_U(problem, 0.0, hi, rtol=1e-12, atol=1e-14).U
prev = None
for n in (8, 16, 32, 64):
    err = np.linalg.norm(trotter_U(problem, 0.0, hi, n).U - exact, 2)
    ratio = "" if prev is None else f"  ratio {prev / err:.2f}"
    print(f"ordered product n={n:3d}: error {err:.3e}{ratio}")
    prev = err

R = FieldDrive(space, profile)
T = profile.support_radius()
for p in clustering_bound(problem, R, R, T, [2 * T + d for d in (1, 2, 4)], gap):
    print(f"t={p.t:6.2f}  connected {p.lhs:.3e}  bound {p.bound:.3e}")

for order in (1, 2):
    q = lambda_derivatives(problem, order)
    d = lambda_derivatives(problem, order, method="fd")
    print(f"d^{order}/dlam^{order}: ordered integral {q:.8f}  finite difference {d:.8f}")

"""Free thermal field on a small cylinder: Matsubara sums, samples and moments.

Run: python demos/free_field_tour.py
"""
import numpy as np

from thermalphi.covariance import CovKernel, matsubara_identity, quad_C
from thermalphi.gaussian import moment_free, stream_pairings
from thermalphi.lattice import LatticeSpec
from thermalphi.stats import mean_estimate

# The thermal propagator at equal times, truncated and closed form
for N in (10, 100, 1000):
    s, c = matsubara_identity(0.0, 1.0, 1.0, N)
    print(f"N={N:5d}  truncated={s:.8f}  closed={c:.8f}  gap={abs(s - c):.2e}")

spec = LatticeSpec(beta=1.0, length=3.0, nt=16, nx=48, mass=1.0)
kernel = CovKernel(spec)
print(f"\nlattice {spec.nt}x{spec.nx}, site variance {kernel.wick_constant:.5f}")

t, x = spec.times[:, None], spec.positions[None, :]
f = np.exp(-x**2 / 0.5) * (1 + 0.3 * np.cos(2 * np.pi * t))
c_ff = quad_C(kernel, f)
vals = stream_pairings(kernel, seed=1, n=40000, fns=[f])[:, 0]

print(f"C(f,f) = {c_ff:.6f}")
for p in (2, 3, 4, 6):
    est = mean_estimate(vals**p)
    exact = moment_free(kernel, f, p)
    print(f"E[phi(f)^{p}] = {est}   exact {exact:.6f}   pull {est.pull(exact):.2f}")

gf = mean_estimate(np.cos(vals))
print(f"E[exp(i phi(f))] = {gf}   exact {np.exp(-c_ff / 2):.6f}")

"""Reflection positivity, beta periodicity and spatial clustering of lambda phi^4 samples.

Run: python demos/euclidean_structure.py [samples]
"""
import sys

import numpy as np

from thermalphi.covariance import CovKernel
from thermalphi.interaction import (InteractionSpec, os_gram_free, os_positivity_gram,
                                    sample_interacting, weyl_family)
from thermalphi.lattice import LatticeSpec
from thermalphi.schwinger import clustering_check, fit_decay_rate, kms_reflection_check

n = int(sys.argv[1]) if len(sys.argv) > 1 else 10000
spec = LatticeSpec(beta=1.0, length=4.0, nt=8, nx=32, mass=1.0)
kernel = CovKernel(spec, "finite_difference")
quartic = InteractionSpec((0.0, 0.0, 0.0, 0.0, 0.1), 2.0)

rng = np.random.default_rng(5)
ts = [1, 2, 3, 1, 2, 3]
hs = [np.exp(-(spec.positions - rng.uniform(-1, 1)) ** 2 / 0.3) for _ in ts]
print(f"free Gram matrix, smallest eigenvalue {os_gram_free(kernel, ts, hs).min_eig:.3e}")
ens = sample_interacting(kernel, quartic, "reweight", 0, n,
                         {"f": lambda b: weyl_family(b, spec, ts, hs)[0],
                          "fr": lambda b: weyl_family(b, spec, ts, hs)[1]})
g = os_positivity_gram(ens.values["f"], ens.values["fr"], ens.log_weights)
print(f"interacting Gram matrix, smallest eigenvalue {g.min_eig:.3e} +- {g.stderr:.1e}"
      f" (ESS {ens.ess:.0f} of {n})")

h = np.exp(-spec.positions**2 / 0.5)
for row in kms_reflection_check(CovKernel(spec), quartic, [1, 2, 3], h, n, seed=1):
    print(f"S(t) - S(beta - t) at t={row['t']:.3f}: {row['diff']:+.2e} +- {row['stderr']:.1e}")

wide = LatticeSpec(beta=1.0, length=6.0, nt=8, nx=120, mass=1.0)
res = clustering_check(CovKernel(wide), InteractionSpec(quartic.coeffs, 6.0), np.ones(wide.nt),
                       np.exp(-wide.positions**2 / 0.18), list(range(5, 41, 5)), n=n, seed=2)
for row in res["rows"]:
    print(f"x={row['x']:.1f}  connected {row['connected']:.3e} +- {row['stderr']:.1e}")
print(f"fitted decay rate {fit_decay_rate(res['rows']):.3f}")

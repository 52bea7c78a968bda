"""One line per acceptance criterion, at the stated tolerances.

The PASS/FAIL lines are repeated in the terminal summary of every pytest run; the
``--scale`` option shrinks Monte Carlo sample counts for a quick look (tolerances
are unchanged, so small scales can fail on statistics alone).
"""
import pytest

from thermalphi.suites import ACCEPTANCE, SUITES

TITLES = {
    "matsubara": "truncated Matsubara sums within 3 beta / (2 pi^2 N)",
    "gaussian": "per-mode variances and Gaussian moments of the free sampler",
    "wick": "exact Wick reorder round trips, centering and pairing",
    "nelson": "time- and space-sliced interaction agree per sample",
    "heat": "heat propagator identities and Trotter order",
    "crosscheck": "lattice generating functional against the operator matrix element",
    "moments": "second moment against ordered operator integrals",
    "os": "reflection positivity of Weyl Gram matrices",
    "kms": "sharp-time kernel and beta-reflection symmetry",
    "clustering": "clustering bound and lattice decay rate against the gap",
    "derivatives": "coupling derivatives: quadrature against finite differences",
}


def _line(number, res):
    verdict = "PASS" if res.passed else "FAIL"
    ok = sum(c.passed for c in res.checks)
    tail = f" failing: {', '.join(res.failures())}" if res.failures() else ""
    return (f"{verdict} criterion {number}: {TITLES[res.name]} "
            f"({ok}/{len(res.checks)} checks, {res.seconds:.1f}s){tail}")


@pytest.mark.slow
@pytest.mark.parametrize("number,name", list(enumerate(ACCEPTANCE, start=1)), ids=ACCEPTANCE)
def test_criterion(number, name, scale, acceptance_lines):
    res = SUITES[name](seed=0, scale=scale)
    line = _line(number, res)
    print(line)
    acceptance_lines.append(line)
    assert res.passed, f"criterion {number} failed: {res.failures()}"

"""Lattice path integrals against circle-Hamiltonian matrix elements.

The lattice side samples the thermal cylinder; the operator side propagates along
the spatial axis with the circle Hamiltonian H_C = dGamma(b) + V_C. For a test
function supported in |x| <= a < l,

    int e^{i phi(f)} G_[-l,l] dphi_C
        = e^{-2 l E_C} (e^{-(l-a) H_ren} Omega, W_[-a,a](f) e^{-(l-a) H_ren} Omega),

and as l grows the normalized left side tends to (Omega_C, W(f) Omega_C).

Matched truncation: the lattice keeps exactly the Matsubara modes |n| <= K of the
Fock space (covariance ``time_cutoff=K``) and uses at least deg(P) K + 1 time
sites so the time integral of :P(phi): is exact on those modes.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .covariance import CovKernel, c0_kernel, c0_mollified, quad_C
from .fock import FockBasisSpec, FockSpace, build_HC, sector_eigh
from .gaussian import sample_free
from .heatprop import (FieldDrive, PropagatorProblem, ZeroDrive, _exp_weights,
                       renormalized_problem, solve_U)
from .interaction import (InteractionSpec, WeightedEnsemble, fkn_weight,
                          sample_interacting)
from .lattice import LatticeError, LatticeSpec, Profile, pair
from .stats import Estimate, mean_estimate, ratio_estimate, weighted_mean


class CrosscheckError(ValueError):
    pass


@dataclass(frozen=True)
class MatchedSetup:
    """A lattice and a Fock space that keep the same circle modes."""
    beta: float
    mass: float
    K: int
    n_max: int
    length: float
    a_x: float
    coeffs: tuple = (0.0,)
    scheme: str = "sampled"
    nt: int | None = None

    @property
    def degree(self) -> int:
        return max(len(self.coeffs) - 1, 2)

    @property
    def lattice(self) -> LatticeSpec:
        nt = self.nt or _even_at_least(self.degree * self.K + 1, 4)
        nx = int(round(2 * self.length / self.a_x))
        nx += nx % 2
        return LatticeSpec(self.beta, self.length, nt, nx, self.mass)

    @property
    def kernel(self) -> CovKernel:
        return CovKernel(self.lattice, self.scheme, time_cutoff=self.K)

    @property
    def fock_spec(self) -> FockBasisSpec:
        return FockBasisSpec(self.beta, self.mass, self.K, self.n_max)

    def interaction(self, l: float) -> InteractionSpec:
        return InteractionSpec(tuple(self.coeffs), l)

    def check(self):
        k = self.kernel
        if k.time_cutoff != self.fock_spec.mode_cutoff:
            raise CrosscheckError("truncation mismatch between lattice and Fock space")
        if self.lattice.nt <= self.degree * self.K:
            raise CrosscheckError("too few time sites for an exact time integral of :P:")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coeffs"] = list(self.coeffs)
        d["lattice"] = self.lattice.to_dict()
        d["fock_dimension"] = self.fock_spec.dimension
        return d


def _even_at_least(n: int, lo: int) -> int:
    n = max(n, lo)
    return n + (n % 2)


@dataclass
class CrosscheckReport:
    name: str
    lattice_value: float
    lattice_stderr: float
    fock_value: float
    pulls: float
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def passed(self, max_pull: float = 4.0, abs_tol: float | None = None) -> bool:
        if abs_tol is not None:
            return abs(self.lattice_value - self.fock_value) < abs_tol
        return self.pulls < max_pull

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lattice_value, "lhs_stderr": self.lattice_stderr,
                "rhs": self.fock_value, "pulls": self.pulls, "config": self.config, **self.extra}


class OperatorSide:
    """H_C, its renormalized propagator problem and the ground state for one setup."""

    def __init__(self, setup: MatchedSetup, profile: Profile | None = None):
        self.setup = setup
        self.space = FockSpace(setup.fock_spec)
        self.H = build_HC(self.space, setup.coeffs)
        self.problem, self.E_C = renormalized_problem(self.H, self.space, profile)
        ev = np.sort(self.problem.eig.eigenvalues)
        self.gap = float(ev[1] - ev[0])
        self.omega_C = self.problem.ground_vector()

    def with_profile(self, profile: Profile) -> PropagatorProblem:
        return self.problem.with_drive(FieldDrive(self.space, profile))

    def vacuum_prepared(self, depth: float) -> np.ndarray:
        """e^{-depth H_ren} applied to the free vacuum."""
        return self.problem.eig.expm_apply(depth, self.space.vacuum())

    def matrix_element(self, profile: Profile, l: float, rtol=1e-11, atol=1e-13) -> complex:
        """e^{-2 l E_C} (psi, W_[-a,a](f) psi), psi = e^{-(l-a) H_ren} Omega."""
        a = min(profile.support_radius(), l)
        psi = self.vacuum_prepared(l - a).astype(complex)
        prob = self.with_profile(profile)
        u = solve_U(prob, -a, a, psi=psi, rtol=rtol, atol=atol).U
        return complex(np.conj(np.vdot(psi, u)) * math.exp(-2 * l * self.E_C))

    def normalized_element(self, profile: Profile, l: float | None = None, **kw) -> complex:
        """(psi, W psi)/(psi, e^{-2a H_ren} psi); psi = Omega_C when l is None."""
        a = profile.support_radius()
        if l is not None:
            a = min(a, l)
            psi = self.vacuum_prepared(l - a).astype(complex)
        else:
            psi = self.omega_C.astype(complex)
        prob = self.with_profile(profile)
        u = solve_U(prob, -a, a, psi=psi, rtol=kw.get("rtol", 1e-11), atol=kw.get("atol", 1e-13)).U
        norm = np.vdot(psi, self.problem.eig.expm_apply(2 * a, psi))
        return complex(np.conj(np.vdot(psi, u)) / norm)

    def moments(self, profile: Profile, order: int, l: float | None = None,
                grid_points: int = 801) -> np.ndarray:
        """E[phi(f)^j] for j = 1..order under mu_l (l given) or the limit measure."""
        a = profile.support_radius()
        if l is not None:
            a = min(a, l)
            psi = self.vacuum_prepared(l - a)
        else:
            psi = self.omega_C
        prob = self.with_profile(profile)
        ints, norm = ordered_between(prob, order, psi, psi, (-a, a), grid_points)
        return np.array([math.factorial(j + 1) * ints[j] / norm for j in range(order)]).real


def ordered_between(problem: PropagatorProblem, order: int, left: np.ndarray, right: np.ndarray,
                    interval: tuple, grid_points: int = 801):
    """Ordered integrals (left, e^{-(b-x_n)H} R(x_n) ... R(x_1) e^{-(x_1-a)H} right) and the norm.

    Returns ([I_1, ..., I_order], (left, e^{-(b-a)H} right)).
    """
    if order > 3:
        raise CrosscheckError("moment formula evaluated only up to order 3")
    lo, hi = interval
    xs = np.linspace(lo, hi, grid_points)
    h = xs[1] - xs[0]
    eig = problem.eig
    E = np.maximum(np.asarray(eig.eigenvalues, float), 0.0)
    decay = np.exp(-E * h)
    W_mid = _exp_weights(E, h, np.array([-h, 0.0, h, 2 * h]))
    W_first = _exp_weights(E, h, np.array([0.0, h, 2 * h, 3 * h]))
    W_last = _exp_weights(E, h, np.array([-2 * h, -h, 0.0, h]))
    c_right = eig.to_eig(np.asarray(right, float))
    c_left = eig.to_eig(np.asarray(left, float))
    M = len(xs)
    Y = np.exp(-np.outer(xs - lo, E)) * c_right  # eigen coords of Y_0(x)
    norm = float(np.dot(c_left, Y[-1]))
    out = []
    for _ in range(order):
        g = np.array([eig.to_eig(problem.R.apply(x, eig.from_eig(Y[i])))
                      for i, x in enumerate(xs)])
        Y = np.zeros_like(g)
        for i in range(M - 1):
            if i == 0:
                idx, W = [0, 1, 2, 3], W_first
            elif i == M - 2:
                idx, W = [i - 2, i - 1, i, i + 1], W_last
            else:
                idx, W = [i - 1, i, i + 1, i + 2], W_mid
            Y[i + 1] = decay * Y[i] + np.einsum("mk,mk->k", W, g[idx])
        out.append(complex(np.dot(c_left, Y[-1])))
    return out, norm


# ---------------------------------------------------------------- checks

def generating_functional_crosscheck(setup: MatchedSetup, profile: Profile, l: float, n: int = 100000,
                 seed: int = 0, exact_gaussian: bool = False, operator: OperatorSide | None = None,
                 batch_size: int = 500) -> CrosscheckReport:
    """Both sides of the lattice/operator identity for one test function."""
    setup.check()
    kernel = setup.kernel
    spec = kernel.spec
    if profile.max_mode > setup.K:
        raise CrosscheckError("test function has modes beyond the common cutoff")
    f = profile.on_lattice(spec)
    op = operator or OperatorSide(setup)
    rhs = op.matrix_element(profile, l)
    free = all(c == 0 for c in setup.coeffs)
    if exact_gaussian:
        if not free:
            raise CrosscheckError("exact Gaussian evaluation only for P = 0")
        lhs = math.exp(-0.5 * quad_C(kernel, f))
        return CrosscheckReport("generating-functional-free", lhs, 0.0, rhs.real, 0.0, setup.to_dict(),
                                {"abs_diff": abs(lhs - rhs.real), "rhs_imag": rhs.imag})
    inter = setup.interaction(l)
    vals = np.empty(n)
    i = 0
    while i < n:
        k = min(batch_size, n - i)
        batch = sample_free(kernel, seed, k, start=i)
        lw = 0.0 if free else fkn_weight(batch, kernel, inter).log_weight
        vals[i:i + k] = np.cos(pair(batch, f, spec)) * np.exp(lw)
        i += k
    est = mean_estimate(vals, seed)
    return CrosscheckReport("generating-functional", est.value, est.stderr, rhs.real, est.pull(rhs.real),
                            setup.to_dict(), {"E_C": op.E_C, "gap": op.gap, "a": min(profile.support_radius(), l)})


def thermo_limit_scan(setup: MatchedSetup, profile: Profile, l_list: Sequence[float],
                      n: int = 20000, seed: int = 0, operator: OperatorSide | None = None) -> dict:
    """Normalized generating functional under mu_l for each l, and the operator limit."""
    op = operator or OperatorSide(setup)
    kernel = setup.kernel
    spec = kernel.spec
    f = profile.on_lattice(spec)
    limit = op.normalized_element(profile).real
    rows = []
    for l in l_list:
        fock_l = op.normalized_element(profile, l).real
        ens = sample_interacting(kernel, setup.interaction(l), "reweight", seed, n,
                                 {"cos": lambda b: np.cos(pair(b, f, spec))})
        est = ens.mean("cos")
        rows.append({"l": l, "value": est.value, "stderr": est.stderr, "fock_l": fock_l,
                     "residual": abs(fock_l - limit), "pulls": est.pull(fock_l)})
    return {"limit": limit, "gap": op.gap, "rows": rows}


def moment_formula_check(setup: MatchedSetup, profile: Profile, order: int, l: float,
                         n: int = 100000, seed: int = 0, operator: OperatorSide | None = None,
                         batch_size: int = 500) -> CrosscheckReport:
    """MC moment E_mu_l[phi(f)^n] against n! times the ordered operator integral."""
    if order > 3:
        raise CrosscheckError("moment formula evaluated only up to order 3")
    op = operator or OperatorSide(setup)
    kernel = setup.kernel
    spec = kernel.spec
    f = profile.on_lattice(spec)
    limit = op.moments(profile, order)[-1]
    finite = op.moments(profile, order, l)[-1]
    inter = setup.interaction(l)
    free = inter.is_free
    num = np.empty(n)
    den = np.empty(n)
    i = 0
    while i < n:
        k = min(batch_size, n - i)
        batch = sample_free(kernel, seed, k, start=i)
        w = np.ones(k) if free else np.exp(fkn_weight(batch, kernel, inter).log_weight)
        num[i:i + k] = pair(batch, f, spec) ** order * w
        den[i:i + k] = w
        i += k
    est = ratio_estimate(num, den, seed)
    return CrosscheckReport(f"moment-{order}", est.value, est.stderr, limit, est.pull(limit),
                            setup.to_dict(), {"fock_finite_l": finite, "pulls_finite_l": est.pull(finite),
                                              "gap": op.gap})


# ---------------------------------------------------------------- sharp-time functions

def free_sharp_time(spec: LatticeSpec, t: float, h1, h2=None, k: int = 2**20) -> dict:
    """Free sharp-time two-point function: mollified pairing at cutoff k against the closed kernel."""
    h2 = h1 if h2 is None else h2
    exact = c0_kernel(spec, t, 0.0, h1, h2)
    moll = c0_mollified(spec, t, h1, h2, k)
    return {"t": t, "mollified": moll, "kernel": exact, "abs_diff": abs(moll - exact)}


def sharp_time_schwinger(kernel: CovKernel, interaction: InteractionSpec | None, t_indices,
                         h, n: int = 20000, seed: int = 0, average: bool = True) -> list:
    """S(t) = E_mu[phi(0, h) phi(t, h)] on lattice times, with standard errors.

    With ``average`` the product is averaged over base times (time-shift invariance).
    """
    spec = kernel.spec
    h = np.asarray(h, float)
    t_indices = list(t_indices)

    def obs(batch):
        s = spec.a_x * batch @ h  # (b, nt)
        if average:
            return np.stack([np.mean(s * np.roll(s, -k, axis=1), axis=1) for k in t_indices], axis=1)
        return np.stack([s[:, 0] * s[:, k] for k in t_indices], axis=1)

    vals, ens = _ensemble_values(kernel, interaction, obs, n, seed)
    rows = []
    for c, k in enumerate(t_indices):
        e = ens.mean(vals[:, c]) if ens is not None else mean_estimate(vals[:, c], seed)
        rows.append({"t": float(k * spec.a_t), "value": e.value, "stderr": e.stderr})
    return rows


def kms_reflection_check(kernel: CovKernel, interaction: InteractionSpec | None, t_indices, h,
                         n: int = 20000, seed: int = 0) -> list:
    """Paired estimate of S(t) - S(beta - t) with base time 0 (zero by beta-periodicity and reflection)."""
    spec = kernel.spec
    h = np.asarray(h, float)

    def obs(batch):
        s = spec.a_x * batch @ h
        return np.stack([s[:, 0] * (s[:, k] - s[:, (-k) % spec.nt]) for k in t_indices], axis=1)

    vals, ens = _ensemble_values(kernel, interaction, obs, n, seed)
    rows = []
    for c, k in enumerate(t_indices):
        e = ens.mean(vals[:, c]) if ens is not None else mean_estimate(vals[:, c], seed)
        rows.append({"t": float(k * spec.a_t), "diff": e.value, "stderr": e.stderr,
                     "pulls": e.pull(0.0)})
    return rows


def mollifier_gaps(kernel: CovKernel, h, ks: Sequence[int]) -> np.ndarray:
    """E[(phi(delta_k x h) - phi(delta_2k x h))^2] for the free field, exactly."""
    from .lattice import make_mollifier
    spec = kernel.spec
    out = []
    for k in ks:
        d = make_mollifier(spec, "time", k, 0.0, h).data - make_mollifier(spec, "time", 2 * k, 0.0, h).data
        out.append(quad_C(kernel, d))
    return np.array(out)


def _ensemble_values(kernel, interaction, obs, n, seed):
    if interaction is None or interaction.is_free:
        parts = []
        i = 0
        while i < n:
            k = min(1000, n - i)
            parts.append(obs(sample_free(kernel, seed, k, start=i)))
            i += k
        return np.concatenate(parts), None
    ens = sample_interacting(kernel, interaction, "reweight", seed, n, {"v": obs})
    return ens.values["v"], ens


def euclidean_green(kernel: CovKernel, interaction: InteractionSpec | None,
                    A_list: Sequence[Callable], s_list: Sequence[int], n: int = 20000,
                    seed: int = 0) -> Estimate:
    """E_mu[prod_i A_i(phi(s_i, .))] for functionals A_i of a time slice, s_i lattice time indices."""
    if len(A_list) != len(s_list):
        raise ValueError("need one time per functional")
    if any(b < a for a, b in zip(s_list, s_list[1:])):
        raise ValueError("times must be ordered")
    if not A_list:
        return Estimate(1.0, 0.0, n, seed)

    def obs(batch):
        out = np.ones(len(batch))
        for A, s in zip(A_list, s_list):
            out = out * A(batch[:, s, :])
        return out

    vals, ens = _ensemble_values(kernel, interaction, obs, n, seed)
    return ens.mean(vals) if ens is not None else mean_estimate(vals, seed)


# ---------------------------------------------------------------- clustering

def clustering_check(kernel: CovKernel, interaction: InteractionSpec | None, g, h, shifts: Sequence[int],
                     kind: str = "linear", n: int = 20000, seed: int = 0) -> dict:
    """Connected correlator of A = F(phi(g x h)) and B = A shifted by x, averaged over translations.

    ``kind="linear"`` uses F = identity, ``kind="weyl"`` uses F = exp(i .). Shifts are in
    lattice sites and must stay below half the box.
    """
    spec = kernel.spec
    if max(abs(s) for s in shifts) > spec.nx // 2:
        raise LatticeError("shift beyond half the box: periodic images would contaminate")
    g = np.asarray(g, float)
    hh = np.fft.fft(np.asarray(h, float))

    def obs(batch):
        phi_t = spec.a_t * np.einsum("btx,t->bx", batch, g)
        # A(x0) = a_x sum_x h(x - x0) phi_t(x), circularly
        A = spec.a_x * np.fft.ifft(np.fft.fft(phi_t, axis=1) * np.conj(hh), axis=1).real
        F = A if kind == "linear" else np.exp(1j * A)
        out = [F.mean(axis=1).real]
        for s in shifts:
            prod = F * np.roll(F, -s, axis=1)
            out.append(prod.mean(axis=1).real)
        return np.stack(out, axis=1)

    vals, ens = _ensemble_values(kernel, interaction, obs, n, seed)
    mean = (lambda v: ens.mean(v)) if ens is not None else (lambda v: mean_estimate(v, seed))
    one = mean(vals[:, 0])
    rows = []
    for c, s in enumerate(shifts):
        # connected part with a delta-method error: E[AB] - E[A]^2
        v = vals[:, c + 1] - 2 * one.value * vals[:, 0]
        e = mean(v)
        conn = e.value + one.value**2
        rows.append({"x": float(s * spec.a_x), "connected": conn, "stderr": e.stderr})
    return {"mean": one.value, "rows": rows}


def fit_decay_rate(rows: Sequence[dict], min_signal: float = 5.0) -> float:
    """Slope of -log|connected| against x over points with |value| > min_signal * stderr."""
    xs = np.array([r["x"] for r in rows])
    ys = np.array([r["connected"] for r in rows])
    es = np.array([r["stderr"] for r in rows])
    sel = (np.abs(ys) > min_signal * es) & (ys != 0)
    if sel.sum() < 2:
        raise ValueError("not enough resolved points to fit a decay rate")
    w = (np.abs(ys[sel]) / es[sel]) ** 2
    slope = np.polyfit(xs[sel], np.log(np.abs(ys[sel])), 1, w=np.sqrt(w))[0]
    return float(-slope)


def weyl_connected_free(kernel: CovKernel, fA, fB) -> float:
    """Gaussian closed form of E[e^{i phi(fA)} e^{i phi(fB)}] - E[e^{i phi(fA)}] E[e^{i phi(fB)}]."""
    caa, cbb, cab = quad_C(kernel, fA), quad_C(kernel, fB), quad_C(kernel, fA, fB)
    return math.exp(-0.5 * (caa + cbb)) * (math.exp(-cab) - 1)


def positive_type_min_eig(values: np.ndarray, log_weights=None) -> float:
    """Smallest eigenvalue of M_ij = E[e^{i phi(f_i)} conj(e^{i phi(f_j)})] from sampled phi(f_i)."""
    z = np.exp(1j * np.asarray(values))
    w = np.full(len(z), 1 / len(z)) if log_weights is None else \
        np.exp(log_weights - np.max(log_weights)) / np.exp(log_weights - np.max(log_weights)).sum()
    M = (z * w[:, None]).T @ np.conj(z)
    return float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])

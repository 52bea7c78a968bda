"""Truncated bosonic Fock space over the circle Matsubara modes |n| <= K.

Mode n has frequency b_n = (nu_n^2 + m^2)^(1/2). A real circle function g with
unitary coefficients g_hat_n = beta^-1/2 int e^{-i nu_n t} g(t) dt gives

    phi_F(g) = sum_n (conj(g_hat_n) a_n + g_hat_n a_n^dagger) / sqrt(2 b_n),

so that (Omega, phi_F(g) phi_F(h) Omega) = sum_n conj(g_hat_n) h_hat_n / (2 b_n).
The basis holds every occupation vector with total quanta <= n_max. Annihilators
are exact on it; creators are their adjoints, hence projected at the cap.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .wick import WickPolynomial


class FockError(RuntimeError):
    pass


@dataclass(frozen=True)
class FockBasisSpec:
    beta: float
    mass: float
    mode_cutoff: int
    occupation_cap: int
    hard_cap: int = 20000

    def __post_init__(self):
        if self.beta <= 0 or self.mass <= 0:
            raise FockError("beta and mass must be positive")
        if self.mode_cutoff < 0 or self.occupation_cap < 0:
            raise FockError("mode cutoff and occupation cap must be >= 0")
        if self.dimension > self.hard_cap:
            raise FockError(f"Fock dimension {self.dimension} exceeds the hard cap {self.hard_cap}")

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.mode_cutoff, self.mode_cutoff + 1)

    @property
    def nu(self) -> np.ndarray:
        return 2 * np.pi * self.modes / self.beta

    @property
    def b(self) -> np.ndarray:
        return np.sqrt(self.nu**2 + self.mass**2)

    @property
    def dimension(self) -> int:
        m = 2 * self.mode_cutoff + 1
        return math.comb(self.occupation_cap + m, m)

    @property
    def wick_constant(self) -> float:
        """Vacuum variance of the cutoff sharp-space field, sum_n 1/(2 beta b_n)."""
        return float(np.sum(1 / (2 * self.beta * self.b)))


class FockSpace:
    """Occupation basis, ladder operators and momentum sectors."""

    def __init__(self, spec: FockBasisSpec):
        self.spec = spec
        nm = len(spec.modes)
        rows = []
        for total in range(spec.occupation_cap + 1):
            for combo in itertools.combinations_with_replacement(range(nm), total):
                occ = np.zeros(nm, dtype=np.int64)
                for i in combo:
                    occ[i] += 1
                rows.append(occ)
        self.occ = np.array(rows, dtype=np.int64).reshape(-1, nm)
        self._radix = (spec.occupation_cap + 1) ** np.arange(nm, dtype=np.int64)
        keys = self.occ @ self._radix
        self._order = np.argsort(keys)
        self._sorted_keys = keys[self._order]

    @property
    def dim(self) -> int:
        return self.occ.shape[0]

    @property
    def total_quanta(self) -> np.ndarray:
        return self.occ.sum(axis=1)

    @property
    def momentum_index(self) -> np.ndarray:
        return self.occ @ self.spec.modes

    def index_of(self, occ) -> int:
        key = int(np.asarray(occ, dtype=np.int64) @ self._radix)
        pos = np.searchsorted(self._sorted_keys, key)
        if pos >= len(self._sorted_keys) or self._sorted_keys[pos] != key:
            raise KeyError(f"occupation {occ} not in the basis")
        return int(self._order[pos])

    def mode_position(self, n: int) -> int:
        if abs(n) > self.spec.mode_cutoff:
            raise FockError(f"mode {n} beyond cutoff {self.spec.mode_cutoff}")
        return int(n + self.spec.mode_cutoff)

    @cached_property
    def annihilators(self) -> list:
        ops = []
        for i in range(self.occ.shape[1]):
            src = np.nonzero(self.occ[:, i] > 0)[0]
            tgt_keys = self.occ[src] @ self._radix - self._radix[i]
            pos = np.searchsorted(self._sorted_keys, tgt_keys)
            tgt = self._order[pos]
            vals = np.sqrt(self.occ[src, i].astype(float))
            ops.append(sp.csr_matrix((vals, (tgt, src)), shape=(self.dim, self.dim)))
        return ops

    def a(self, n: int) -> sp.csr_matrix:
        return self.annihilators[self.mode_position(n)]

    def vacuum(self) -> np.ndarray:
        v = np.zeros(self.dim)
        v[0] = 1.0
        return v

    def sectors(self) -> dict:
        """Basis indices grouped by total momentum index sum_n n occ_n."""
        p = self.momentum_index
        return {int(k): np.nonzero(p == k)[0] for k in np.unique(p)}


@dataclass(frozen=True)
class FockOperator:
    matrix: object
    label: str = ""

    def hermiticity_error(self) -> float:
        m = self.matrix
        d = m - m.conj().T
        if sp.issparse(d):
            return float(abs(d).max()) if d.nnz else 0.0
        return float(np.abs(d).max())

    def dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    def __add__(self, other):
        return FockOperator(self.matrix + other.matrix, f"{self.label}+{other.label}")

    def __matmul__(self, v):
        return self.matrix @ v


# ---------------------------------------------------------------- operators

def build_free(space: FockSpace) -> FockOperator:
    """dGamma(b): diagonal with entries sum_n occ_n b_n."""
    return FockOperator(sp.diags(space.occ @ space.spec.b).tocsr(), "dGamma(b)")


def momentum_operator(space: FockSpace) -> FockOperator:
    """P_C = dGamma(nu): diagonal with entries sum_n occ_n nu_n."""
    return FockOperator(sp.diags(space.occ @ space.spec.nu).tocsr(), "P_C")


def circle_coefficients(space: FockSpace, g_values, project: bool = False, tol: float = 1e-10):
    """Unitary Matsubara coefficients of a circle function sampled on a uniform grid.

    Energy in modes |n| > K raises unless ``project`` is set, in which case those
    modes are dropped.
    """
    g = np.asarray(g_values, dtype=float)
    n = g.size
    beta = space.spec.beta
    gh = (beta / n) / math.sqrt(beta) * np.fft.fft(g)
    idx = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    K = space.spec.mode_cutoff
    if K >= n // 2:
        raise FockError("grid too coarse for the mode cutoff")
    outside = np.abs(idx) > K
    if not project and np.any(np.abs(gh[outside]) > tol * max(1.0, np.abs(gh).max())):
        raise FockError("function has Matsubara modes beyond the cutoff; pass project=True to drop them")
    lookup = {int(i): gh[k] for k, i in enumerate(idx)}
    return np.array([lookup[int(m)] for m in space.spec.modes])


def _ladder_sum(space: FockSpace, coeffs) -> sp.csr_matrix:
    """sum_n coeffs_n a_n (sparse)."""
    out = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for c, a in zip(coeffs, space.annihilators):
        if c != 0:
            out = out + c * a
    return out


def field_operator(space: FockSpace, coeffs) -> FockOperator:
    """phi_F for the coefficient vector g_hat_n over the kept modes (ordered -K..K)."""
    c = np.asarray(coeffs, dtype=complex)
    if c.shape != (len(space.spec.modes),):
        raise FockError("coefficient vector must cover the kept modes -K..K")
    lower = _ladder_sum(space, np.conj(c) / np.sqrt(2 * space.spec.b))
    return FockOperator((lower + lower.conj().T).tocsr(), "phi_F")


def sharp_time_coefficients(spec: FockBasisSpec, t: float) -> np.ndarray:
    """Coefficients of the cutoff time delta at t: g_hat_n = beta^-1/2 e^{-i nu_n t}."""
    return np.exp(-1j * spec.nu * t) / math.sqrt(spec.beta)


def quadrature_points(spec: FockBasisSpec, degree: int, n_q: int | None = None) -> int:
    if n_q is None:
        n_q = max(4 * degree * spec.mode_cutoff, 8) + 1
    if n_q <= degree * spec.mode_cutoff:
        raise FockError("too few quadrature points to integrate the interaction exactly")
    return n_q


def build_VC(space: FockSpace, coeffs: Sequence[float], n_q: int | None = None) -> FockOperator:
    """int_0^beta :P(phi(t)): dt by the n_q point trapezoid rule, normal ordered.

    ``coeffs`` are the coefficients of P; :phi(t)^k: is expanded as
    sum_j C(k, j) alpha^dagger(t)^j alpha(t)^(k-j) with phi = alpha + alpha^dagger.
    """
    spec = space.spec
    coeffs = [float(c) for c in coeffs]
    deg = len(coeffs) - 1
    n_q = quadrature_points(spec, max(deg, 1), n_q)
    w = spec.beta / n_q
    total = sp.csr_matrix((space.dim, space.dim), dtype=complex)
    for q in range(n_q):
        t = q * spec.beta / n_q
        alpha = _ladder_sum(space, np.exp(1j * spec.nu * t) / np.sqrt(2 * spec.beta * spec.b))
        powers = [sp.identity(space.dim, dtype=complex, format="csr")]
        for _ in range(deg):
            powers.append((powers[-1] @ alpha).tocsr())
        for k, ck in enumerate(coeffs):
            if ck == 0:
                continue
            term = sp.csr_matrix((space.dim, space.dim), dtype=complex)
            for j in range(k + 1):
                term = term + math.comb(k, j) * (powers[j].conj().T @ powers[k - j])
            total = total + (w * ck) * term
    if total.nnz and abs(total.imag).max() > 1e-10 * max(1.0, abs(total.real).max()):
        raise FockError("interaction has an imaginary part; quadrature grid is not translation symmetric")
    real = total.real.tocsr()
    real.eliminate_zeros()
    return FockOperator(real, "V_C")


def build_HC(space: FockSpace, coeffs: Sequence[float], n_q: int | None = None) -> FockOperator:
    h = build_free(space)
    if any(c != 0 for c in coeffs):
        h = h + build_VC(space, coeffs, n_q)
    return FockOperator(h.matrix.tocsr(), "H_C")


# ---------------------------------------------------------------- spectra

@dataclass
class SectorEigen:
    """Eigen-decomposition of an operator that conserves the circle momentum."""
    dim: int
    blocks: list  # (indices, evals, evecs, momentum_index)

    @property
    def energies(self) -> np.ndarray:
        return np.sort(np.concatenate([b[1] for b in self.blocks]))

    def joint(self):
        """(energy, momentum index) pairs sorted by energy."""
        e = np.concatenate([b[1] for b in self.blocks])
        p = np.concatenate([np.full(len(b[1]), b[3]) for b in self.blocks])
        o = np.argsort(e, kind="stable")
        return e[o], p[o]

    def apply_function(self, fn, v: np.ndarray) -> np.ndarray:
        """fn(H) v via the block eigenvectors."""
        v = np.asarray(v)
        out = np.zeros(v.shape, dtype=np.result_type(v, float))
        for idx, ev, U, _ in self.blocks:
            w = fn(ev)
            out[idx] = U @ ((w[:, None] if v.ndim > 1 else w) * (U.T @ v[idx]))
        return out

    def expm_apply(self, x: float, v: np.ndarray, shift: float = 0.0) -> np.ndarray:
        return self.apply_function(lambda e: np.exp(-x * (e - shift)), v)

    @cached_property
    def _layout(self):
        offsets = np.cumsum([0] + [len(b[1]) for b in self.blocks])
        return offsets

    @property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in block order (the order used by to_eig/from_eig)."""
        return np.concatenate([b[1] for b in self.blocks])

    def to_eig(self, v: np.ndarray) -> np.ndarray:
        off = self._layout
        out = np.empty((self.dim,) + v.shape[1:], dtype=np.result_type(v, float))
        for (idx, ev, U, _), lo, hi in zip(self.blocks, off[:-1], off[1:]):
            out[lo:hi] = U.T @ v[idx]
        return out

    def from_eig(self, c: np.ndarray) -> np.ndarray:
        off = self._layout
        out = np.zeros((self.dim,) + c.shape[1:], dtype=np.result_type(c, float))
        for (idx, ev, U, _), lo, hi in zip(self.blocks, off[:-1], off[1:]):
            out[idx] = U @ c[lo:hi]
        return out

    def shifted(self, shift: float) -> "SectorEigen":
        return SectorEigen(self.dim, [(i, e - shift, U, k) for i, e, U, k in self.blocks])

    def dense_basis(self):
        """All eigenvalues and full eigenvector matrix (dense)."""
        evals = np.empty(self.dim)
        vecs = np.zeros((self.dim, self.dim))
        col = 0
        for idx, ev, U, _ in self.blocks:
            k = len(ev)
            evals[col:col + k] = ev
            vecs[idx, col:col + k] = U
            col += k
        o = np.argsort(evals, kind="stable")
        return evals[o], vecs[:, o]


def sector_eigh(H: FockOperator, space: FockSpace, check: float = 1e-10) -> SectorEigen:
    m = H.matrix.tocsr() if sp.issparse(H.matrix) else sp.csr_matrix(H.matrix)
    coo = m.tocoo()
    p = space.momentum_index
    cross = p[coo.row] != p[coo.col]
    if np.any(cross) and np.abs(coo.data[cross]).max() > check:
        raise FockError("operator couples different momentum sectors")
    blocks = []
    for k, idx in space.sectors().items():
        sub = m[idx][:, idx].toarray()
        if np.iscomplexobj(sub):
            if np.abs(sub.imag).max() > check:
                raise FockError("sector decomposition expects a real symmetric operator")
            sub = sub.real
        ev, U = np.linalg.eigh(sub)
        blocks.append((idx, ev, U, k))
    return SectorEigen(space.dim, blocks)


@dataclass(frozen=True)
class GroundState:
    energy: float
    vector: np.ndarray
    gap: float
    second: float

    def to_dict(self) -> dict:
        return {"energy": self.energy, "gap": self.gap, "second": self.second,
                "vacuum_overlap": float(self.vector[0]), "dim": int(self.vector.size)}


def ground_state(H: FockOperator, space: FockSpace | None = None, dense_limit: int = 4000,
                 tol: float = 1e-12, maxiter: int | None = None) -> GroundState:
    """Lowest eigenpair with phase (Omega_C, Omega) > 0, and the gap to the next level.

    With ``space`` given the operator is diagonalized sector by sector (exact and
    fast when it conserves momentum); otherwise dense up to ``dense_limit`` and
    Lanczos beyond.
    """
    m = H.matrix
    n = m.shape[0]
    if space is not None:
        eig = sector_eigh(H, space)
        ev = eig.eigenvalues
        o = np.argsort(ev, kind="stable")
        e0, e1 = ev[o[0]], ev[o[1]]
        c = np.zeros(n)
        c[o[0]] = 1.0
        v = eig.from_eig(c)
    elif n <= dense_limit:
        dense = m.toarray() if sp.issparse(m) else np.asarray(m)
        ev, U = np.linalg.eigh(dense.real if np.isrealobj(dense) or np.abs(dense.imag).max() < 1e-14 else dense)
        e0, e1, v = ev[0], ev[1], U[:, 0]
    else:
        try:
            ev, U = spla.eigsh(m, k=2, which="SA", tol=tol, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            raise FockError("Lanczos did not converge") from exc
        o = np.argsort(ev)
        e0, e1, v = ev[o[0]], ev[o[1]], U[:, o[0]]
    if v[0] == 0:
        raise FockError("ground state is orthogonal to the Fock vacuum")
    v = v * np.sign(v[0].real) / np.linalg.norm(v)
    return GroundState(float(e0), np.real_if_close(v), float(e1 - e0), float(e1))


def oscillator_levels(mass: float, sigma: float, count: int) -> np.ndarray:
    """Spectrum of m a^dag a + sigma :phi^2: on a single zero mode (any beta)."""
    w = math.sqrt(mass**2 + 2 * sigma)
    return w * (np.arange(count) + 0.5) - mass / 2 - sigma / (2 * mass)


# ---------------------------------------------------------------- checks

def _inv_power(H_dense, c, power):
    ev, U = np.linalg.eigh(H_dense)
    shifted = ev + c
    if shifted.min() <= 0:
        raise FockError("H + c must be positive")
    return (U * shifted**power) @ U.T


@dataclass
class BoundReport:
    c: float
    field_half: np.ndarray   # fitted constants for phi_F(g) vs ||g|| (H + c)^(1/2)
    field_resolvent: np.ndarray  # ||phi_F(g) (H + c)^(-1/2)|| / ||g||
    field_full: np.ndarray   # phi_F(g) vs ||g||_{H^-1} (H + c)
    number_bound: float      # smallest C with dGamma(b) + 1 <= C (H + c)

    def to_dict(self) -> dict:
        return {"c": self.c, "field_half": self.field_half.tolist(),
                "field_resolvent": self.field_resolvent.tolist(),
                "field_full": self.field_full.tolist(), "number_bound": self.number_bound}


def h_norm(spec: FockBasisSpec, coeffs, order: float) -> float:
    c = np.asarray(coeffs)
    return float(np.sqrt(np.sum(np.abs(c) ** 2 * (spec.nu**2 + spec.mass**2) ** order)))


def bound_checks(space: FockSpace, H: FockOperator, g_family: Sequence, c: float | None = None) -> BoundReport:
    """Fit the constants of the field/Hamiltonian operator inequalities.

    For each g: smallest C_half with C_half ||g||_{-1/2} (H+c)^(1/2) -+ phi_F(g) >= 0,
    the resolvent norm ||phi_F(g)(H+c)^(-1/2)|| / ||g||_{-1/2}, and the smallest
    C_full with C_full ||g||_{-1} (H+c) -+ phi_F(g) >= 0. Also the smallest C with
    dGamma(b) + 1 <= C (H + c).
    """
    hd = H.dense().real
    if c is None:
        c = 1.0 - float(np.linalg.eigvalsh(hd)[0])
    quarter = _inv_power(hd, c, -0.25)
    half = _inv_power(hd, c, -0.5)
    half_c, resolv, full_c = [], [], []
    for g in g_family:
        g = np.asarray(g, dtype=complex)
        nh = h_norm(space.spec, g, -0.5)
        n1 = h_norm(space.spec, g, -1.0)
        if nh == 0:
            half_c.append(0.0)
            resolv.append(0.0)
            full_c.append(0.0)
            continue
        phi = field_operator(space, g).dense()
        phi = phi.real if np.abs(phi.imag).max() < 1e-14 else phi
        half_c.append(np.abs(np.linalg.eigvalsh(quarter @ phi @ quarter)).max() / nh)
        resolv.append(np.linalg.norm(phi @ half, 2) / nh)
        full_c.append(np.abs(np.linalg.eigvalsh(half @ phi @ half)).max() / n1)
    n_op = build_free(space).dense() + np.eye(space.dim)
    num = float(np.linalg.eigvalsh(half @ n_op @ half).max())
    return BoundReport(c, np.array(half_c), np.array(resolv), np.array(full_c), num)


@dataclass
class ConeReport:
    commutator: float
    energies: np.ndarray
    momenta: np.ndarray
    violations: int
    slack: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def spectrum_cone_check(space: FockSpace, H: FockOperator, window: float, slack: float = 0.1,
                        tol: float = 1e-10) -> ConeReport:
    """Check |p| <= e (1 + slack) for joint eigenvalues of (H - E_C, P_C) with e <= window."""
    P = momentum_operator(space).matrix
    comm = H.matrix @ P - P @ H.matrix
    cn = float(abs(comm).max()) if comm.nnz else 0.0
    if cn > tol * max(1.0, float(abs(H.matrix).max())):
        raise FockError(f"[H, P] = {cn:.2e}: quadrature grid breaks translation symmetry")
    eig = sector_eigh(H, space)
    e, k = eig.joint()
    e = e - e[0]
    p = 2 * np.pi * k / space.spec.beta
    sel = e <= window
    bad = np.abs(p[sel]) > e[sel] * (1 + slack) + 1e-9
    return ConeReport(cn, e[sel], p[sel], int(bad.sum()), slack)

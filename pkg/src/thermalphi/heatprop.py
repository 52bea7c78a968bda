"""The heat equation dU/dx = -(H + i lam R(x)) U and what is built from it.

H is a positive operator with H Omega = 0 (a renormalized Hamiltonian) and R(x) a
Hermitian drive that vanishes outside a bounded interval. U(t, s) solves the
equation in t with U(s, s) = 1; for real lam it is a contraction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from .fock import FockSpace, SectorEigen, sector_eigh
from .lattice import Profile


class PropagatorError(RuntimeError):
    pass


# ---------------------------------------------------------------- drives

class FieldDrive:
    """R(x) = phi_F(f_x) for a smooth profile f(t, x) on a Fock space."""

    def __init__(self, space: FockSpace, profile: Profile):
        self.space = space
        self.profile = profile
        self.modes = list(space.spec.modes)
        self.scale = 1 / np.sqrt(2 * space.spec.b)
        self.lower = space.annihilators
        self.raise_ = [a.T.tocsr() for a in space.annihilators]

    @property
    def dim(self) -> int:
        return self.space.dim

    def coeffs(self, x) -> np.ndarray:
        return self.profile.mode_coeffs(x, self.modes)[0] * self.scale

    def apply(self, x: float, v: np.ndarray) -> np.ndarray:
        c = self.coeffs(x)
        out = np.zeros(v.shape, dtype=complex)
        for ck, lo, hi in zip(c, self.lower, self.raise_):
            if ck != 0:
                out += np.conj(ck) * (lo @ v) + ck * (hi @ v)
        return out

    def matrix(self, x: float):
        c = self.coeffs(x)
        m = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        for ck, lo, hi in zip(c, self.lower, self.raise_):
            if ck != 0:
                m = m + np.conj(ck) * lo + ck * hi
        return m

    def support(self) -> tuple:
        r = self.profile.support_radius()
        return (-r, r)

    def shifted(self, dx: float) -> "FieldDrive":
        return FieldDrive(self.space, self.profile.shifted(dx))


class MatrixDrive:
    """R(x) = envelope(x) M for a fixed Hermitian matrix M."""

    def __init__(self, M, envelope: Callable, support: tuple):
        self.M = np.asarray(M)
        self.envelope = envelope
        self._support = support

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def apply(self, x, v):
        return self.envelope(x) * (self.M @ v)

    def matrix(self, x):
        return self.envelope(x) * self.M

    def support(self) -> tuple:
        return self._support

    def shifted(self, dx: float) -> "MatrixDrive":
        lo, hi = self._support
        return MatrixDrive(self.M, lambda x, e=self.envelope: e(x - dx), (lo + dx, hi + dx))


class ZeroDrive:
    def __init__(self, dim: int):
        self._dim = dim

    @property
    def dim(self):
        return self._dim

    def apply(self, x, v):
        return np.zeros(v.shape, dtype=complex)

    def matrix(self, x):
        return sp.csr_matrix((self._dim, self._dim), dtype=complex)

    def support(self):
        return (0.0, 0.0)

    def shifted(self, dx):
        return self


# ---------------------------------------------------------------- spectra

class DenseEigen:
    """Eigen-decomposition of a small real symmetric matrix with the SectorEigen interface."""

    def __init__(self, H):
        H = H.toarray() if sp.issparse(H) else np.asarray(H)
        self.eigenvalues, self.U = np.linalg.eigh(H.real)
        self.dim = H.shape[0]

    def to_eig(self, v):
        return self.U.T @ v

    def from_eig(self, c):
        return self.U @ c

    def apply_function(self, fn, v):
        return self.U @ ((fn(self.eigenvalues)[:, None] if np.ndim(v) > 1 else fn(self.eigenvalues))
                         * (self.U.T @ v))

    def expm_apply(self, x, v, shift=0.0):
        return self.apply_function(lambda e: np.exp(-x * (e - shift)), v)


@dataclass
class PropagatorProblem:
    """H (sparse or dense, positive), drive R and coupling lam.

    ``eig`` is an eigen-decomposition of H used for free evolution and the
    nested quadrature; it is built on demand.
    """
    H: object
    R: object
    lam: complex = 1.0
    eig: object = None
    metadata: dict = field(default_factory=lambda: {"gamma": 0.5, "delta": 0.5})

    def __post_init__(self):
        if self.eig is None:
            self.eig = DenseEigen(self.H)

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def ground_vector(self) -> np.ndarray:
        c = np.zeros(self.dim)
        c[int(np.argmin(self.eig.eigenvalues))] = 1.0
        v = self.eig.from_eig(c)
        return v * np.sign(v[np.argmax(np.abs(v))])

    def with_lambda(self, lam) -> "PropagatorProblem":
        return PropagatorProblem(self.H, self.R, lam, self.eig, self.metadata)

    def with_drive(self, R) -> "PropagatorProblem":
        return PropagatorProblem(self.H, R, self.lam, self.eig, self.metadata)


def renormalized_problem(H, space: FockSpace, profile: Profile | None, lam: complex = 1.0):
    """H^ren = H - E_C with a momentum-sector eigen-decomposition, driven by phi_F(f_x)."""
    eig = sector_eigh(_as_op(H), space)
    e0 = float(eig.eigenvalues.min())
    eig = eig.shifted(e0)
    Hm = H.matrix if hasattr(H, "matrix") else H
    Hren = (Hm - e0 * sp.identity(Hm.shape[0], format="csr")).tocsr()
    R = FieldDrive(space, profile) if profile is not None else ZeroDrive(space.dim)
    return PropagatorProblem(Hren, R, lam, eig), e0


def _as_op(H):
    from .fock import FockOperator
    return H if isinstance(H, FockOperator) else FockOperator(H)


@dataclass
class PropagatorResult:
    U: np.ndarray
    interval: tuple
    steps: int
    nfev: int
    tol: float
    method: str


# ---------------------------------------------------------------- solvers

def solve_U(problem: PropagatorProblem, s: float, t: float, psi: np.ndarray | None = None,
            rtol: float = 1e-10, atol: float = 1e-12, method: str = "DOP853") -> PropagatorResult:
    """Integrate from s to t on a vector (``psi``) or on the identity (full matrix)."""
    if t < s:
        raise PropagatorError("need s <= t")
    n = problem.dim
    y0 = (np.eye(n, dtype=complex) if psi is None else np.asarray(psi, dtype=complex))
    shape = y0.shape
    if t == s:
        return PropagatorResult(y0.copy(), (s, t), 0, 0, rtol, method)
    H, R, lam = problem.H, problem.R, problem.lam

    def rhs(x, y):
        Y = y.reshape(shape)
        return (-(H @ Y) - 1j * lam * R.apply(x, Y)).ravel()

    sol = solve_ivp(rhs, (s, t), y0.ravel(), method=method, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise PropagatorError(f"adaptive integration failed ({sol.message}); "
                              "the problem is stiff, use trotter_U or split the interval")
    return PropagatorResult(sol.y[:, -1].reshape(shape), (s, t), len(sol.t) - 1, sol.nfev,
                            rtol, method)


def trotter_U(problem: PropagatorProblem, s: float, t: float, n: int, p: int = 1,
              psi: np.ndarray | None = None) -> PropagatorResult:
    """prod_{j=n-1..0} (e^{-Delta H/p} e^{-i lam Delta R(t_j)/p})^p with t_j = s + j Delta."""
    dim = problem.dim
    delta = (t - s) / n
    eig = problem.eig
    y = np.eye(dim, dtype=complex) if psi is None else np.asarray(psi, dtype=complex).copy()
    for j in range(n):
        tj = s + j * delta
        Rm = problem.R.matrix(tj)
        Rd = Rm.toarray() if sp.issparse(Rm) else np.asarray(Rm)
        if dim <= 600:
            kick = expm(-1j * problem.lam * delta / p * Rd)
            for _ in range(p):
                y = eig.expm_apply(delta / p, kick @ y)
        else:
            for _ in range(p):
                y = expm_multiply(-1j * problem.lam * delta / p * sp.csr_matrix(Rd), y)
                y = eig.expm_apply(delta / p, y)
    return PropagatorResult(y, (s, t), n * p, 0, 0.0, f"trotter(n={n},p={p})")


def w_matrix_element(problem: PropagatorProblem, a: float, b: float, left, right,
                     **solver) -> complex:
    """(left, W_[a,b] right) with W = U(b, a)^*; equals conj((right, U(b, a) left))."""
    u_left = solve_U(problem, a, b, psi=left, **solver).U
    return complex(np.conj(np.vdot(right, u_left)))


def vacuum_expectation(problem: PropagatorProblem, lam=None, psi=None, interval=None,
                       **solver) -> complex:
    """(Omega, U_lam(infinity, -infinity) Omega) computed on the support of R."""
    prob = problem if lam is None else problem.with_lambda(lam)
    omega = problem.ground_vector() if psi is None else psi
    lo, hi = interval if interval is not None else problem.R.support()
    return complex(np.vdot(omega, solve_U(prob, lo, hi, psi=omega, **solver).U))


# ---------------------------------------------------------------- ordered integrals

def _phi_functions(z: np.ndarray, kmax: int) -> np.ndarray:
    """phi_k(-z) for k = 1..kmax, z >= 0, stable for small and large z."""
    z = np.asarray(z, dtype=float)
    out = np.empty((kmax,) + z.shape)
    small = z < 0.5
    w = -z
    # recursion phi_{k+1}(w) = (phi_k(w) - 1/k!)/w, fine away from 0
    with np.errstate(divide="ignore", invalid="ignore"):
        prev = np.exp(w)
        for k in range(kmax):
            prev = (prev - 1 / math.factorial(k)) / w
            out[k] = prev
    if np.any(small):
        ws = w[small]
        for k in range(1, kmax + 1):
            acc = np.zeros_like(ws)
            for i in range(30, -1, -1):
                acc = acc * ws + 1 / math.factorial(i + k)
            out[k - 1][small] = acc
    return out


def _exp_weights(E: np.ndarray, h: float, nodes: np.ndarray) -> np.ndarray:
    """W[m, k] = int_0^h e^{-E_k (h - s)} L_m(s) ds for Lagrange basis on ``nodes``."""
    deg = len(nodes)
    phis = _phi_functions(E * h, deg)  # phi_{j+1}(-Eh), j = 0..deg-1
    moments = np.stack([h ** (j + 1) * math.factorial(j) * phis[j] for j in range(deg)])
    V = np.vander(nodes, deg, increasing=True)  # V[m, j] = nodes_m^j
    A = np.linalg.inv(V).T  # L_m(s) = sum_j A[m, j] s^j
    return A @ moments


def ordered_integrals(problem: PropagatorProblem, order: int, grid_points: int = 801,
                      interval: tuple | None = None) -> np.ndarray:
    """I_j = int_{x_1 <= ... <= x_j} (Omega, R(x_j) e^{-(x_j - x_{j-1}) H} ... R(x_1) Omega) for j = 1..order.

    Each nested layer is a cumulative integral of e^{-(x - y) H} g(y); it is done
    exactly in the exponential and with a cubic Lagrange interpolant of g between
    grid points, in the eigenbasis of H.
    """
    if order > 3:
        raise PropagatorError("ordered integrals above order 3 are refused (cost)")
    lo, hi = interval if interval is not None else problem.R.support()
    xs = np.linspace(lo, hi, grid_points)
    h = xs[1] - xs[0]
    eig = problem.eig
    E = np.asarray(eig.eigenvalues, dtype=float)
    E = np.maximum(E, 0.0)
    decay = np.exp(-E * h)
    W_mid = _exp_weights(E, h, np.array([-h, 0.0, h, 2 * h]))
    W_first = _exp_weights(E, h, np.array([0.0, h, 2 * h, 3 * h]))
    W_last = _exp_weights(E, h, np.array([-2 * h, -h, 0.0, h]))
    omega = problem.ground_vector()
    c_omega = eig.to_eig(omega)
    M = len(xs)
    current = np.tile(omega.astype(complex), (M, 1))  # Y_0(x) = Omega
    results = []
    for _ in range(order):
        g = np.array([eig.to_eig(problem.R.apply(x, current[i])) for i, x in enumerate(xs)])
        Y = np.zeros_like(g)
        for i in range(M - 1):
            if i == 0:
                idx, W = [0, 1, 2, 3], W_first
            elif i == M - 2:
                idx, W = [i - 2, i - 1, i, i + 1], W_last
            else:
                idx, W = [i - 1, i, i + 1, i + 2], W_mid
            Y[i + 1] = decay * Y[i] + np.einsum("mk,mk->k", W, g[idx])
        results.append(np.vdot(c_omega, Y[-1]))
        current = np.array([eig.from_eig(y) for y in Y])
    return np.array(results)


def moment_from_operators(problem: PropagatorProblem, n: int, **kw) -> complex:
    """n! I_n: the n-th moment of phi(f) under the limiting measure."""
    return math.factorial(n) * ordered_integrals(problem, n, **kw)[-1]


def lambda_derivatives(problem: PropagatorProblem, order: int, method: str = "quadrature",
                       step: float = 1e-3, rtol: float = 1e-12, atol: float = 1e-14, **kw) -> complex:
    """d^n/dlam^n (Omega, U_lam(infinity, -infinity) Omega) at lam = 0.

    ``quadrature`` evaluates n! (-i)^n I_n; ``fd`` takes central differences of the
    solved propagator with one Richardson step.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if method == "quadrature":
        return complex(math.factorial(order) * (-1j) ** order
                       * ordered_integrals(problem, order, **kw)[-1])
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    if order > 2:
        raise PropagatorError("finite differences implemented for orders 1 and 2")

    def F(lam):
        return vacuum_expectation(problem, lam=lam, rtol=rtol, atol=atol)

    def diff(hh):
        if order == 1:
            return (F(hh) - F(-hh)) / (2 * hh)
        return (F(hh) - 2 * F(0.0) + F(-hh)) / hh**2

    d1, d2 = diff(step), diff(step / 2)
    return complex((4 * d2 - d1) / 3)


# ---------------------------------------------------------------- clustering

@dataclass(frozen=True)
class ClusterPoint:
    t: float
    lhs: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.bound * 1.05


def clustering_bound(problem: PropagatorProblem, R1, R2, T: float, ts: Sequence[float],
                     gap: float, **solver) -> list:
    """|(Omega, U(R1 + xi_t R2) Omega) - (Omega, U(R1) Omega)(Omega, U(R2) Omega)| against e^{-(t-2T) gap}.

    R1 and R2 must be supported in [-T, T]; xi_t shifts R2 to [t-T, t+T].
    """
    if gap <= 0:
        raise PropagatorError("clustering needs a positive gap")
    omega = problem.ground_vector()
    p1, p2 = problem.with_drive(R1), problem.with_drive(R2)
    psi1 = solve_U(p1, -T, T, psi=omega, **solver).U
    u1 = np.vdot(omega, psi1)
    u2 = np.vdot(omega, solve_U(p2, -T, T, psi=omega, **solver).U)
    out = []
    for t in ts:
        if abs(t) <= 2 * T:
            raise PropagatorError("clustering bound needs |t| > 2T")
        chi = problem.eig.expm_apply(abs(t) - 2 * T, psi1)
        joint = np.vdot(omega, solve_U(p2, -T, T, psi=chi, **solver).U)
        lhs = abs(joint - u1 * u2)
        out.append(ClusterPoint(float(t), float(lhs), math.exp(-(abs(t) - 2 * T) * gap)))
    return out


def growth_exponent(problem: PropagatorProblem, ys: Sequence[float], **solver) -> float:
    """Fitted slope of log log ||U_{iy}|| against log y (analyticity growth surrogate)."""
    lo, hi = problem.R.support()
    norms = []
    for y in ys:
        U = solve_U(problem.with_lambda(1j * y), lo, hi, **solver).U
        norms.append(np.linalg.norm(U, 2))
    logs = np.log(np.maximum(np.log(norms), 1e-300))
    return float(np.polyfit(np.log(ys), logs, 1)[0])

"""Free covariance C = (D_t^2 + D_x^2 + m^2)^-1 and the derived thermal kernels.

Everything is diagonal in the (n, j) Fourier basis of :mod:`thermalphi.lattice`.
The multiplier scheme selects how the lattice stands in for the continuum:

``continuum``
    1 / (nu_n^2 + p_j^2 + m^2) at the lattice frequencies (default).
``finite_difference``
    the nearest-neighbour lattice Laplacian symbols in t and x.
``sampled``
    continuum in t; in x the exact covariance of the continuum field restricted to
    the space sites, i.e. the aliased sum over p_j + 2 pi k / a_x, which has the
    closed form (a / 2 eps) sinh(a eps) / (cosh(a eps) - cos(p a)).

``time_cutoff=K`` drops every Matsubara mode with |n| > K (multiplier set to 0),
so the lattice carries exactly the modes kept by a Fock space with cutoff K.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .lattice import LatticeError, LatticeSpec, as_array, fourier, fourier_x

SCHEMES = ("continuum", "finite_difference", "sampled")


@dataclass(frozen=True)
class CovKernel:
    spec: LatticeSpec
    scheme: str = "continuum"
    time_cutoff: int | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise LatticeError(f"unknown covariance scheme {self.scheme!r}")
        if self.time_cutoff is not None and not 0 <= self.time_cutoff < self.spec.nt // 2:
            raise LatticeError("time_cutoff must satisfy 0 <= K < nt/2")

    @cached_property
    def multiplier(self) -> np.ndarray:
        s = self.spec
        nu, p, m2 = s.nu[:, None], s.p[None, :], s.mass**2
        if self.scheme == "continuum":
            mult = 1.0 / (nu**2 + p**2 + m2)
        elif self.scheme == "finite_difference":
            lt = (2 / s.a_t * np.sin(nu * s.a_t / 2)) ** 2
            lx = (2 / s.a_x * np.sin(p * s.a_x / 2)) ** 2
            mult = 1.0 / (lt + lx + m2)
        else:
            eps = np.sqrt(nu**2 + m2)
            a = s.a_x
            mult = a / (2 * eps) * np.sinh(a * eps) / (np.cosh(a * eps) - np.cos(p * a))
            mult = np.broadcast_to(mult, s.shape).copy()
        if self.time_cutoff is not None:
            mult[np.abs(s.mode_index_t) > self.time_cutoff, :] = 0.0
        mult.setflags(write=False)
        return mult

    @property
    def volume(self) -> float:
        return self.spec.beta * 2 * self.spec.length

    @cached_property
    def site_covariance(self) -> np.ndarray:
        """E[phi(0,0) phi(t,x)] as an nt x nx array indexed by site offsets."""
        n = self.spec.nt * self.spec.nx
        return (np.fft.ifft2(self.multiplier).real * n / self.volume)

    @property
    def wick_constant(self) -> float:
        """Exact lattice site variance c_lat = (beta 2L)^-1 sum multiplier."""
        return float(self.multiplier.sum() / self.volume)

    def to_csv(self, path) -> None:
        s = self.spec
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "j", "multiplier"])
            for a, n in enumerate(s.mode_index_t):
                for b, j in enumerate(s.mode_index_x):
                    w.writerow([int(n), int(j), repr(float(self.multiplier[a, b]))])


@dataclass(frozen=True)
class ThermalKernel:
    """epsilon(p_j), b(nu_n) and the Bose factor rho(p_j) on a lattice."""
    spec: LatticeSpec

    @property
    def epsilon(self) -> np.ndarray:
        return np.sqrt(self.spec.p**2 + self.spec.mass**2)

    @property
    def b(self) -> np.ndarray:
        return np.sqrt(self.spec.nu**2 + self.spec.mass**2)

    @property
    def rho(self) -> np.ndarray:
        return 1.0 / np.expm1(self.spec.beta * self.epsilon)


def quad_C(kernel: CovKernel, f, g=None) -> float:
    """C(f, g) = dp * sum_{n,j} conj(f_hat) multiplier g_hat."""
    spec = kernel.spec
    fh = fourier(as_array(f, spec), spec)
    gh = fh if g is None else fourier(as_array(g, spec), spec)
    return float(spec.dp * np.sum(np.conj(fh) * kernel.multiplier * gh).real)


def unit_mode(spec: LatticeSpec, n: int, j: int):
    """Real test function whose transform is supported on (n, j) and (-n, -j) with unit norm."""
    t, x = spec.times, spec.positions
    phase = 2 * np.pi * n * t[:, None] / spec.beta + spec.dp * j * x[None, :]
    f = np.cos(phase)
    norm = np.sqrt(spec.a_t * spec.a_x * np.sum(f**2))
    return f / norm


# ---------------------------------------------------------------- closed forms

def thermal_closed_form(t, eps, beta):
    """(e^{-|t| eps} + e^{-(beta-|t|) eps}) / (2 eps (1 - e^{-beta eps}))."""
    t = np.abs(np.asarray(t, dtype=float))
    eps = np.asarray(eps, dtype=float)
    return (np.exp(-t * eps) + np.exp(-(beta - t) * eps)) / (2 * eps * -np.expm1(-beta * eps))


def matsubara_identity(t, eps, beta, N: int):
    """Truncated Matsubara sum against its closed form.

    The sum beta^-1 sum_{|n|<=N} e^{i nu_n t}/(nu_n^2 + eps^2) is formed with the
    +-n terms paired into cosines. Returns (truncated_sum, closed_form).
    """
    t = np.asarray(t, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.any(eps <= 0) or beta <= 0 or N < 1:
        raise ValueError("need eps > 0, beta > 0, N >= 1")
    if np.any(np.abs(t) > beta):
        raise ValueError("need |t| <= beta")
    nu = 2 * np.pi * np.arange(1, N + 1) / beta
    tt, ee = np.broadcast_arrays(t, eps)
    terms = np.cos(tt[..., None] * nu) / (nu**2 + ee[..., None] ** 2)
    # sum smallest terms first
    total = 1.0 / ee**2 + 2 * terms[..., ::-1].sum(axis=-1)
    return total / beta, thermal_closed_form(t, eps, beta)


def c0_kernel(spec: LatticeSpec, t1: float, t2: float, h1, h2) -> float:
    """Sharp-time thermal covariance (h1, K(t1 - t2) h2) with K the Matsubara closed form."""
    eps = ThermalKernel(spec).epsilon
    dt = abs(t1 - t2) % spec.beta
    k = thermal_closed_form(dt, eps, spec.beta)
    a, b = fourier_x(np.asarray(h1, float), spec), fourier_x(np.asarray(h2, float), spec)
    return float(spec.dp * np.sum(np.conj(a) * k * b).real)


def c0_equal_time(spec: LatticeSpec, h1, h2) -> float:
    """(h1, (1 + 2 rho)/(2 eps) h2), the equal-time value written with the Bose factor."""
    th = ThermalKernel(spec)
    k = (1 + 2 * th.rho) / (2 * th.epsilon)
    a, b = fourier_x(np.asarray(h1, float), spec), fourier_x(np.asarray(h2, float), spec)
    return float(spec.dp * np.sum(np.conj(a) * k * b).real)


def c0_mollified(spec: LatticeSpec, t: float, h1, h2, k: int) -> float:
    """beta^-1 sum_{|n|<=k} e^{i nu_n t} sum_j conj(h1_hat) h2_hat / (nu_n^2 + eps_j^2).

    The time-mollified two-point function of the free field, before k -> infinity.
    """
    eps2 = ThermalKernel(spec).epsilon ** 2
    a, b = fourier_x(np.asarray(h1, float), spec), fourier_x(np.asarray(h2, float), spec)
    w = spec.dp * (np.conj(a) * b).real
    nu = 2 * np.pi * np.arange(1, k + 1) / spec.beta
    total = np.sum(w / eps2)
    for chunk in np.array_split(np.arange(k), max(1, k // 4096)):
        c = np.cos(nu[chunk] * t)[:, None] / (nu[chunk, None] ** 2 + eps2[None, :])
        total += 2 * np.sum(c[::-1] @ w)
    return float(total / spec.beta)


def cbeta_kernel(spec: LatticeSpec, x1: float, x2: float, g1, g2) -> float:
    """Sharp-space covariance (g1, e^{-|x1-x2| b}/(2 b) g2) over the time circle."""
    b = ThermalKernel(spec).b
    k = np.exp(-abs(x1 - x2) * b) / (2 * b)
    fa = spec.a_t / np.sqrt(spec.beta) * np.fft.fft(np.asarray(g1, float))
    fb = spec.a_t / np.sqrt(spec.beta) * np.fft.fft(np.asarray(g2, float))
    return float(np.sum(np.conj(fa) * k * fb).real)


def line_green_quadrature(x: float, b: float) -> float:
    """(2 pi)^-1 int e^{ipx}/(p^2+b^2) dp by adaptive Fourier quadrature."""
    from scipy.integrate import quad

    if x == 0:
        val, _ = quad(lambda p: 1 / (p**2 + b**2), 0, np.inf)
    else:
        val, _ = quad(lambda p: 1 / (p**2 + b**2), 0, np.inf, weight="cos", wvar=abs(x))
    return val / np.pi

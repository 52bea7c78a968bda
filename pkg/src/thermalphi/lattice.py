"""Discretized cylinder S_beta x [-L, L] and the transforms that live on it.

Conventions (all arrays in numpy FFT order along each axis):

* time sites ``t_k = k * a_t`` for ``k = 0..nt-1`` on the circle of length beta;
* space sites are cell centred, ``x_i = -L + (i + 1/2) * a_x``, so the reflection
  ``x -> -x`` maps sites to sites and ``[-l, l]`` holds exactly ``2l/a_x`` sites
  whenever ``l`` is a multiple of ``a_x``;
* Matsubara frequencies ``nu_n = 2 pi n / beta`` and momenta ``p_j = pi j / L``.

Time transform::

    u_hat(n, x) = beta^(-1/2) * a_t * sum_k exp(-i nu_n t_k) u(t_k, x)
    u(t_k, x)   = beta^(-1/2) * sum_n exp(+i nu_n t_k) u_hat(n, x)

Space transform::

    u_hat(t, p_j) = (2 pi)^(-1/2) * a_x * sum_i exp(-i p_j x_i) u(t, x_i)
    u(t, x_i)     = (2 pi)^(-1/2) * dp * sum_j exp(+i p_j x_i) u_hat(t, p_j),  dp = pi / L

so that ``sum_n |u_hat|^2 = a_t sum_k |u|^2`` and ``dp sum_j |u_hat|^2 = a_x sum_i |u|^2``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    beta: float
    length: float
    nt: int
    nx: int
    mass: float

    def __post_init__(self):
        if not (self.beta > 0 and self.length > 0 and self.mass > 0):
            raise LatticeError("beta, length and mass must be positive")
        for name in ("nt", "nx"):
            v = getattr(self, name)
            if int(v) != v or v < 4 or v % 2:
                raise LatticeError(f"{name} must be an even integer >= 4, got {v}")

    @property
    def a_t(self) -> float:
        return self.beta / self.nt

    @property
    def a_x(self) -> float:
        return 2.0 * self.length / self.nx

    @property
    def dp(self) -> float:
        return np.pi / self.length

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nt, self.nx)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt) * self.a_t

    @property
    def positions(self) -> np.ndarray:
        return -self.length + (np.arange(self.nx) + 0.5) * self.a_x

    @property
    def mode_index_t(self) -> np.ndarray:
        return np.fft.fftfreq(self.nt, d=1.0 / self.nt).astype(int)

    @property
    def mode_index_x(self) -> np.ndarray:
        return np.fft.fftfreq(self.nx, d=1.0 / self.nx).astype(int)

    @property
    def nu(self) -> np.ndarray:
        return 2 * np.pi * self.mode_index_t / self.beta

    @property
    def p(self) -> np.ndarray:
        return self.mode_index_x * self.dp

    def centered_times(self) -> np.ndarray:
        """Site times represented in [-beta/2, beta/2)."""
        t = self.times
        return np.where(t >= self.beta / 2 - 1e-12 * self.beta, t - self.beta, t)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_dict(self) -> dict:
        return {"beta": self.beta, "length": self.length, "nt": self.nt,
                "nx": self.nx, "mass": self.mass}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LatticeSpec":
        extra = set(d) - {"beta", "length", "nt", "nx", "mass"}
        if extra:
            raise LatticeError(f"unknown lattice keys: {sorted(extra)}")
        return cls(float(d["beta"]), float(d["length"]), int(d["nt"]),
                   int(d["nx"]), float(d["mass"]))

    @classmethod
    def from_json(cls, s: str) -> "LatticeSpec":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class Field:
    """A real field configuration on the lattice."""
    data: np.ndarray
    spec: LatticeSpec

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.shape != self.spec.shape:
            raise LatticeError(f"field shape {d.shape} != {self.spec.shape}")
        if not np.all(np.isfinite(d)):
            raise LatticeError("field has non-finite entries")
        object.__setattr__(self, "data", d)


@dataclass(frozen=True)
class TestFunction:
    """A real test function sampled on the lattice sites."""
    data: np.ndarray
    spec: LatticeSpec

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.shape != self.spec.shape:
            raise LatticeError(f"test function shape {d.shape} != {self.spec.shape}")
        if not np.all(np.isfinite(d)):
            raise LatticeError("test function has non-finite entries")
        object.__setattr__(self, "data", d)

    def __add__(self, other):
        _same_spec(self.spec, other.spec)
        return TestFunction(self.data + other.data, self.spec)

    def __sub__(self, other):
        _same_spec(self.spec, other.spec)
        return TestFunction(self.data - other.data, self.spec)

    def __mul__(self, s: float):
        return TestFunction(self.data * s, self.spec)

    __rmul__ = __mul__

    def __neg__(self):
        return TestFunction(-self.data, self.spec)

    def reflect_time(self) -> "TestFunction":
        return TestFunction(reflect_time(self.data), self.spec)

    def shift_x(self, sites: int) -> "TestFunction":
        return TestFunction(np.roll(self.data, sites, axis=-1), self.spec)


def _same_spec(a: LatticeSpec, b: LatticeSpec):
    if a != b:
        raise LatticeError("lattice specs differ")


def as_array(obj, spec: LatticeSpec | None = None) -> np.ndarray:
    """Unwrap Field/TestFunction or pass arrays through, checking spec when given."""
    if isinstance(obj, (Field, TestFunction)):
        if spec is not None:
            _same_spec(obj.spec, spec)
        return obj.data
    arr = np.asarray(obj)
    if spec is not None and arr.shape[-2:] != spec.shape:
        raise LatticeError(f"array shape {arr.shape} does not match lattice {spec.shape}")
    return arr


def reflect_time(u: np.ndarray) -> np.ndarray:
    """(r u)(t, x) = u(-t, x) on the lattice circle, batch friendly."""
    u = np.asarray(u)
    nt = u.shape[-2]
    return u[..., (-np.arange(nt)) % nt, :]


def pair(phi, f, spec: LatticeSpec) -> np.ndarray:
    """phi(f) = a_t a_x sum phi f, broadcast over leading batch axes of phi."""
    phi = as_array(phi, spec)
    f = as_array(f, spec)
    return spec.a_t * spec.a_x * np.einsum("...tx,tx->...", phi, f)


# ---------------------------------------------------------------- transforms

def fourier_t(u, spec: LatticeSpec) -> np.ndarray:
    u = as_array(u)
    if u.shape[-2] != spec.nt:
        raise LatticeError(f"time axis {u.shape[-2]} != nt={spec.nt}")
    return spec.a_t / np.sqrt(spec.beta) * np.fft.fft(u, axis=-2)


def inverse_fourier_t(u_hat, spec: LatticeSpec) -> np.ndarray:
    u_hat = np.asarray(u_hat)
    if u_hat.shape[-2] != spec.nt:
        raise LatticeError(f"time axis {u_hat.shape[-2]} != nt={spec.nt}")
    return spec.nt / np.sqrt(spec.beta) * np.fft.ifft(u_hat, axis=-2)


def _x_phase(spec: LatticeSpec) -> np.ndarray:
    # exp(-i p_j x_0): FFT sums assume the first site sits at the origin
    return np.exp(-1j * spec.p * spec.positions[0])


def fourier_x(u, spec: LatticeSpec) -> np.ndarray:
    u = as_array(u)
    if u.shape[-1] != spec.nx:
        raise LatticeError(f"space axis {u.shape[-1]} != nx={spec.nx}")
    return spec.a_x / np.sqrt(2 * np.pi) * _x_phase(spec) * np.fft.fft(u, axis=-1)


def inverse_fourier_x(u_hat, spec: LatticeSpec) -> np.ndarray:
    u_hat = np.asarray(u_hat)
    if u_hat.shape[-1] != spec.nx:
        raise LatticeError(f"space axis {u_hat.shape[-1]} != nx={spec.nx}")
    return spec.dp * spec.nx / np.sqrt(2 * np.pi) * np.fft.ifft(u_hat / _x_phase(spec), axis=-1)


def fourier(u, spec: LatticeSpec) -> np.ndarray:
    """Full space-time transform, indexed (n, j)."""
    return fourier_x(fourier_t(u, spec), spec)


def inverse_fourier(u_hat, spec: LatticeSpec) -> np.ndarray:
    return inverse_fourier_t(inverse_fourier_x(u_hat, spec), spec)


# ---------------------------------------------------------------- mollifiers

def cubic_bspline(u) -> np.ndarray:
    """Centred cubic B-spline, support [-2, 2], unit integral."""
    a = np.abs(np.asarray(u, dtype=float))
    out = np.where(a < 1, 2 / 3 - a**2 + a**3 / 2, 0.0)
    return np.where((a >= 1) & (a < 2), (2 - a) ** 3 / 6, out)


def _wrap(d, period):
    return (d + period / 2) % period - period / 2


def make_mollifier(spec: LatticeSpec, kind: str, k: float, center: float = 0.0,
                   profile: np.ndarray | None = None) -> TestFunction:
    """Lattice sampling of the approximate delta at ``center`` tensored with ``profile``.

    ``kind="time"`` gives beta^-1 sum_{|n|<=k} exp(i nu_n (t - center)); at k = nt/2 the
    two Nyquist terms alias to one lattice mode and are given weight 1/2 each, which
    makes the result the exact lattice delta 1/a_t. ``kind="space"`` gives
    k chi(k (x - center)) renormalized so that a_x * sum = 1. The profile (default 1)
    is the spatial (resp. temporal) factor.
    """
    if kind == "time":
        k = int(k)
        if k < 0 or k > spec.nt // 2:
            raise LatticeError(f"time mollifier needs 0 <= k <= nt/2, got {k}")
        s = _wrap(spec.times - center, spec.beta)
        n = np.arange(1, k + 1)
        w = np.ones(k)
        if k == spec.nt // 2:
            w[-1] = 0.5
        nu = 2 * np.pi * n / spec.beta
        delta = (1 + 2 * np.cos(np.outer(s, nu)) @ w) / spec.beta
        prof = np.ones(spec.nx) if profile is None else np.asarray(profile, float)
        return TestFunction(np.outer(delta, prof), spec)
    if kind == "space":
        if k <= 0 or 2.0 / k > spec.length:
            raise LatticeError(f"space mollifier support 4/k does not fit the box (k={k})")
        d = _wrap(spec.positions - center, 2 * spec.length)
        bump = k * cubic_bspline(k * d)
        total = spec.a_x * bump.sum()
        if total <= 0:
            raise LatticeError(f"space mollifier with k={k} misses every lattice site")
        prof = np.ones(spec.nt) if profile is None else np.asarray(profile, float)
        return TestFunction(np.outer(prof, bump / total), spec)
    raise LatticeError(f"unknown mollifier kind {kind!r}")


# ---------------------------------------------------------------- Sobolev norms

def sobolev_norm(g, spec: LatticeSpec, order: float, on: str = "circle") -> float:
    """(sum |g_hat|^2 (omega^2 + m^2)^order * weight)^(1/2) for a one-variable function.

    ``on="circle"`` takes g on the nt time sites (omega = nu_n, weight 1);
    ``on="line"`` takes g on the nx space sites (omega = p_j, weight dp).
    """
    if order not in (-1, -0.5, 0.5):
        raise LatticeError(f"unsupported Sobolev order {order}")
    g = np.asarray(g, dtype=float)
    m2 = spec.mass**2
    if on == "circle":
        if g.shape != (spec.nt,):
            raise LatticeError("circle function must have nt entries")
        gh = spec.a_t / np.sqrt(spec.beta) * np.fft.fft(g)
        return float(np.sqrt(np.sum(np.abs(gh) ** 2 * (spec.nu**2 + m2) ** order)))
    if on == "line":
        if g.shape != (spec.nx,):
            raise LatticeError("line function must have nx entries")
        gh = spec.a_x / np.sqrt(2 * np.pi) * np.fft.fft(g)
        return float(np.sqrt(spec.dp * np.sum(np.abs(gh) ** 2 * (spec.p**2 + m2) ** order)))
    raise LatticeError(f"unknown domain {on!r}")


# ---------------------------------------------------------------- Klein-Gordon

def kg_evolve(phi0, pi0, t: float, spec: LatticeSpec):
    """Spectral Klein-Gordon flow on the spatial lattice.

    Each momentum mode rotates with omega = (p^2 + m^2)^(1/2); returns (phi_t, pi_t)
    with pi = d phi / dt.
    """
    phi0 = np.asarray(phi0, dtype=float)
    pi0 = np.asarray(pi0, dtype=float)
    if phi0.shape[-1] != spec.nx or pi0.shape != phi0.shape:
        raise LatticeError("Cauchy data must live on the nx spatial sites")
    w = np.sqrt(spec.p**2 + spec.mass**2)
    ph, pih = np.fft.fft(phi0, axis=-1), np.fft.fft(pi0, axis=-1)
    c, s = np.cos(w * t), np.sin(w * t)
    phi_t = np.fft.ifft(c * ph + s / w * pih, axis=-1).real
    pi_t = np.fft.ifft(-w * s * ph + c * pih, axis=-1).real
    return phi_t, pi_t


def symplectic_form(h1, h2, spec: LatticeSpec) -> float:
    """sigma(h1, h2) = a_x sum (phi1 pi2 - pi1 phi2) for Cauchy data h = (phi, pi)."""
    (phi1, pi1), (phi2, pi2) = h1, h2
    return float(spec.a_x * np.sum(np.asarray(phi1) * pi2 - np.asarray(pi1) * phi2))


def kg_energy_density(phi, pi, spec: LatticeSpec) -> np.ndarray:
    """1/2 (pi^2 + (d_x phi)^2 + m^2 phi^2) with a spectral derivative."""
    dphi = np.fft.ifft(1j * spec.p * np.fft.fft(phi)).real
    return 0.5 * (np.asarray(pi) ** 2 + dphi**2 + spec.mass**2 * np.asarray(phi) ** 2)


# ---------------------------------------------------------------- smooth profiles

@dataclass(frozen=True)
class ProfileTerm:
    """One separable term g(t) h(x).

    ``time_modes`` maps Matsubara index n to the unitary coefficient g_hat_n (the
    time factor is g(t) = beta^-1/2 sum_n g_hat_n e^{i nu_n t}); reality of g
    requires g_hat_{-n} = conj(g_hat_n), which the constructor enforces.
    ``space`` is a Gaussian bump amplitude * exp(-(x - center)^2 / (2 width^2)).
    """
    time_modes: Mapping[int, complex]
    amplitude: float = 1.0
    center: float = 0.0
    width: float = 0.3

    def __post_init__(self):
        modes = {int(n): complex(v) for n, v in self.time_modes.items()}
        for n, v in list(modes.items()):
            partner = modes.get(-n)
            if partner is None:
                modes[-n] = np.conj(v)
            elif abs(partner - np.conj(v)) > 1e-14 * (1 + abs(v)):
                raise LatticeError(f"time modes {n} and {-n} are not conjugate")
        object.__setattr__(self, "time_modes", dict(sorted(modes.items())))

    def h(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.exp(-0.5 * ((x - self.center) / self.width) ** 2)

    def g(self, t, beta: float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t, dtype=complex)
        for n, c in self.time_modes.items():
            out += c * np.exp(2j * np.pi * n * t / beta)
        return (out / np.sqrt(beta)).real


@dataclass(frozen=True)
class Profile:
    """A smooth test function f(t, x) = sum of separable terms.

    It is the common description fed to the lattice side (sampled on sites) and to
    the operator side (Matsubara coefficients of the slice f_x for any real x).
    """
    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def max_mode(self) -> int:
        return max((abs(n) for t in self.terms for n in t.time_modes), default=0)

    def support_radius(self, tol: float = 1e-16) -> float:
        """Half-width beyond which every Gaussian factor is below tol relative to its peak."""
        r = 0.0
        for t in self.terms:
            r = max(r, abs(t.center) + t.width * np.sqrt(2 * np.log(1 / tol)))
        return r

    def on_lattice(self, spec: LatticeSpec) -> TestFunction:
        data = np.zeros(spec.shape)
        for t in self.terms:
            data += np.outer(t.g(spec.times, spec.beta), t.h(spec.positions))
        return TestFunction(data, spec)

    def mode_coeffs(self, x, modes: Sequence[int]) -> np.ndarray:
        """Coefficients f_hat_n(x) for the listed n, shape (len(x), len(modes))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((x.size, len(modes)), dtype=complex)
        index = {n: i for i, n in enumerate(modes)}
        for t in self.terms:
            hx = t.h(x)
            for n, c in t.time_modes.items():
                if n not in index:
                    if abs(c) > 0:
                        raise LatticeError(f"profile mode {n} lies outside the kept modes")
                    continue
                out[:, index[n]] += c * hx
        return out

    def scaled(self, s: float) -> "Profile":
        return Profile(tuple(ProfileTerm(t.time_modes, t.amplitude * s, t.center, t.width)
                             for t in self.terms))

    def shifted(self, dx: float) -> "Profile":
        return Profile(tuple(ProfileTerm(t.time_modes, t.amplitude, t.center + dx, t.width)
                             for t in self.terms))

    def to_dict(self) -> dict:
        return {"terms": [
            {"time_modes": {str(n): [c.real, c.imag] for n, c in t.time_modes.items() if n >= 0},
             "amplitude": t.amplitude, "center": t.center, "width": t.width}
            for t in self.terms]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Profile":
        terms = []
        for t in d["terms"]:
            modes = {}
            for n, v in t["time_modes"].items():
                modes[int(n)] = complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)
            terms.append(ProfileTerm(modes, float(t.get("amplitude", 1.0)),
                                     float(t.get("center", 0.0)), float(t.get("width", 0.3))))
        return cls(tuple(terms))


# ---------------------------------------------------------------- field dumps

_MAGIC = b"PHI2FLD1"


def write_fields(path, fields: np.ndarray, spec: LatticeSpec) -> None:
    """Binary dump: 32-byte header, JSON spec, then float64 little-endian data.

    Header layout: 8-byte magic, uint64 JSON byte length, uint64 field count,
    8 reserved zero bytes. Data is row-major with t outer and x inner.
    """
    fields = np.asarray(fields, dtype="<f8")
    if fields.ndim == 2:
        fields = fields[None]
    if fields.shape[1:] != spec.shape:
        raise LatticeError("field dump shape does not match spec")
    meta = spec.to_json().encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<QQQ", len(meta), fields.shape[0], 0))
        fh.write(meta)
        fh.write(np.ascontiguousarray(fields).tobytes())


def read_fields(path) -> tuple[np.ndarray, LatticeSpec]:
    with open(path, "rb") as fh:
        head = fh.read(32)
        if len(head) != 32 or head[:8] != _MAGIC:
            raise LatticeError(f"{path} is not a field dump")
        nmeta, count, _ = struct.unpack("<QQQ", head[8:])
        spec = LatticeSpec.from_json(fh.read(nmeta).decode())
        data = np.frombuffer(fh.read(), dtype="<f8")
    return data.reshape(count, spec.nt, spec.nx).astype(float), spec

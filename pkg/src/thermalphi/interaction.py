"""Wick-ordered interactions on the lattice and the perturbed measure mu_l.

The local density is :P(phi(t, x)):_c with c the exact lattice site variance of the
kernel, so Wick centering holds exactly under the lattice Gaussian measure. The
spatial window [-l, l] selects the sites with |x_i| <= l.

Two slicings of the same total action are provided: by time (V_l at each time,
the thermal line picture) and by space (V_C at each position, the circle picture).
Their equality per configuration is the lattice form of Nelson symmetry.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .covariance import CovKernel
from .gaussian import _sample_rng, sample_free
from .lattice import LatticeError, LatticeSpec, as_array, reflect_time
from .stats import (Estimate, bootstrap, effective_sample_size, mean_estimate,
                    normalized_weights, weighted_mean)
from .wick import WickPolynomial


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class InteractionSpec:
    """Physical polynomial P (monomial coefficients) and the spatial cutoff l."""
    coeffs: tuple
    cutoff_l: float
    wick_constant: float | None = None  # None: use the kernel's lattice variance

    def __post_init__(self):
        cs = self.coeffs
        if isinstance(cs, WickPolynomial):
            cs = cs.coeffs
        cs = tuple(float(c) for c in cs)
        object.__setattr__(self, "coeffs", cs)
        if self.cutoff_l <= 0:
            raise LatticeError("cutoff l must be positive")
        p = WickPolynomial(cs, 0, exact=False)
        if not p.is_bounded_below():
            raise LatticeError("interaction polynomial must have even degree and positive leading coefficient")

    @property
    def is_free(self) -> bool:
        return all(c == 0 for c in self.coeffs)

    def wick_poly(self, kernel: CovKernel) -> WickPolynomial:
        c = kernel.wick_constant if self.wick_constant is None else self.wick_constant
        return WickPolynomial(self.coeffs, c, exact=False)


def window_mask(spec: LatticeSpec, l: float) -> np.ndarray:
    if l > spec.length * (1 + 1e-12):
        raise LatticeError(f"cutoff l={l} exceeds the box half-length {spec.length}")
    return np.abs(spec.positions) <= l + 1e-9 * spec.a_x


def local_density(fields, kernel: CovKernel, interaction: InteractionSpec) -> np.ndarray:
    """:P(phi):_c at every site (window not applied)."""
    return interaction.wick_poly(kernel)(as_array(fields))


def eval_V0(fields, t_index: int, kernel: CovKernel, interaction: InteractionSpec) -> np.ndarray:
    """V_l at time slice t: a_x sum_{|x| <= l} :P(phi(t, x)):."""
    spec = kernel.spec
    phi = as_array(fields)[..., t_index, :]
    mask = window_mask(spec, interaction.cutoff_l)
    return spec.a_x * interaction.wick_poly(kernel)(phi[..., mask]).sum(axis=-1)


def eval_VC(fields, x_index: int, kernel: CovKernel, interaction: InteractionSpec) -> np.ndarray:
    """V_C at spatial site x: a_t sum_t :P(phi(t, x)):."""
    spec = kernel.spec
    phi = as_array(fields)[..., :, x_index]
    return spec.a_t * interaction.wick_poly(kernel)(phi).sum(axis=-1)


@dataclass(frozen=True)
class FknWeight:
    log_weight: np.ndarray
    interval: tuple
    which: str

    @property
    def weight(self) -> np.ndarray:
        return np.exp(self.log_weight)


def fkn_weight(fields, kernel: CovKernel, interaction: InteractionSpec,
               window: tuple | None = None, which: str = "time") -> FknWeight:
    """-sum over slices in the window of (slice measure) * V(slice).

    ``which="time"`` slices by time sites t in [a, b) (times taken in
    [-beta/2, beta/2)); ``which="space"`` slices by space sites x in [a, b]
    intersected with [-l, l]. ``window=None`` is the full window.
    """
    spec = kernel.spec
    phi = as_array(fields)
    dens = local_density(phi, kernel, interaction)
    mask = window_mask(spec, interaction.cutoff_l)
    dens = dens[..., mask]
    if which == "time":
        a, b = window if window is not None else (-spec.beta / 2, spec.beta / 2)
        if a < -spec.beta / 2 - 1e-12 or b > spec.beta / 2 + 1e-12 or a > b:
            raise LatticeError("time window must lie in [-beta/2, beta/2]")
        t = spec.centered_times()
        sel = (t >= a - 1e-12 * spec.beta) & (t < b - 1e-12 * spec.beta)
        if window is None or (b - a) >= spec.beta - 1e-12:
            sel = np.ones(spec.nt, dtype=bool)
        per_slice = spec.a_x * dens.sum(axis=-1)  # V_l(t)
        lw = -spec.a_t * per_slice[..., sel].sum(axis=-1)
        return FknWeight(lw, (a, b), which)
    if which == "space":
        l = interaction.cutoff_l
        a, b = window if window is not None else (-l, l)
        if a < -l - 1e-12 or b > l + 1e-12 or a > b:
            raise LatticeError("space window must lie in [-l, l]")
        x = spec.positions[mask]
        sel = (x >= a - 1e-9 * spec.a_x) & (x <= b + 1e-9 * spec.a_x)
        per_slice = spec.a_t * dens.sum(axis=-2)  # V_C(x)
        lw = -spec.a_x * per_slice[..., sel].sum(axis=-1)
        return FknWeight(lw, (a, b), which)
    raise ValueError(f"unknown slicing {which!r}")


def jensen_sides(fields, kernel: CovKernel, interaction: InteractionSpec, window: tuple):
    """Per-sample G_[a,b] and the average over window sites of e^{-(b-a) V_C(x)}.

    Jensen's inequality makes the first at most the second sample by sample, with
    b - a the lattice length of the window.
    """
    spec = kernel.spec
    g = fkn_weight(fields, kernel, interaction, window, "space").weight
    mask = window_mask(spec, interaction.cutoff_l)
    x = spec.positions
    a, b = window
    sel = mask & (x >= a - 1e-9 * spec.a_x) & (x <= b + 1e-9 * spec.a_x)
    width = sel.sum() * spec.a_x
    vc = spec.a_t * local_density(fields, kernel, interaction)[..., sel].sum(axis=-2)
    return g, np.exp(-width * vc).mean(axis=-1)


# ---------------------------------------------------------------- ensembles

@dataclass
class WeightedEnsemble:
    """Observable values recorded along a sampler run, with their weights.

    For reweighting the log weights are the FKN weights of Gaussian samples; for
    Metropolis they are zero and ``batch`` labels blocks used for error bars.
    """
    method: str
    log_weights: np.ndarray
    values: dict
    seed: int
    z: Estimate
    ess: float
    acceptance: float | None = None
    batch: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.log_weights)

    @property
    def weights(self) -> np.ndarray:
        return normalized_weights(self.log_weights)

    def mean(self, name_or_values) -> Estimate:
        v = self.values[name_or_values] if isinstance(name_or_values, str) else name_or_values
        v = np.asarray(v, dtype=float)
        if self.method == "metropolis":
            return _batch_mean(v, self.batch, self.seed)
        return weighted_mean(v, self.log_weights, self.seed)

    def ratio(self, num, den) -> Estimate:
        """E[num]/E[den] under the ensemble, errors by jackknife over 50 blocks."""
        num = np.asarray(num, float)
        den = np.asarray(den, float)
        w = self.weights if self.method != "metropolis" else np.full(self.n, 1.0 / self.n)
        r = np.sum(w * num) / np.sum(w * den)
        blocks = np.array_split(np.arange(self.n), 50)
        jk = []
        for b in blocks:
            keep = np.ones(self.n, bool)
            keep[b] = False
            jk.append(np.sum(w[keep] * num[keep]) / np.sum(w[keep] * den[keep]))
        jk = np.array(jk)
        k = len(jk)
        err = math.sqrt((k - 1) / k * np.sum((jk - jk.mean()) ** 2))
        return Estimate(float(r), err, self.n, self.seed)


def _batch_mean(v, batch, seed) -> Estimate:
    labels = np.unique(batch)
    means = np.array([v[batch == b].mean() for b in labels])
    return Estimate(float(means.mean()), float(means.std(ddof=1) / math.sqrt(len(means))),
                    len(v), seed)


def sample_interacting(kernel: CovKernel, interaction: InteractionSpec, method: str = "reweight",
                       seed: int = 0, n: int = 10000, observables: Mapping[str, Callable] | None = None,
                       batch_size: int = 1000, min_ess_fraction: float = 0.05,
                       **metropolis_options) -> WeightedEnsemble:
    """Draw from mu_l and record ``observables`` (each maps a field batch to per-sample values).

    ``reweight`` weights Gaussian samples by the full-window FKN factor; it refuses
    to return when the effective sample size drops below ``min_ess_fraction * n``.
    ``metropolis`` runs site-update chains on 1/2 phi C^-1 phi + sum :P:.
    """
    observables = dict(observables or {})
    if method == "reweight":
        logw = np.empty(n)
        vals = {k: [] for k in observables}
        i = 0
        while i < n:
            k = min(batch_size, n - i)
            batch = sample_free(kernel, seed, k, start=i)
            logw[i:i + k] = 0.0 if interaction.is_free else \
                fkn_weight(batch, kernel, interaction).log_weight
            for name, fn in observables.items():
                vals[name].append(np.asarray(fn(batch)))
            i += k
        values = {k: np.concatenate(v, axis=0) for k, v in vals.items()}
        ess = effective_sample_size(logw)
        if ess < min_ess_fraction * n:
            raise SamplingError(f"effective sample size {ess:.0f} < {min_ess_fraction} n; "
                                "weights degenerate, use method='metropolis'")
        z = _log_mean_exp_estimate(logw, seed)
        return WeightedEnsemble("reweight", logw, values, seed, z, ess)
    if method == "metropolis":
        return _metropolis(kernel, interaction, seed, n, observables, **metropolis_options)
    raise ValueError(f"unknown sampling method {method!r}")


def _log_mean_exp_estimate(logw, seed) -> Estimate:
    m = logw.max()
    w = np.exp(logw - m)
    mu = w.mean()
    return Estimate(float(mu * math.exp(m)), float(w.std(ddof=1) / math.sqrt(len(w)) * math.exp(m)),
                    len(w), seed)


# ---------------------------------------------------------------- Metropolis

def _metropolis_kernel():
    import numba

    @numba.njit(cache=True)
    def sweeps(phi, mphi, prec, nt, nx, poly, mask, vol_el, step, normals, uniforms, out_accept):
        ns = nt * nx
        m00 = prec[0]
        acc = 0
        for sw in range(normals.shape[0]):
            for s in range(ns):
                d = step * normals[sw, s]
                old = phi[s]
                new = old + d
                dS = d * mphi[s] + 0.5 * d * d * m00
                if mask[s]:
                    po = 0.0
                    pn = 0.0
                    for k in range(poly.shape[0] - 1, -1, -1):
                        po = po * old + poly[k]
                        pn = pn * new + poly[k]
                    dS += vol_el * (pn - po)
                if dS <= 0.0 or uniforms[sw, s] < np.exp(-dS):
                    phi[s] = new
                    acc += 1
                    ts = s // nx
                    xs = s % nx
                    for r in range(ns):
                        tr = r // nx
                        xr = r % nx
                        off = ((tr - ts) % nt) * nx + ((xr - xs) % nx)
                        mphi[r] += d * prec[off]
        out_accept[0] += acc

    return sweeps


_SWEEPS = None


def _metropolis(kernel, interaction, seed, n, observables, n_chains: int = 4, burn_in: int = 1000,
                thin: int = 10, step: float | None = None, batches_per_chain: int = 10):
    global _SWEEPS
    if _SWEEPS is None:
        _SWEEPS = _metropolis_kernel()
    spec = kernel.spec
    nt, nx = spec.shape
    ns = nt * nx
    prec = _precision(kernel)
    poly = np.array(WickPolynomial(interaction.coeffs, interaction.wick_poly(kernel).wick_constant,
                                   exact=False).monomial_coeffs(), dtype=float)
    mask2d = np.broadcast_to(window_mask(spec, interaction.cutoff_l), spec.shape).ravel().copy()
    vol = spec.a_t * spec.a_x
    per_chain = int(math.ceil(n / n_chains))
    step0 = step if step is not None else 1.0 / math.sqrt(prec[0])
    kept_all, chain_batches = [], []
    accepted = 0
    proposed = 0
    for c in range(n_chains):
        rng = np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, c, 1]))
        phi = sample_free(kernel, seed + 7919 * (c + 1), 1)[0].ravel().copy()
        mphi = _apply_precision(prec, phi, nt, nx)
        st = step0
        acc = np.zeros(1, dtype=np.int64)
        for blk in range(burn_in // 50 + (burn_in % 50 > 0)):
            k = min(50, burn_in - 50 * blk)
            acc[0] = 0
            _SWEEPS(phi, mphi, prec, nt, nx, poly, mask2d, vol, st,
                    rng.standard_normal((k, ns)), rng.random((k, ns)), acc)
            rate = acc[0] / (k * ns)
            st *= 1.1 if rate > 0.5 else 0.9
        kept = np.empty((per_chain, ns))
        acc[0] = 0
        for i in range(per_chain):
            _SWEEPS(phi, mphi, prec, nt, nx, poly, mask2d, vol, st,
                    rng.standard_normal((thin, ns)), rng.random((thin, ns)), acc)
            kept[i] = phi
        accepted += acc[0]
        proposed += per_chain * thin * ns
        kept_all.append(kept.reshape(per_chain, nt, nx))
        chain_batches.append(c * batches_per_chain
                             + np.minimum(np.arange(per_chain) * batches_per_chain // per_chain,
                                          batches_per_chain - 1))
    fields = np.concatenate(kept_all)[:n]
    batch = np.concatenate(chain_batches)[:n]
    rate = accepted / proposed
    if not 0.2 <= rate <= 0.8:
        warnings.warn(f"Metropolis acceptance {rate:.2f} outside [0.2, 0.8]")
    values = {name: np.asarray(fn(fields)) for name, fn in observables.items()}
    # 1/Z = E_mu[e^{+V}] relative to the Gaussian reference
    v = -fkn_weight(fields, kernel, interaction).log_weight
    inv = _batch_mean(np.exp(v - v.max()), batch, seed)
    zval = math.exp(-v.max()) / inv.value
    z = Estimate(zval, zval * inv.stderr / inv.value, len(fields), seed)
    return WeightedEnsemble("metropolis", np.zeros(len(fields)), values, seed, z,
                            float(len(fields)), rate, batch)


def _precision(kernel: CovKernel) -> np.ndarray:
    mult = kernel.multiplier
    if np.any(mult <= 0):
        raise LatticeError("Metropolis needs an invertible covariance (no time cutoff)")
    n = kernel.spec.nt * kernel.spec.nx
    # site covariance has eigenvalues n mult / V, so C^-1 has V / (n mult)
    return np.fft.ifft2(kernel.volume / (n * mult)).real.ravel()


def _apply_precision(prec, phi, nt, nx):
    row = prec.reshape(nt, nx)
    return np.fft.ifft2(np.fft.fft2(row) * np.fft.fft2(phi.reshape(nt, nx))).real.ravel()


# ---------------------------------------------------------------- exact quadratic case

def quadratic_exact(kernel: CovKernel, sigma: float, l: float, f=None):
    """Exact Z_l and C'(f, f) for P = sigma x^2 Wick ordered against the lattice variance.

    The weight exp(-sigma a_t a_x sum_{|x|<=l} (phi^2 - c)) is Gaussian, so
    Z = det(1 + A C_mm)^(-1/2) e^{A N c / 2} with A = 2 sigma a_t a_x and the
    perturbed covariance follows from the Woodbury identity.
    """
    spec = kernel.spec
    nt, nx = spec.shape
    row = kernel.site_covariance
    ti, xi = np.meshgrid(np.arange(nt), np.arange(nx), indexing="ij")
    ti, xi = ti.ravel(), xi.ravel()
    full = row[(ti[None, :] - ti[:, None]) % nt, (xi[None, :] - xi[:, None]) % nx]
    m = np.broadcast_to(window_mask(spec, l), spec.shape).ravel()
    A = 2 * sigma * spec.a_t * spec.a_x
    cmm = full[np.ix_(m, m)]
    c = kernel.wick_constant
    sign, logdet = np.linalg.slogdet(np.eye(m.sum()) + A * cmm)
    z = math.exp(-0.5 * logdet + 0.5 * A * m.sum() * c)
    if f is None:
        return z, None
    fv = spec.a_t * spec.a_x * np.asarray(getattr(f, "data", f), float).ravel()
    cf = full @ fv
    corr = cf[m] @ np.linalg.solve(np.eye(m.sum()) / A + cmm, cf[m])
    return z, float(fv @ cf - corr)


# ---------------------------------------------------------------- OS positivity

@dataclass(frozen=True)
class GramResult:
    min_eig: float
    stderr: float
    matrix: np.ndarray


def sharp_time_pairings(fields, spec: LatticeSpec, t_indices: Sequence[int], profiles) -> np.ndarray:
    """phi(t_a, h_a) = a_x sum_x h_a(x) phi(t_a, x) for each (t_a, h_a); shape (n, m)."""
    phi = as_array(fields)
    h = np.stack([np.asarray(p, float) for p in profiles])
    t = np.asarray(t_indices)
    return spec.a_x * np.einsum("nax,ax->na", phi[:, t, :], h)


def weyl_family(fields, spec: LatticeSpec, t_indices, profiles):
    """Values of F_a = e^{i phi(t_a, h_a)} on the fields and on their time reflections."""
    t = np.asarray(t_indices)
    f = np.exp(1j * sharp_time_pairings(fields, spec, t, profiles))
    fr = np.exp(1j * sharp_time_pairings(fields, spec, (-t) % spec.nt, profiles))
    return f, fr


def os_positivity_gram(values, reflected_values, log_weights=None, rounds: int = 200,
                       seed: int = 0) -> GramResult:
    """Smallest eigenvalue of M_ab = E[conj(F_a(r phi)) F_b(phi)], with bootstrap error."""
    f = np.asarray(values)
    fr = np.asarray(reflected_values)
    n, m = f.shape
    if n < m:
        raise ValueError("fewer samples than functionals")
    w = np.full(n, 1.0 / n) if log_weights is None else normalized_weights(log_weights)

    def gram(idx, w=w):
        ww = w[idx] / w[idx].sum()
        g = (np.conj(fr[idx]) * ww[:, None]).T @ f[idx]
        return 0.5 * (g + g.conj().T)

    full = gram(np.arange(n))
    lam = float(np.linalg.eigvalsh(full)[0])
    boots = bootstrap(lambda idx: np.linalg.eigvalsh(gram(idx))[0], n, rounds, seed)
    return GramResult(lam, float(np.std(boots, ddof=1)), full)


def os_gram_free(kernel: CovKernel, t_indices, profiles) -> GramResult:
    """Exact Gram matrix exp(-C(f_b - r f_a)/2) for Weyl functionals of sharp-time fields."""
    spec = kernel.spec
    fs = []
    for t, h in zip(t_indices, profiles):
        d = np.zeros(spec.shape)
        d[t] = np.asarray(h, float) / spec.a_t
        fs.append(d)
    m = len(fs)
    from .covariance import quad_C
    g = np.empty((m, m))
    for a in range(m):
        ra = reflect_time(fs[a])
        for b in range(m):
            g[a, b] = math.exp(-0.5 * quad_C(kernel, fs[b] - ra))
    g = 0.5 * (g + g.T)
    return GramResult(float(np.linalg.eigvalsh(g)[0]), 0.0, g)

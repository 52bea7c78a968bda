"""Sampling the free Gaussian measure with covariance C and its exact moments.

A field is the real part of a complex Gaussian series,

    phi(t, x) = Re sum_{n,j} sqrt(mult_nj / (beta 2L)) z_nj e^{i (nu_n t + p_j x)},

with z_nj independent standard complex normals (E|z|^2 = 2). Taking the real part
realizes the Hermitian symmetry of a real field: mode (n, j) and its mirror
(-n, -j) share the variance, and the self-conjugate modes (n, j in {0, Nyquist})
come out real with the same variance. Sample number i of seed s is drawn from a
Philox stream with key s and counter block i, so any sample can be regenerated
on its own and batching never changes the values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .covariance import CovKernel, quad_C
from .lattice import fourier, pair
from .stats import Estimate, mean_estimate

RNG_ALGORITHM = "philox4x64-10/per-sample-counter"


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, int(index), 0]))


@dataclass(frozen=True)
class SampleStream:
    kernel: CovKernel
    seed: int
    count: int
    start: int = 0
    rng_algorithm: str = RNG_ALGORITHM

    def batches(self, batch_size: int = 1000) -> Iterator[np.ndarray]:
        i = self.start
        stop = self.start + self.count
        while i < stop:
            k = min(batch_size, stop - i)
            yield sample_free(self.kernel, self.seed, k, start=i)
            i += k


def sample_free(kernel: CovKernel, seed: int, n: int, start: int = 0) -> np.ndarray:
    """Fields ``start .. start+n-1`` of the stream ``seed``; shape (n, nt, nx)."""
    spec = kernel.spec
    nt, nx = spec.shape
    amp = np.sqrt(kernel.multiplier / kernel.volume) * (nt * nx)
    z = np.empty((n, nt, nx), dtype=complex)
    for i in range(n):
        r = _sample_rng(seed, start + i).standard_normal((2, nt, nx))
        z[i] = r[0] + 1j * r[1]
    return np.fft.ifft2(z * amp, axes=(-2, -1)).real


def stream_pairings(kernel: CovKernel, seed: int, n: int, fns, batch_size: int = 1000,
                    start: int = 0) -> np.ndarray:
    """phi(f) for every sample and every f in ``fns``; shape (n, len(fns))."""
    spec = kernel.spec
    fs = np.stack([np.asarray(getattr(f, "data", f), float) for f in fns])
    out = np.empty((n, len(fs)))
    for lo, batch in _enumerate_batches(kernel, seed, n, batch_size, start):
        out[lo:lo + len(batch)] = spec.a_t * spec.a_x * np.einsum("btx,ftx->bf", batch, fs)
    return out


def stream_observable(kernel: CovKernel, seed: int, n: int, observable: Callable,
                      batch_size: int = 1000, start: int = 0) -> np.ndarray:
    """Apply ``observable(batch) -> (batch, ...)`` across the stream and concatenate."""
    parts = [observable(b) for _, b in _enumerate_batches(kernel, seed, n, batch_size, start)]
    return np.concatenate(parts, axis=0)


def _enumerate_batches(kernel, seed, n, batch_size, start=0):
    i = 0
    while i < n:
        k = min(batch_size, n - i)
        yield i, sample_free(kernel, seed, k, start=start + i)
        i += k


# ---------------------------------------------------------------- exact values

def generating_functional_free(kernel: CovKernel, f) -> float:
    """int e^{i phi(f)} d phi_C = exp(-C(f, f)/2)."""
    return math.exp(-0.5 * quad_C(kernel, f))


def moment_free(kernel: CovKernel, f, p: int) -> float:
    """E[phi(f)^p] = 0 for odd p, (p-1)!! C(f,f)^(p/2) for even p."""
    if p < 1:
        raise ValueError("moment order must be >= 1")
    if p % 2:
        return 0.0
    return double_factorial(p - 1) * quad_C(kernel, f) ** (p // 2)


def double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


# ---------------------------------------------------------------- estimators

def mc_generating_functional(values, seed=None) -> Estimate:
    """Real part of the sample mean of e^{i phi(f)} given the sampled phi(f)."""
    return mean_estimate(np.cos(np.asarray(values)), seed)


def mc_moment(values, p: int, seed=None) -> Estimate:
    return mean_estimate(np.asarray(values) ** p, seed)


def mode_variance(fields, kernel: CovKernel):
    """Per-mode dp * |phi_hat(n, j)|^2: sample mean and standard error, both (nt, nx).

    Its expectation is the multiplier entry of the sampled kernel.
    """
    spec = kernel.spec
    acc = np.zeros(spec.shape)
    acc2 = np.zeros(spec.shape)
    n = 0
    for batch in fields:
        v = spec.dp * np.abs(fourier(batch, spec)) ** 2
        acc += v.sum(axis=0)
        acc2 += (v**2).sum(axis=0)
        n += len(v)
    mean = acc / n
    var = (acc2 / n - mean**2) * n / (n - 1)
    return mean, np.sqrt(np.maximum(var, 0) / n)


def characteristic_derivative(values, order: int, step: float, seed=None) -> Estimate:
    """Central finite difference of lambda -> E[e^{i lambda phi(f)}] at 0.

    Returns the real part of the derivative estimate for order 1 or 2, computed per
    sample so that the standard error covers the Monte Carlo part.
    """
    v = np.asarray(values, dtype=float)
    h = step
    if order == 1:
        per = (np.exp(1j * h * v) - np.exp(-1j * h * v)) / (2 * h)
        per = per.imag  # derivative is i E[phi]; report E[phi] analogue
    elif order == 2:
        per = ((np.exp(1j * h * v) - 2 + np.exp(-1j * h * v)) / h**2).real
    else:
        raise ValueError("order must be 1 or 2")
    return mean_estimate(per, seed)

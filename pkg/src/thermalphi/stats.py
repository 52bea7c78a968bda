"""Monte Carlo bookkeeping: estimates with standard errors, weighted means, bootstrap."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int
    seed: int | None = None

    def pull(self, exact: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.value == exact else math.inf
        return abs(self.value - exact) / self.stderr

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def __format__(self, spec):
        return f"{self.value:{spec or '.6g'}} +- {self.stderr:.2g}"


def mean_estimate(values, seed=None) -> Estimate:
    v = np.asarray(values, dtype=float)
    n = v.size
    return Estimate(float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)), n, seed)


def weighted_mean(values, log_weights, seed=None) -> Estimate:
    """Self-normalized importance-sampling mean with delta-method error."""
    v = np.asarray(values, dtype=float)
    w = normalized_weights(log_weights)
    mu = float(np.sum(w * v))
    n = v.size
    err = math.sqrt(float(np.sum(w**2 * (v - mu) ** 2)))
    return Estimate(mu, err, n, seed)


def normalized_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - lw.max())
    return w / w.sum()


def effective_sample_size(log_weights) -> float:
    w = normalized_weights(log_weights)
    return float(1.0 / np.sum(w**2))


def ratio_estimate(num, den, seed=None) -> Estimate:
    """Mean(num)/mean(den) over paired samples with delta-method error."""
    a, b = np.asarray(num, float), np.asarray(den, float)
    n = a.size
    ma, mb = a.mean(), b.mean()
    r = ma / mb
    resid = (a - r * b) / mb
    return Estimate(float(r), float(resid.std(ddof=1) / math.sqrt(n)), n, seed)


def combine_chains(chain_means, seed=None, n_total=None) -> Estimate:
    """Merge independent chain means; the error is the between-chain spread."""
    m = np.asarray(chain_means, dtype=float)
    k = m.size
    return Estimate(float(m.mean()), float(m.std(ddof=1) / math.sqrt(k)),
                    int(n_total if n_total is not None else k), seed)


def bootstrap(statistic, n: int, rounds: int = 200, seed: int = 0) -> np.ndarray:
    """Evaluate ``statistic(index_array)`` on bootstrap resamples of range(n)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    return np.array([statistic(rng.integers(0, n, n)) for _ in range(rounds)])

"""Time-series estimators: integrated autocorrelation time and error bars."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Normalised autocorrelation function via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return np.ones(1)
    y = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, size)
    acf = np.fft.irfft(f * np.conjugate(f), size)[:n]
    if acf[0] <= 0.0:
        return np.concatenate([[1.0], np.zeros(n - 1)])
    return acf / acf[0]


def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """tau_int = 1/2 + sum_t rho(t) with Sokal's automatic window (M >= c tau)."""
    rho = autocorrelation(x)
    if rho.size < 2:
        return 0.5
    taus = 0.5 + np.cumsum(rho[1:])
    window = np.arange(1, rho.size)
    ok = window >= c * taus
    m = int(np.argmax(ok)) if ok.any() else rho.size - 2
    return max(0.5, float(taus[m]))


@dataclass
class EstimatorSeries:
    name: str
    values: np.ndarray
    sweeps: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(self.values.mean()) if self.n else math.nan

    @property
    def std(self) -> float:
        return float(self.values.std(ddof=1)) if self.n > 1 else 0.0

    @property
    def tau_int(self) -> float:
        return integrated_autocorr_time(self.values)

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return math.inf
        return self.std * math.sqrt(2.0 * self.tau_int / self.n)

    def summary(self) -> dict:
        return {
            "observable": self.name,
            "mean": self.mean,
            "stderr": self.stderr,
            "tau_int": self.tau_int,
            "n_samples": self.n,
        }


@dataclass(frozen=True)
class Estimate:
    """A merged or derived estimate with an error bar."""

    name: str
    mean: float
    stderr: float
    tau_int: float
    n_samples: int

    def summary(self) -> dict:
        return {
            "observable": self.name,
            "mean": self.mean,
            "stderr": self.stderr,
            "tau_int": self.tau_int,
            "n_samples": self.n_samples,
        }


def merge_estimates(parts) -> Estimate:
    """Combine independent chains; the result does not depend on their order."""
    parts = sorted(parts, key=lambda p: (p.mean, p.stderr, p.n_samples))
    if not parts:
        raise ValueError("nothing to merge")
    n = sum(p.n_samples for p in parts)
    w = np.array([p.n_samples / n for p in parts])
    mean = float(np.sum(w * np.array([p.mean for p in parts])))
    se = float(np.sqrt(np.sum((w * np.array([p.stderr for p in parts])) ** 2)))
    tau = float(np.sum(w * np.array([p.tau_int for p in parts])))
    return Estimate(parts[0].name, mean, se, tau, n)


def as_estimate(s) -> Estimate:
    if isinstance(s, Estimate):
        return s
    return Estimate(s.name, s.mean, s.stderr, s.tau_int, s.n)


def covariance(a: EstimatorSeries, b: EstimatorSeries, n_blocks: int = 20) -> Estimate:
    """cov(a, b) from paired series with a blocked jackknife error."""
    x, y = a.values, b.values
    if x.shape != y.shape:
        raise ValueError("series must be paired")
    n = x.size
    cov = float(np.mean(x * y) - x.mean() * y.mean())
    n_blocks = max(2, min(n_blocks, n))
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    jk = []
    for k in range(n_blocks):
        mask = np.ones(n, dtype=bool)
        mask[edges[k] : edges[k + 1]] = False
        xs, ys = x[mask], y[mask]
        jk.append(np.mean(xs * ys) - xs.mean() * ys.mean())
    jk = np.array(jk)
    se = float(np.sqrt((n_blocks - 1) / n_blocks * np.sum((jk - jk.mean()) ** 2)))
    return Estimate(f"cov({a.name},{b.name})", cov, se, max(a.tau_int, b.tau_int), n)


def joint_separation(a, b) -> float:
    """(a - b) in units of the joint standard error."""
    a, b = as_estimate(a), as_estimate(b)
    se = math.hypot(a.stderr, b.stderr)
    return (a.mean - b.mean) / se if se > 0 else math.copysign(math.inf, a.mean - b.mean)

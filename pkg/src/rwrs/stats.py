"""Goodness-of-fit and moment estimators used by the experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import UsageError

MAX_MOMENT_ORDER = 8
JACKKNIFE_BLOCKS = 50


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float
    n: int
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "n": self.n, "degenerate": self.degenerate}


def ks_statistic(samples, variance: float) -> KSResult:
    """One-sample KS test against N(0, variance), asymptotic p-value.

    The p-value is the Kolmogorov limit law evaluated at sqrt(n) * D.
    All-equal samples are reported as statistic 1, p-value 0, degenerate.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise UsageError("KS test needs at least one sample")
    if not variance > 0:
        raise UsageError(f"variance must be positive, got {variance}")
    if x[0] == x[-1]:
        return KSResult(1.0, 0.0, n, True)
    cdf = special.ndtr(x / math.sqrt(variance))
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    return KSResult(d, float(special.kolmogorov(math.sqrt(n) * d)), n)


def gaussian_moment(order: int, variance: float) -> float:
    """E[G^order] for G ~ N(0, variance): (order-1)!! variance^(order/2), 0 if odd."""
    if order % 2:
        return 0.0
    return float(special.factorial2(order - 1, exact=True)) * variance ** (order // 2)


@dataclass(frozen=True)
class MomentEstimates:
    orders: tuple
    moments: tuple
    stderr: tuple
    targets: tuple | None = None

    def get(self, order: int) -> float:
        return self.moments[self.orders.index(order)]

    def se(self, order: int) -> float:
        return self.stderr[self.orders.index(order)]

    def as_dict(self) -> dict:
        out = {"orders": list(self.orders), "moments": list(self.moments), "stderr": list(self.stderr)}
        if self.targets is not None:
            out["targets"] = list(self.targets)
        return out


def _block_jackknife_se(values: np.ndarray, blocks: int) -> float:
    n = values.size
    g = min(blocks, n)
    if g < 2:
        return float("nan")
    edges = np.linspace(0, n, g + 1).astype(np.int64)
    sums = np.add.reduceat(values, edges[:-1])
    sizes = np.diff(edges)
    total = sums.sum()
    loo = (total - sums) / (n - sizes)
    mean_loo = loo.mean()
    return float(math.sqrt((g - 1) / g * np.sum((loo - mean_loo) ** 2)))


def empirical_moments(samples, K: int, variance: float | None = None, blocks: int = JACKKNIFE_BLOCKS) -> MomentEstimates:
    """Raw moments of orders 1..K with delete-one-block jackknife errors."""
    if not 1 <= K <= MAX_MOMENT_ORDER:
        raise UsageError(f"moment order must be in 1..{MAX_MOMENT_ORDER}, got {K}")
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise UsageError("no samples")
    orders = tuple(range(1, K + 1))
    moments, errs = [], []
    power = np.ones_like(x)
    for _ in orders:
        power = power * x
        moments.append(math.fsum(power.tolist()) / x.size)
        errs.append(_block_jackknife_se(power, blocks))
    targets = None if variance is None else tuple(gaussian_moment(k, variance) for k in orders)
    return MomentEstimates(orders, tuple(moments), tuple(errs), targets)


def sample_variance(x) -> float:
    """Second moment about zero (the targets are centered laws)."""
    x = np.asarray(x, dtype=float)
    return math.fsum((x * x).tolist()) / x.size


def loglog_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])

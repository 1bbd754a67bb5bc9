"""Limit constants of the CLTs and estimators for the non-closed-form inputs."""

from __future__ import annotations

import decimal
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from . import _kernels
from ._parallel import map_blocks
from ._rng import Stream
from .errors import DomainError, ResourceError, UsageError
from .occupation import ExpectedLocalTimeTable
from .walks import RenewalFinite, SimpleWalk, Theorem, covariance, validate

# Default cap on the number of sites of an exact expected local-time table.
LOCALTIME_BUDGET = 50_000_000
# Default cap on t_m.
HORIZON_BUDGET = 10**9
# Cap on terms when summing the transient variance series.
_SERIES_MAX_TERMS = 10**9


@dataclass(frozen=True)
class VarianceTarget:
    theorem: Theorem
    value: float
    ingredients: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"theorem": self.theorem.value, "value": self.value, "ingredients": self.ingredients}


def variance_renewal(m: float) -> float:
    """1 - 1/m; m = 1 (unit steps) gives the degenerate value 0."""
    m = float(m)
    if not m >= 1.0:
        raise DomainError(f"mean step m must be >= 1, got {m}")
    return 1.0 - 1.0 / m


def variance_planar(sigma_matrix) -> float:
    """(2 pi sqrt(det Sigma))^-1 for a 2x2 positive definite Sigma."""
    s = np.asarray(sigma_matrix, dtype=float)
    if s.shape != (2, 2):
        raise DomainError(f"covariance must be 2x2, got shape {s.shape}")
    if not np.allclose(s, s.T, rtol=0, atol=1e-12):
        raise DomainError("covariance matrix is not symmetric")
    if np.any(np.linalg.eigvalsh(s) <= 0):
        raise DomainError("covariance matrix is not positive definite")
    return 1.0 / (2.0 * math.pi * math.sqrt(np.linalg.det(s)))


def _transient_series(gamma: float) -> float:
    """gamma^2 sum_{k>=1} k^2 (1-gamma)^(k-1), summed until terms drop below 1e-15."""
    if gamma == 1.0:
        return 1.0
    log_q = math.log1p(-gamma)
    peak = max(1.0, -2.0 / log_q)
    parts = []
    start = 1
    chunk = 1 << 16
    while start < _SERIES_MAX_TERMS:
        k = np.arange(start, start + chunk, dtype=float)
        terms = gamma * gamma * k * k * np.exp((k - 1.0) * log_q)
        parts.append(math.fsum(terms.tolist()))
        if k[-1] > peak and terms[-1] < 1e-15:
            break
        start += chunk
        chunk = min(chunk * 2, 1 << 22)
    return math.fsum(parts)


def variance_transient(gamma: float) -> float:
    """(2 - gamma)/gamma, cross-checked against the defining series."""
    gamma = float(gamma)
    if not 0.0 < gamma <= 1.0:
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    closed = (2.0 - gamma) / gamma
    series = _transient_series(gamma)
    if abs(series - closed) > 1e-12 * closed:
        raise AssertionError(f"series {series!r} and closed form {closed!r} disagree at gamma={gamma}")
    return closed


def target_renewal(law: RenewalFinite) -> VarianceTarget:
    m = law.mean
    return VarianceTarget(Theorem.RENEWAL, variance_renewal(m), {"m": m})


def target_planar(law) -> VarianceTarget:
    cov = covariance(law)
    return VarianceTarget(Theorem.PLANAR, variance_planar(cov), {"sigma": cov.tolist(), "det": float(np.linalg.det(cov))})


def target_transient(gamma: "GammaEstimate | float") -> VarianceTarget:
    g = gamma.gamma if isinstance(gamma, GammaEstimate) else float(gamma)
    ingredients = {"gamma": g}
    if isinstance(gamma, GammaEstimate):
        ingredients.update(gamma_stderr=gamma.stderr, gamma_horizon=gamma.horizon, gamma_samples=gamma.samples)
    return VarianceTarget(Theorem.TRANSIENT, variance_transient(g), ingredients)


# -- escape probability ------------------------------------------------------

@dataclass(frozen=True)
class GammaEstimate:
    """Fraction of walks that avoid the origin over times 1..horizon.

    ``gamma`` over-estimates the escape probability; the bias vanishes as the
    horizon grows because the walk is transient.  When ``doubled_gamma`` is
    present it is the estimate at ``2 * horizon`` from the same walks, and
    ``converged`` records ``|gamma_T - gamma_2T| < 2 stderr``.
    """

    gamma: float
    stderr: float
    horizon: int
    samples: int
    doubled_gamma: float | None = None
    doubled_stderr: float | None = None
    converged: bool | None = None
    warnings: tuple = ()

    @property
    def delta(self) -> float | None:
        return None if self.doubled_gamma is None else self.gamma - self.doubled_gamma

    def as_dict(self) -> dict:
        out = asdict(self)
        out["warnings"] = list(self.warnings)
        out["delta"] = self.delta
        return out


def _binomial_stderr(p: float, m: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / m)


def first_return_times(law, horizon: int, samples: int, stream: Stream, threads: int = 1) -> np.ndarray:
    """First k in 1..horizon with S_k = 0 for each sample, horizon + 1 if none."""
    horizon = int(horizon)
    key = np.uint64(stream.key)
    if isinstance(law, RenewalFinite):
        return np.full(samples, horizon + 1, dtype=np.int64)
    if isinstance(law, SimpleWalk) and law.dim <= 8:
        fn = lambda ids: _kernels.simple_walk_first_return(law.dim, key, ids, horizon)  # noqa: E731
    elif law.dim == 1:
        tab = law.tables()
        fn = lambda ids: _kernels.first_return_1d(tab, key, ids, horizon)  # noqa: E731
    else:
        tab = law.tables()
        fn = lambda ids: _kernels.first_return(tab, key, ids, horizon, law.dim)  # noqa: E731
    return map_blocks(fn, int(samples), threads)


def gamma_curve(law, horizons, samples: int, stream: Stream, threads: int = 1):
    """(gamma_T, stderr_T) for each T, all from one set of walks.

    Reusing the walks makes the events nested, so the estimates are
    non-increasing in T.
    """
    horizons = [int(h) for h in horizons]
    times = first_return_times(law, max(horizons), samples, stream, threads)
    out = []
    for h in horizons:
        g = float(np.mean(times > h))
        out.append((g, _binomial_stderr(g, samples)))
    return out


def estimate_gamma(law, horizon: int, samples: int, stream: Stream, double: bool = True, threads: int = 1) -> GammaEstimate:
    if horizon < 1 or samples < 1:
        raise UsageError("horizon and samples must be >= 1")
    warnings = tuple(v.message for v in validate(law, Theorem.TRANSIENT)) if not isinstance(law, RenewalFinite) else ()
    if isinstance(law, RenewalFinite):
        one = GammaEstimate(1.0, 0.0, int(horizon), int(samples), warnings=warnings)
        if double:
            one = GammaEstimate(1.0, 0.0, int(horizon), int(samples), 1.0, 0.0, True, warnings)
        return one
    if not double:
        ((g, se),) = gamma_curve(law, [horizon], samples, stream, threads)
        return GammaEstimate(g, se, int(horizon), int(samples), warnings=warnings)
    (g, se), (g2, se2) = gamma_curve(law, [horizon, 2 * horizon], samples, stream, threads)
    converged = abs(g - g2) < 2.0 * se
    return GammaEstimate(g, se, int(horizon), int(samples), g2, se2, bool(converged), warnings)


# -- expected local times of renewal walks ----------------------------------

def renewal_mass(law: RenewalFinite, length: int) -> np.ndarray:
    """u_0..u_{length-1} with u_0 = 1 and u_i = sum_j p_j u_{i-j}."""
    support, probs = law.support, law.probs
    denom = np.zeros(max(support) + 1)
    denom[0] = 1.0
    for s, p in zip(support, probs):
        denom[s] -= p
    impulse = np.zeros(length)
    impulse[0] = 1.0
    return signal.lfilter([1.0], denom, impulse)


def _trim(values: np.ndarray, offset: int, floor: float = 1e-300):
    keep = np.flatnonzero(values > floor)
    return values[keep[0] : keep[-1] + 1], offset + int(keep[0])


def position_distribution(law: RenewalFinite, n: int) -> np.ndarray:
    """P(S_n = j) for j = 0..n*max(support).

    Binary powers of the step law by direct convolution, dropping underflowed
    ends.  Direct products avoid the rounding noise that FFT products leave
    in the far tails, which otherwise leaks into the band correction.
    """
    step = np.zeros(law.max_step + 1)
    for s, p in zip(law.support, law.probs):
        step[s] += p
    result, r_off = np.array([1.0]), 0
    base, b_off = _trim(step, 0)
    k = int(n)
    while k:
        if k & 1:
            result, r_off = _trim(np.convolve(result, base), r_off + b_off)
        k >>= 1
        if k:
            base, b_off = _trim(np.convolve(base, base), 2 * b_off)
    out = np.zeros(int(n) * law.max_step + 1)
    # Rounding drifts the total mass by ~1e-13 at large n; the band
    # correction multiplies that drift by the band length, so renormalise.
    out[r_off : r_off + result.shape[0]] = result / math.fsum(result.tolist())
    return out


def expected_localtime_renewal(law: RenewalFinite, n: int, budget: int = LOCALTIME_BUDGET) -> ExpectedLocalTimeTable:
    """Exact E N_n(i) for 1 <= i <= n * max(support).

    For i <= n this is the renewal mass u_i.  Beyond n, visits after time n
    are removed with the Markov property at time n:
    E N_n(i) = u_i - sum_{j<i} P(S_n = j) u_{i-j}.
    """
    if not isinstance(law, RenewalFinite):
        raise UsageError("expected local times are only tabulated for renewal laws")
    n = int(n)
    if n < 1:
        raise UsageError("n must be >= 1")
    top = n * law.max_step
    if top > budget:
        raise ResourceError(
            f"expected local-time table needs {top} sites, over the budget of {budget}",
            suggestion="set experiment.centering = \"montecarlo\" to estimate E N_n(i) from independent walks",
        )
    u = renewal_mass(law, top + 1)
    dist = position_distribution(law, n)[: top + 1]
    u_after = u.copy()
    u_after[0] = 0.0
    later = signal.fftconvolve(dist, u_after)[: top + 1]
    values = u[1:].copy()
    values[n:] -= later[n + 1 :]
    values = np.clip(values, 0.0, 1.0)
    values[:n] = np.clip(u[1 : n + 1], 0.0, 1.0)
    return ExpectedLocalTimeTable(n, 1, values, {"method": "exact"})


def expected_localtime_montecarlo(law, n: int, samples: int, stream: Stream) -> ExpectedLocalTimeTable:
    """Visit frequencies of ``samples`` independent renewal paths.

    Use a stream disjoint from the one that drives the experiment, otherwise
    the centering is correlated with the walks it centers.
    """
    if not isinstance(law, RenewalFinite):
        raise UsageError("Monte Carlo expected local times are implemented for renewal laws")
    n, samples = int(n), int(samples)
    top = n * law.max_step
    counts = np.zeros(top, dtype=np.int64)
    tab = law.tables()
    for j in range(samples):
        pos = _kernels.positions(tab, np.uint64(stream.child(j).key), n, 1)[:, 0]
        np.add.at(counts, pos - 1, 1)
    return ExpectedLocalTimeTable(n, 1, counts / samples, {"method": "montecarlo", "samples": samples})


def expected_q_renewal(table: ExpectedLocalTimeTable) -> float:
    """sum_i (E N_n(i))^2, the mean of Q_n over two independent replicas."""
    return math.fsum((table.values**2).tolist())


# -- planar subsequence -----------------------------------------------------

def subsequence_t(m: int, nu: float, budget: int = HORIZON_BUDGET) -> int:
    """floor(exp(m^(1+nu))), evaluated in 60-digit decimal arithmetic."""
    if int(m) != m or m < 1:
        raise UsageError(f"m must be an integer >= 1, got {m}")
    if not nu > 0:
        raise UsageError(f"nu must be > 0, got {nu}")
    expo = float(m) ** (1.0 + float(nu))
    if expo > math.log(budget) + 1.0:
        raise ResourceError(
            f"t_m = exp({expo:.4g}) exceeds the horizon budget {budget}",
            suggestion="lower m or nu, or use fixed horizons",
        )
    with decimal.localcontext() as ctx:
        ctx.prec = 60
        value = (decimal.Decimal(int(m)) ** (1 + decimal.Decimal(float(nu)))).exp()
        t = int(value.to_integral_value(rounding=decimal.ROUND_FLOOR))
    if t > budget:
        raise ResourceError(f"t_m = {t} exceeds the horizon budget {budget}", suggestion="lower m or nu")
    return t

"""Increment laws, their hypothesis checks, and path sampling."""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special

from . import _kernels
from ._rng import Stream
from .errors import UnsupportedOperation, UsageError

# Magnitudes below this come from the alias table, the rest from the exact
# tail sampler.  Small enough that the table stays in L1 cache.
STABLE_TABLE_CAP = 128

_PROB_TOL = 1e-12


class Theorem(enum.Enum):
    RENEWAL = "renewal"
    PLANAR = "planar"
    TRANSIENT = "transient"


class Violation(NamedTuple):
    theorem: Theorem
    condition: str
    message: str

    def as_dict(self):
        return {"theorem": self.theorem.value, "condition": self.condition, "message": self.message}


def _check_probs(probs, count):
    if len(probs) != count:
        raise UsageError(f"{count} steps but {len(probs)} probabilities")
    if count == 0:
        raise UsageError("a law needs at least one step")
    p = np.asarray(probs, dtype=float)
    if np.any(p <= 0):
        raise UsageError("all probabilities must be positive")
    if abs(p.sum() - 1.0) > _PROB_TOL:
        raise UsageError(f"probabilities sum to {p.sum()!r}, not 1")


class IncrementLaw:
    """Base class of the step distributions of X_1."""

    dim: int

    def finite_steps(self):
        """Return ``(steps, probs)`` as arrays; only for finitely supported laws."""
        raise UnsupportedOperation(f"{type(self).__name__} has infinite support")

    @property
    def is_finite(self) -> bool:
        try:
            self.finite_steps()
        except UnsupportedOperation:
            return False
        return True

    def natural_theorem(self) -> Theorem:
        raise NotImplementedError

    def tables(self):
        return _tables(self)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class RenewalFinite(IncrementLaw):
    support: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(int(s) for s in self.support))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        _check_probs(self.probs, len(self.support))
        if len(set(self.support)) != len(self.support):
            raise UsageError("renewal support has repeated values")

    @property
    def dim(self):
        return 1

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    @property
    def max_step(self) -> int:
        return max(self.support)

    def finite_steps(self):
        return np.array(self.support, dtype=np.int64).reshape(-1, 1), np.array(self.probs)

    def natural_theorem(self):
        return Theorem.RENEWAL

    def to_dict(self):
        return {"variant": "renewal", "support": list(self.support), "probs": list(self.probs)}


@dataclass(frozen=True)
class SimpleWalk(IncrementLaw):
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError("dimension must be >= 1")

    def finite_steps(self):
        d = self.dim
        eye = np.eye(d, dtype=np.int64)
        steps = np.concatenate([eye, -eye])
        return steps, np.full(2 * d, 1.0 / (2 * d))

    def natural_theorem(self):
        return Theorem.PLANAR if self.dim == 2 else Theorem.TRANSIENT

    def to_dict(self):
        return {"variant": "simple", "dim": self.dim}


@dataclass(frozen=True)
class FiniteStepSymmetric(IncrementLaw):
    steps: tuple
    probs: tuple

    def __post_init__(self):
        steps = tuple(tuple(int(c) for c in s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        _check_probs(self.probs, len(steps))
        if len({len(s) for s in steps}) != 1:
            raise UsageError("all steps must have the same dimension")
        if len(set(steps)) != len(steps):
            raise UsageError("repeated step vector")

    @property
    def dim(self):
        return len(self.steps[0])

    def finite_steps(self):
        return np.array(self.steps, dtype=np.int64), np.array(self.probs)

    def natural_theorem(self):
        return Theorem.PLANAR if self.dim == 2 else Theorem.TRANSIENT

    def to_dict(self):
        return {"variant": "finite_symmetric", "steps": [list(s) for s in self.steps], "probs": list(self.probs)}


@dataclass(frozen=True)
class StableTail(IncrementLaw):
    """P(X = +-k e_i) = k^-(1+alpha) / (2 d zeta(1+alpha)) for k >= 1, i <= d."""

    dim: int
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.dim < 1:
            raise UsageError("dimension must be >= 1")
        if not 0.0 < self.alpha < 2.0:
            raise UsageError(f"alpha must lie in (0, 2), got {self.alpha}")

    def pmf(self, k) -> np.ndarray:
        """P(|X| = k) (summed over the 2d signed directions)."""
        s = 1.0 + self.alpha
        k = np.asarray(k, dtype=float)
        return np.where(k >= 1, k ** (-s) / special.zeta(s, 1.0), 0.0)

    def tail(self, t) -> np.ndarray:
        """Exact P(|X| > t) for integer t >= 0, via the Hurwitz zeta function."""
        s = 1.0 + self.alpha
        t = np.asarray(t, dtype=float)
        return special.zeta(s, np.floor(t) + 1.0) / special.zeta(s, 1.0)

    def natural_theorem(self):
        return Theorem.TRANSIENT

    def to_dict(self):
        return {"variant": "stable", "dim": self.dim, "alpha": self.alpha}


def law_from_dict(data: dict) -> IncrementLaw:
    data = dict(data)
    variant = data.pop("variant", None)
    try:
        if variant == "renewal":
            return RenewalFinite(tuple(data.pop("support")), tuple(data.pop("probs")))
        if variant == "simple":
            return SimpleWalk(int(data.pop("dim")))
        if variant == "finite_symmetric":
            return FiniteStepSymmetric(tuple(map(tuple, data.pop("steps"))), tuple(data.pop("probs")))
        if variant == "stable":
            return StableTail(int(data.pop("dim")), float(data.pop("alpha")))
    except KeyError as exc:
        raise UsageError(f"walk variant {variant!r} is missing {exc.args[0]!r}") from None
    if variant is None:
        raise UsageError("walk law needs a 'variant'")
    raise UsageError(f"unknown walk variant {variant!r}")


# -- hypothesis checks ------------------------------------------------------

def covariance(law: IncrementLaw) -> np.ndarray:
    """Exact covariance matrix of X_1 (finitely supported laws only)."""
    steps, probs = law.finite_steps()
    s = steps.astype(float)
    second = np.einsum("k,ki,kj->ij", probs, s, s)
    mean = probs @ s
    return second - np.outer(mean, mean)


def _span_rank(steps) -> int:
    return int(np.linalg.matrix_rank(np.asarray(steps, dtype=float)))


def _is_symmetric(steps, probs) -> bool:
    table = {tuple(s): p for s, p in zip(np.asarray(steps).tolist(), probs)}
    return all(abs(table.get(tuple(-c for c in s), 0.0) - p) <= _PROB_TOL for s, p in table.items())


def validate(law: IncrementLaw, theorem: Theorem | None = None) -> list[Violation]:
    """Hypotheses of ``theorem`` (default: the law's natural one) that fail.

    An empty list means the law is admissible.
    """
    theorem = law.natural_theorem() if theorem is None else Theorem(theorem)
    out = []

    def bad(condition, message):
        out.append(Violation(theorem, condition, message))

    if theorem is Theorem.RENEWAL:
        if not isinstance(law, RenewalFinite):
            bad("renewal", "the renewal theorem needs positive integer steps in d = 1")
            return out
        if min(law.support) < 1:
            bad("positive_support", f"support {law.support} is not inside N*")
        g = functools.reduce(math.gcd, law.support)
        if g != 1:
            bad("aperiodic", f"gcd={g}, not aperiodic")
        return out

    if isinstance(law, RenewalFinite):
        bad("symmetric", "renewal steps are not symmetric")
        return out

    if isinstance(law, StableTail):
        if theorem is Theorem.PLANAR:
            bad("finite_covariance", "stable-tail steps have infinite variance")
        elif law.dim <= law.alpha:
            bad("d_gt_alpha", f"requires d>alpha, got d={law.dim}, alpha={law.alpha}")
        return out

    steps, probs = law.finite_steps()
    d = law.dim
    if not _is_symmetric(steps, probs):
        bad("symmetric", "law is not invariant under negation")
    rank = _span_rank(steps)
    if rank < d:
        bad("truly_d_dimensional", f"support spans a {rank}-dimensional space, not {d}")
    cov = covariance(law)
    if np.linalg.matrix_rank(cov) < d:
        bad("nonsingular_covariance", f"covariance matrix {cov.tolist()} is singular")
    if theorem is Theorem.PLANAR and d != 2:
        bad("planar", f"the planar theorem needs d = 2, got d = {d}")
    if theorem is Theorem.TRANSIENT and d < 3:
        bad("d_ge_3", f"square-integrable steps are transient only for d >= 3, got d = {d}")
    return out


def admissible(law: IncrementLaw, theorem: Theorem | None = None) -> bool:
    return not validate(law, theorem)


# -- sampling ---------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _tables(law: IncrementLaw):
    if isinstance(law, StableTail):
        d, alpha = law.dim, law.alpha
        s = 1.0 + alpha
        K = STABLE_TABLE_CAP
        k = np.arange(1, K, dtype=float)
        zeta = special.zeta(s, 1.0)
        per_dir = np.concatenate([k ** (-s), [special.zeta(s, float(K))]]) / (2 * d * zeta)
        mags = np.concatenate([np.arange(1, K), [1]]).astype(np.int64)
        tail_flag = np.zeros(K, dtype=np.bool_)
        tail_flag[-1] = True
        step_rows, mass, tails = [], [], []
        for axis in range(d):
            for sign in (1, -1):
                rows = np.zeros((K, d), dtype=np.int64)
                rows[:, axis] = sign * mags
                step_rows.append(rows)
                mass.append(per_dir)
                tails.append(tail_flag)
        steps = np.concatenate(step_rows)
        p = np.concatenate(mass)
        is_tail = np.concatenate(tails)
        tail_k = float(K)
        bound = ((K + 1.0) / K) ** s
    else:
        steps, p = law.finite_steps()
        is_tail = np.zeros(len(p), dtype=np.bool_)
        tail_k, alpha, bound = 1.0, 1.0, 1.0
    size = 2
    while size < len(p):
        size *= 2
    pad = size - len(p)
    steps = np.ascontiguousarray(np.concatenate([steps, np.zeros((pad, steps.shape[1]), np.int64)]))
    p = np.concatenate([p, np.zeros(pad)])
    p = p / p.sum()
    is_tail = np.concatenate([is_tail, np.zeros(pad, dtype=np.bool_)])
    prob, alias = _kernels.build_alias(p)
    shift = 64 - int(math.log2(size))
    thresh = _kernels.alias_thresholds(prob, shift)
    return (steps, thresh, alias, is_tail, np.int64(shift), float(tail_k), float(alpha), float(bound))


@dataclass
class Path:
    """Positions S_1..S_n (S_0 = 0 is implicit) as an (n, d) int64 array."""

    positions: np.ndarray
    law: IncrementLaw | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=0, prepend=np.zeros((1, self.dim), np.int64))

    @classmethod
    def from_positions(cls, positions, law=None) -> "Path":
        arr = np.asarray(positions, dtype=np.int64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        return cls(np.ascontiguousarray(arr), law)


def _stream_key(stream) -> np.uint64:
    if isinstance(stream, Stream):
        return np.uint64(stream.key)
    return np.uint64(int(stream) & (2**64 - 1))


def sample_increments(law: IncrementLaw, stream, count: int) -> np.ndarray:
    """The first ``count`` increments of ``stream`` as a (count, d) array."""
    return _kernels.increments(law.tables(), _stream_key(stream), int(count), law.dim)


def sample_increment(law: IncrementLaw, stream) -> np.ndarray:
    return sample_increments(law, stream, 1)[0]


def sample_path(law: IncrementLaw, n: int, stream) -> Path:
    if n < 1:
        raise UsageError("horizon must be >= 1")
    pos = _kernels.positions(law.tables(), _stream_key(stream), int(n), law.dim)
    return Path(pos, law)

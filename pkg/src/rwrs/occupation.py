"""Local times, intersection local times and RWRS sums of sampled paths.

Tables are sparse: the visited sites are stored once, with their visit
counts, in a canonical (lexicographic) order.  Sites of several tables are
compared through integer keys built from a shared bounding box, falling back
to raw byte keys when the box is too large for 64 bits.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numba as nb
import numpy as np

from .errors import IntegrityError, UsageError
from .scenery import SiteField, eval_sites_batch
from .walks import Path

# Largest power handled by the exact integer functionals.
MAX_POWER = 8

_INT64_SAFE = 2**62


def _void_keys(sites: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(sites, dtype=np.int64)
    return arr.view(np.dtype((np.void, 8 * arr.shape[1]))).ravel()


def joint_keys(*site_arrays: np.ndarray) -> list[np.ndarray]:
    """Keys that are equal exactly when the sites are, across all arrays."""
    dims = {a.shape[1] for a in site_arrays}
    if len(dims) != 1:
        raise UsageError(f"site arrays have different dimensions {sorted(dims)}")
    filled = [a for a in site_arrays if len(a)]
    if not filled:
        return [np.empty(0, dtype=np.int64) for _ in site_arrays]
    bounds = [_bounds(np.ascontiguousarray(a, dtype=np.int64)) for a in filled]
    lo = np.min([b[0] for b in bounds], axis=0)
    hi = np.max([b[1] for b in bounds], axis=0)
    spans = [int(h) - int(l) + 1 for l, h in zip(lo.tolist(), hi.tolist())]
    if math.prod(spans) >= 2**63:
        return [_void_keys(a) for a in site_arrays]
    weights = np.ones(len(spans), dtype=np.int64)
    for i in range(len(spans) - 2, -1, -1):
        weights[i] = weights[i + 1] * spans[i + 1]
    return [_mixed_radix(a, lo, weights) for a in site_arrays]


def _mixed_radix(a: np.ndarray, lo: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return _radix_kernel(np.ascontiguousarray(a, dtype=np.int64), lo.astype(np.int64), weights)


@nb.njit(cache=True, nogil=True)
def _bounds(a):
    lo = a[0].copy()
    hi = a[0].copy()
    for i in range(1, a.shape[0]):
        for j in range(a.shape[1]):
            v = a[i, j]
            if v < lo[j]:
                lo[j] = v
            elif v > hi[j]:
                hi[j] = v
    return lo, hi


@nb.njit(cache=True, nogil=True)
def _radix_kernel(a, lo, weights):
    out = np.empty(a.shape[0], dtype=np.int64)
    for i in range(a.shape[0]):
        k = 0
        for j in range(a.shape[1]):
            k += (a[i, j] - lo[j]) * weights[j]
        out[i] = k
    return out


@dataclass(frozen=True)
class OccupationTable:
    """Visit counts N_n(x) > 0 of one path over times 1..n."""

    n: int
    sites: np.ndarray
    counts: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.sites.ndim != 2 or self.sites.shape[0] != self.counts.shape[0]:
            raise UsageError("sites must be (k, d) with one count per site")
        if int(self.counts.sum()) != self.n:
            raise IntegrityError(f"counts sum to {int(self.counts.sum())}, expected n={self.n}")

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    def __len__(self) -> int:
        return self.sites.shape[0]

    def get(self, site) -> int:
        site = np.atleast_1d(np.asarray(site, dtype=np.int64))
        hit = np.flatnonzero(np.all(self.sites == site, axis=1))
        return int(self.counts[hit[0]]) if hit.size else 0

    def as_dict(self) -> dict:
        """``{site: count}`` with int keys for d = 1 and tuple keys otherwise."""
        if self.dim == 1:
            return dict(zip(self.sites[:, 0].tolist(), self.counts.tolist()))
        return dict(zip(map(tuple, self.sites.tolist()), self.counts.tolist()))

    def to_csv(self, path) -> FsPath:
        path = FsPath(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.dim)] + ["count"])
            for site, c in zip(self.sites.tolist(), self.counts.tolist()):
                w.writerow(site + [c])
        return path


def _canonical(sites: np.ndarray, counts: np.ndarray):
    order = np.lexsort(sites.T[::-1]) if len(sites) else np.empty(0, np.int64)
    return np.ascontiguousarray(sites[order]), counts[order]


def occupation_from_positions(positions: np.ndarray, meta=None) -> OccupationTable:
    pos = np.asarray(positions, dtype=np.int64)
    if pos.ndim == 1:
        pos = pos.reshape(-1, 1)
    (keys,) = joint_keys(pos)
    _, first, counts = np.unique(keys, return_index=True, return_counts=True)
    sites, counts = _canonical(pos[first], counts.astype(np.int64))
    return OccupationTable(pos.shape[0], sites, counts, dict(meta or {}))


def accumulate(path: Path) -> OccupationTable:
    """Local times of ``path``; S_0 = 0 is not counted."""
    meta = {"n": path.n, "dim": path.dim}
    if path.law is not None:
        meta["law"] = path.law.to_dict()
    return occupation_from_positions(path.positions, meta)


def _check_power(p, low):
    if int(p) != p or p < low:
        raise UsageError(f"power must be an integer >= {low}, got {p}")
    if p > MAX_POWER:
        raise UsageError(f"powers above {MAX_POWER} are not supported")


def _power_sum(values: np.ndarray, p: int) -> int:
    """Exact sum of ``values ** p`` for non-negative integer values."""
    if values.size == 0:
        return 0
    top = int(values.max())
    if top**p * values.size < _INT64_SAFE:
        return int(np.sum(values.astype(np.int64) ** p))
    return sum(int(v) ** p for v in values.tolist())


def self_intersection(tab: OccupationTable, p: int) -> int:
    """I_n^[p] = sum over x of N_n(x)^p, exactly."""
    _check_power(p, 2)
    return _power_sum(tab.counts, int(p))


def _matched_counts(tab1: OccupationTable, tab2: OccupationTable):
    if tab1.dim != tab2.dim:
        raise UsageError(f"tables have dimensions {tab1.dim} and {tab2.dim}")
    k1, k2 = joint_keys(tab1.sites, tab2.sites)
    _, i1, i2 = np.intersect1d(k1, k2, assume_unique=True, return_indices=True)
    return tab1.counts[i1], tab2.counts[i2]


def mutual_intersection(tab1: OccupationTable, tab2: OccupationTable, p: int = 1, q: int = 1) -> int:
    """Q_n^[p,q] = sum over x of N1(x)^p N2(x)^q, exactly."""
    _check_power(p, 1)
    _check_power(q, 1)
    c1, c2 = _matched_counts(tab1, tab2)
    if c1.size == 0:
        return 0
    bound = int(c1.max()) ** p * int(c2.max()) ** q * c1.size
    if bound < _INT64_SAFE:
        return int(np.sum(c1.astype(np.int64) ** p * c2.astype(np.int64) ** q))
    return sum(int(a) ** p * int(b) ** q for a, b in zip(c1.tolist(), c2.tolist()))


def product_local_time(tables) -> int:
    """Sum over sites of the product of the local times of all tables."""
    tables = list(tables)
    if not tables:
        raise UsageError("need at least one table")
    keys = joint_keys(*(t.sites for t in tables))
    common = keys[0]
    for k in keys[1:]:
        common = np.intersect1d(common, k, assume_unique=True)
    if common.size == 0:
        return 0
    prod = np.ones(common.size, dtype=object)
    for t, k in zip(tables, keys):
        order = np.argsort(k, kind="stable")
        prod = prod * t.counts[order[np.searchsorted(k[order], common)]].astype(object)
    return int(prod.sum())


def range_intersection(paths) -> int:
    """|intersection of {S_1..S_n}| over the given paths."""
    keys = joint_keys(*(p.positions for p in paths))
    common = np.unique(keys[0])
    for k in keys[1:]:
        common = np.intersect1d(common, np.unique(k), assume_unique=True)
    return int(common.size)


# -- expected local times and recentering -----------------------------------

@dataclass(frozen=True)
class ExpectedLocalTimeTable:
    """E N_n(i) on 1-d sites ``lo, lo+1, ..., lo+len(values)-1``."""

    n: int
    lo: int
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def hi(self) -> int:
        return self.lo + self.values.shape[0] - 1

    def at(self, site: int) -> float:
        i = int(site) - self.lo
        return float(self.values[i]) if 0 <= i < self.values.shape[0] else 0.0

    def total(self) -> float:
        return math.fsum(self.values.tolist())

    def to_csv(self, path) -> FsPath:
        path = FsPath(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["site", "expected_local_time"])
            for i, v in enumerate(self.values.tolist()):
                w.writerow([self.lo + i, repr(v)])
        return path


def _dense_counts(tab: OccupationTable, expected: ExpectedLocalTimeTable) -> np.ndarray:
    if tab.dim != 1:
        raise UsageError("expected local-time tables are one-dimensional")
    idx = tab.sites[:, 0] - expected.lo
    outside = (idx < 0) | (idx >= expected.values.shape[0])
    if np.any(outside):
        site = int(tab.sites[np.flatnonzero(outside)[0], 0])
        raise IntegrityError(
            f"site {site} was visited but the expected table only covers [{expected.lo}, {expected.hi}]"
        )
    dense = np.zeros(expected.values.shape[0], dtype=np.float64)
    dense[idx] = tab.counts
    return dense


def recentered_moment(tab: OccupationTable, expected: ExpectedLocalTimeTable, p: int) -> float:
    """J_n^[p] = sum over i of (N_n(i) - E N_n(i))^p.

    The sum runs over every site of ``expected`` as well as the visited ones,
    so unvisited sites with positive expectation contribute (-E N_n(i))^p.
    """
    _check_power(p, 2)
    centered = _dense_counts(tab, expected) - expected.values
    return math.fsum((centered ** int(p)).tolist())


def centered_cross_moment(tab1, tab2, expected, k: int, l: int) -> float:
    """Sum over i of (N1(i) - E N(i))^k (N2(i) - E N(i))^l."""
    c1 = _dense_counts(tab1, expected) - expected.values
    c2 = _dense_counts(tab2, expected) - expected.values
    return math.fsum((c1 ** int(k) * c2 ** int(l)).tolist())


# -- RWRS sums ---------------------------------------------------------------

def _check_field(field_: SiteField, dim: int):
    if field_.dim != dim:
        raise UsageError(f"scenery has dimension {field_.dim}, path has {dim}")


def rwrs_sum(tab: OccupationTable, field_: SiteField) -> float:
    """Z_n = sum over x of omega_x N_n(x).

    Summed with exact rounding over omega_x repeated N_n(x) times, so it is
    bit-identical to the sum of omega_{S_k} along the path.
    """
    _check_field(field_, tab.dim)
    values = eval_sites_batch(field_, tab.sites)
    return math.fsum(np.repeat(values, tab.counts).tolist())


def rwrs_partial_sums(path: Path, field_: SiteField, time_grid) -> list[float]:
    """Z_[nt] for each t of the sorted grid in (0, 1]."""
    _check_field(field_, path.dim)
    grid = [float(t) for t in time_grid]
    if any(not 0.0 < t <= 1.0 for t in grid):
        raise UsageError("time grid values must lie in (0, 1]")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise UsageError("time grid must be sorted")
    values = eval_sites_batch(field_, path.positions).tolist()
    out = []
    for t in grid:
        h = math.floor(path.n * t)
        out.append(math.fsum(values[:h]))
    return out


# -- summaries ---------------------------------------------------------------

@dataclass
class IntersectionSummary:
    n: int
    I_values: dict = field(default_factory=dict)
    J_values: dict = field(default_factory=dict)
    Q_values: dict = field(default_factory=dict)
    range_intersection: int | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "I": {str(p): v for p, v in sorted(self.I_values.items())},
            "J": {str(p): v for p, v in sorted(self.J_values.items())},
            "Q": {f"{p},{q}": v for (p, q), v in sorted(self.Q_values.items())},
            "range_intersection": self.range_intersection,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "IntersectionSummary":
        q = {tuple(int(x) for x in k.split(",")): v for k, v in data.get("Q", {}).items()}
        return cls(
            n=int(data["n"]),
            I_values={int(k): v for k, v in data.get("I", {}).items()},
            J_values={int(k): v for k, v in data.get("J", {}).items()},
            Q_values=q,
            range_intersection=data.get("range_intersection"),
        )

    def csv_rows(self):
        rows = [("I", str(p), v) for p, v in sorted(self.I_values.items())]
        rows += [("J", str(p), v) for p, v in sorted(self.J_values.items())]
        rows += [("Q", f"{p},{q}", v) for (p, q), v in sorted(self.Q_values.items())]
        if self.range_intersection is not None:
            rows.append(("range_intersection", "", self.range_intersection))
        return [{"n": self.n, "functional": f, "order": o, "value": v} for f, o, v in rows]


def summarize(tab, powers=(2,), other=None, pq=((1, 1),), expected=None, paths=None) -> IntersectionSummary:
    out = IntersectionSummary(tab.n)
    for p in powers:
        out.I_values[int(p)] = self_intersection(tab, p)
        if expected is not None:
            out.J_values[int(p)] = recentered_moment(tab, expected, p)
    if other is not None:
        for p, q in pq:
            out.Q_values[(int(p), int(q))] = mutual_intersection(tab, other, p, q)
    if paths is not None:
        out.range_intersection = range_intersection(paths)
    return out


def mutual_intersection_curve(pos1: np.ndarray, pos2: np.ndarray, horizons) -> np.ndarray:
    """Q_h = #{(k, l) : k, l <= h, S1_k = S2_l} for each horizon h.

    One sort serves every horizon: each coincidence (k, l) counts for all
    h >= max(k, l).  Memory is linear in Q at the largest horizon.
    """
    horizons = np.asarray(horizons, dtype=np.int64)
    top = int(horizons.max())
    k1, k2 = joint_keys(pos1[:top], pos2[:top])
    order = np.argsort(k1, kind="stable")
    sorted1 = k1[order]
    lo = np.searchsorted(sorted1, k2, side="left")
    hi = np.searchsorted(sorted1, k2, side="right")
    per_l = hi - lo
    total = int(per_l.sum())
    if total == 0:
        return np.zeros(horizons.shape[0], dtype=np.int64)
    l_time = np.repeat(np.arange(1, k2.shape[0] + 1), per_l)
    start = np.repeat(lo, per_l)
    offset = np.arange(total) - np.repeat(np.cumsum(per_l) - per_l, per_l)
    k_time = order[start + offset] + 1
    last = np.maximum(k_time, l_time)
    last.sort()
    return np.searchsorted(last, horizons, side="right").astype(np.int64)

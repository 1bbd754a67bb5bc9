"""Quenched random scenery as a stateless function of (seed, site).

Reproducibility contract (fixed; changing any step changes every field):

1. ``field_key = child_key(root_key(seed), dim)``.
2. Each coordinate ``c`` is zig-zag encoded, ``z = (c << 1) ^ (c >> 63)``,
   and folded in order: ``h = mix64(h ^ (z * GOLDEN + SITE_SALT))``
   starting from ``h = field_key``.
3. The site word ``h`` is mapped to a value:

   * Rademacher: ``+1`` if the top bit of ``h`` is set, else ``-1``.
   * CenteredUniform: ``u = ((h >> 11) + 0.5) / 2**53``, value ``sqrt(3) (2u - 1)``.
   * StandardGaussian: Box-Muller cosine branch with
     ``u1 = ((h >> 11) + 0.5) / 2**53`` and ``u2 = (h2 >> 11) / 2**53`` where
     ``h2 = mix64(h ^ GAUSS_SALT)``; value ``sqrt(-2 ln u1) cos(2 pi u2)``.

``mix64`` is the SplitMix64 finalizer (see :mod:`rwrs._rng`).
"""

import csv
import enum
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np

from ._rng import GOLDEN, INV_2_53, as_u64, child_key, mix64, root_key
from .errors import UsageError

SITE_SALT = np.uint64(0x452821E638D01377)
GAUSS_SALT = np.uint64(0xBE5466CF34E90C6C)
_S63 = np.uint64(63)
_S11 = np.uint64(11)
_SQRT3 = math.sqrt(3.0)
_TWO_PI = 2.0 * math.pi


class SceneryLaw(enum.Enum):
    RADEMACHER = "rademacher"
    STANDARD_GAUSSIAN = "gaussian"
    CENTERED_UNIFORM = "uniform"
    # Debug only: every site carries 1.  Not centered, never admissible.
    CONSTANT_ONE = "ones"

    @property
    def code(self) -> int:
        return _LAW_CODES[self]

    @property
    def all_moments_finite(self) -> bool:
        return self is not SceneryLaw.CONSTANT_ONE

    @property
    def centered_unit_variance(self) -> bool:
        return self is not SceneryLaw.CONSTANT_ONE

    @classmethod
    def parse(cls, name) -> "SceneryLaw":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "rademacher": cls.RADEMACHER,
            "gaussian": cls.STANDARD_GAUSSIAN,
            "standard_gaussian": cls.STANDARD_GAUSSIAN,
            "normal": cls.STANDARD_GAUSSIAN,
            "uniform": cls.CENTERED_UNIFORM,
            "centered_uniform": cls.CENTERED_UNIFORM,
            "ones": cls.CONSTANT_ONE,
            "constant_one": cls.CONSTANT_ONE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise UsageError(f"unknown scenery law {name!r}") from None


_LAW_CODES = {
    SceneryLaw.RADEMACHER: 0,
    SceneryLaw.STANDARD_GAUSSIAN: 1,
    SceneryLaw.CENTERED_UNIFORM: 2,
    SceneryLaw.CONSTANT_ONE: 3,
}


@nb.njit(nb.uint64(nb.int64), cache=True, nogil=True)
def _zigzag(c):
    return np.uint64((c << 1) ^ (c >> 63))


@nb.njit(nb.float64(nb.uint64, nb.int64), cache=True, nogil=True)
def word_to_value(h, law):
    if law == 0:
        return 1.0 if (h >> _S63) == np.uint64(1) else -1.0
    if law == 1:
        u1 = (np.float64(h >> _S11) + 0.5) * INV_2_53
        u2 = np.float64(mix64(h ^ GAUSS_SALT) >> _S11) * INV_2_53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)
    if law == 2:
        u = (np.float64(h >> _S11) + 0.5) * INV_2_53
        return _SQRT3 * (2.0 * u - 1.0)
    return 1.0


@nb.njit([nb.float64(nb.uint64, nb.int64, nb.int64[::1]),
          nb.float64(nb.uint64, nb.int64, nb.int64[:])], cache=True, nogil=True)
def site_value(field_key, law, coords):
    h = field_key
    for i in range(coords.shape[0]):
        h = mix64(h ^ (_zigzag(coords[i]) * GOLDEN + SITE_SALT))
    return word_to_value(h, law)


@nb.njit(nb.float64(nb.uint64, nb.int64, nb.int64), cache=True, nogil=True)
def site_value_1d(field_key, law, x):
    h = mix64(field_key ^ (_zigzag(x) * GOLDEN + SITE_SALT))
    return word_to_value(h, law)


@nb.njit(cache=True, nogil=True)
def _batch(field_key, law, sites):
    out = np.empty(sites.shape[0], dtype=np.float64)
    for i in range(sites.shape[0]):
        out[i] = site_value(field_key, law, sites[i])
    return out


@nb.njit(cache=True, nogil=True)
def _interval(field_key, law, lo, count):
    out = np.empty(count, dtype=np.float64)
    for i in range(count):
        out[i] = site_value_1d(field_key, law, lo + i)
    return out


@dataclass(frozen=True)
class SiteField:
    """The scenery ``omega`` on Z^dim; immutable and safe to share."""

    seed: int
    dim: int = 1
    law: SceneryLaw = SceneryLaw.RADEMACHER

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError(f"dimension must be >= 1, got {self.dim}")
        if not 0 <= int(self.seed) < 2**64:
            raise UsageError("scenery seed must fit in an unsigned 64-bit word")
        object.__setattr__(self, "law", SceneryLaw.parse(self.law))

    @property
    def key(self) -> np.uint64:
        return np.uint64(child_key(root_key(as_u64(self.seed)), np.uint64(self.dim)))

    def interval(self, lo: int, count: int) -> np.ndarray:
        """Values on the 1-d sites ``lo, lo+1, ..., lo+count-1``."""
        if self.dim != 1:
            raise UsageError("interval() is only defined for dim == 1")
        return _interval(self.key, self.law.code, np.int64(lo), int(count))

    def __call__(self, site) -> float:
        return eval_site(self, site)


def _as_site_array(field: SiteField, sites) -> np.ndarray:
    arr = np.asarray(sites)
    if arr.ndim == 1 and field.dim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != field.dim:
        raise UsageError(f"sites must have exactly {field.dim} coordinates, got shape {arr.shape}")
    if arr.dtype.kind not in "iu":
        if arr.size and not np.all(np.mod(arr, 1) == 0):
            raise UsageError("site coordinates must be integers")
    return np.ascontiguousarray(arr, dtype=np.int64)


def eval_site(field: SiteField, site) -> float:
    """Return omega at ``site`` (an int for dim 1, else a length-dim sequence)."""
    coords = np.atleast_1d(np.asarray(site))
    if coords.ndim != 1 or coords.shape[0] != field.dim:
        raise UsageError(f"site {site!r} does not have {field.dim} coordinates")
    for c in coords.tolist():
        if not isinstance(c, (int, np.integer)) and not float(c).is_integer():
            raise UsageError(f"site coordinate {c!r} is not an integer")
        if not -(2**63) <= int(c) < 2**63:
            raise UsageError(f"site coordinate {c!r} does not fit in int64")
    return float(site_value(field.key, field.law.code, coords.astype(np.int64)))


def eval_sites_batch(field: SiteField, sites) -> np.ndarray:
    """Vectorised :func:`eval_site`; element-wise identical to it."""
    arr = _as_site_array(field, sites)
    return _batch(field.key, field.law.code, arr)


def dump_window_csv(field: SiteField, lo, hi, path) -> Path:
    """Write every site of the box ``lo <= x <= hi`` (per coordinate) as CSV."""
    lo = np.broadcast_to(np.asarray(lo, dtype=np.int64), (field.dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.int64), (field.dim,))
    axes = [range(int(a), int(b) + 1) for a, b in zip(lo, hi)]
    sites = np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, field.dim)
    values = eval_sites_batch(field, sites)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(field.dim)] + ["value"])
        for site, v in zip(sites.tolist(), values.tolist()):
            w.writerow(site + [repr(v)])
    return path

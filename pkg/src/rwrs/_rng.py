"""Counter-based 64-bit mixing primitives shared by every kernel.

All randomness in the package is a pure function of a 64-bit key and a
counter: ``word(key, c) = mix64(key + (c + 1) * GOLDEN)``, i.e. the
SplitMix64 output stream seeded at ``key``.  Keys for sub-streams are built
by folding integers into a parent key with :func:`child_key`.
"""

import numba as nb
import numpy as np
from numba.extending import intrinsic

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_ROOT_SALT = np.uint64(0x243F6A8885A308D3)
_CHILD_SALT = np.uint64(0x13198A2E03707344)
INV_2_53 = 1.0 / 9007199254740992.0

MASK64 = (1 << 64) - 1


@nb.njit(nb.uint64(nb.uint64), cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(nb.uint64(nb.uint64, nb.uint64), cache=True, nogil=True)
def rand_word(key, counter):
    return mix64(key + (counter + _ONE) * GOLDEN)


@nb.njit(nb.float64(nb.uint64), cache=True, nogil=True)
def word_to_unit(w):
    """Map a word to a double in [0, 1) with 53 bits of resolution."""
    return np.float64(w >> _S11) * INV_2_53


@nb.njit(nb.uint64(nb.uint64, nb.uint64), cache=True, nogil=True)
def child_key(key, index):
    return mix64(key + mix64(index + _CHILD_SALT))


@nb.njit(nb.uint64(nb.uint64), cache=True, nogil=True)
def root_key(seed):
    return mix64(seed ^ _ROOT_SALT)


@intrinsic
def _ctpop(typingctx, v):
    sig = nb.uint64(nb.uint64)

    def codegen(context, builder, signature, args):
        fn = builder.module.declare_intrinsic("llvm.ctpop", [args[0].type])
        return builder.call(fn, [args[0]])

    return sig, codegen


@nb.njit(nb.uint64(nb.uint64), cache=True, nogil=True)
def popcount64(v):
    return _ctpop(v)


def as_u64(value: int) -> np.uint64:
    """Reduce a Python int (possibly negative) to its two's-complement word."""
    return np.uint64(int(value) & MASK64)


def stream_key(seed: int, *path: int) -> int:
    """Key of the sub-stream reached from ``seed`` by following ``path``.

    ``stream_key(s, a, b)`` equals folding ``a`` then ``b`` with
    :func:`child_key`, which is also what the kernels do for per-sample keys,
    so a sample drawn inside a batch kernel is reproducible on its own.
    """
    key = root_key(as_u64(seed))
    for p in path:
        key = child_key(key, as_u64(p))
    return int(key)


class Stream:
    """A named, deterministic random sub-stream.

    Streams carry only a key; drawing from them never mutates state, so the
    same stream always yields the same numbers.
    """

    __slots__ = ("key",)

    def __init__(self, key: int):
        self.key = int(key) & MASK64

    @classmethod
    def from_seed(cls, seed: int, *path: int) -> "Stream":
        return cls(stream_key(seed, *path))

    def child(self, *path: int) -> "Stream":
        key = np.uint64(self.key)
        for p in path:
            key = child_key(key, as_u64(p))
        return Stream(int(key))

    def words(self, count: int, start: int = 0) -> np.ndarray:
        return _words(np.uint64(self.key), np.uint64(start), count)

    def uniforms(self, count: int, start: int = 0) -> np.ndarray:
        return _uniforms(np.uint64(self.key), np.uint64(start), count)

    def __eq__(self, other):
        return isinstance(other, Stream) and other.key == self.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"Stream(0x{self.key:016x})"


@nb.njit(cache=True, nogil=True)
def _words(key, start, count):
    out = np.empty(count, dtype=np.uint64)
    for i in range(count):
        out[i] = rand_word(key, start + np.uint64(i))
    return out


@nb.njit(cache=True, nogil=True)
def _uniforms(key, start, count):
    out = np.empty(count, dtype=np.float64)
    for i in range(count):
        out[i] = word_to_unit(rand_word(key, start + np.uint64(i)))
    return out

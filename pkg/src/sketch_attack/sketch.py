"""CountSketch / AMS linear sketches over a sparse 64-bit key space.

Hashing is idealized: every (seed, row, key) triple is pushed through a
keyed 64-bit mixer, giving a bucket in [0, b) and a sign in {-1, +1}.
Nothing of length n is ever allocated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class SketchError(ValueError):
    """Invalid sketch input (bad key, mismatched shapes or randomness)."""


class ModeError(SketchError):
    """Operation not available for this sketch mode (e.g. AMS on b > 1)."""


@njit(cache=True, inline="always")
def _mix64(x):
    # splitmix64 finalizer; uint64 arithmetic wraps
    x = x ^ (x >> np.uint64(30))
    x = x * _M1
    x = x ^ (x >> np.uint64(27))
    x = x * _M2
    return x ^ (x >> np.uint64(31))


@njit(cache=True, inline="always")
def _hash_one(key, row_key, b):
    y = _mix64(_mix64(key ^ row_key) + row_key)
    bucket = np.int64(((y >> np.uint64(32)) * np.uint64(b)) >> np.uint64(32))
    sign = np.int8(1 - 2 * np.int64(y & np.uint64(1)))
    return bucket, sign


@njit(cache=True)
def _hash_kernel(keys, row_keys, b, buckets, signs):
    for j in range(row_keys.size):
        rk = row_keys[j]
        for i in range(keys.size):
            buckets[j, i], signs[j, i] = _hash_one(keys[i], rk, b)


@njit(cache=True)
def _sketch_kernel(keys, values, row_keys, out):
    b = out.shape[1]
    for j in range(row_keys.size):
        rk = row_keys[j]
        for i in range(keys.size):
            k, s = _hash_one(keys[i], rk, b)
            out[j, k] += s * values[i]


@njit(cache=True)
def _coeff_kernel(keys, row_keys, b, hb, hs, out):
    for j in range(row_keys.size):
        rk = row_keys[j]
        for i in range(keys.size):
            k, s = _hash_one(keys[i], rk, b)
            if k == hb[j]:
                out[j, i] = s * hs[j]


@njit(cache=True)
def _adjusted_batch_kernel(keys, values, row_keys, b, hb, hs, out):
    # out[q, j] accumulates vector q's bucket hb[j] in ascending key order
    for j in range(row_keys.size):
        rk = row_keys[j]
        for i in range(keys.size):
            k, s = _hash_one(keys[i], rk, b)
            if k == hb[j]:
                for q in range(values.shape[0]):
                    out[q, j] += s * values[q, i]
        for q in range(values.shape[0]):
            out[q, j] *= hs[j]


def mix_int(x: int) -> int:
    """Scalar version of the 64-bit mixer, on Python ints."""
    x &= MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Derive a child 64-bit seed from ``seed`` by counter mixing."""
    s = mix_int(seed)
    for p in path:
        s = mix_int(s ^ mix_int((p + 1) * _GOLDEN))
    return s


@dataclass(frozen=True)
class SketchParams:
    """Shape of a sketch: key-space size ``n``, ``ell`` rows, ``b`` buckets.

    ``b == 1`` is the AMS sketch.
    """

    n: int
    ell: int
    b: int

    def __post_init__(self):
        if self.n < 1 or self.ell < 1 or self.b < 1:
            raise SketchError(f"need n, ell, b >= 1, got {self}")
        if self.n > 1 << 64:
            raise SketchError("key space limited to 64 bits")

    @property
    def d(self) -> int:
        return self.ell * self.b

    @property
    def is_ams(self) -> bool:
        return self.b == 1


@dataclass(frozen=True)
class SketchRandomness:
    """Seeded hash functions h_j (bucket) and s_j (sign), j < ell."""

    params: SketchParams
    seed: int
    _row_keys: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & MASK64)
        keys = np.array([derive_seed(self.seed, j) for j in range(self.params.ell)], dtype=np.uint64)
        object.__setattr__(self, "_row_keys", keys)

    def hash_keys(self, keys) -> tuple[np.ndarray, np.ndarray]:
        """Buckets and signs for every row and key.

        Returns ``(buckets, signs)``, both shaped ``(ell, len(keys))``;
        buckets are int64 in [0, b), signs are int8 in {-1, +1}.
        """
        keys = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
        shape = (self.params.ell, keys.size)
        buckets = np.empty(shape, dtype=np.int64)
        signs = np.empty(shape, dtype=np.int8)
        _hash_kernel(keys, self._row_keys, self.params.b, buckets, signs)
        return buckets, signs

    def bucket_sign(self, j: int, key: int) -> tuple[int, int]:
        buckets, signs = self.hash_keys([key])
        return int(buckets[j, 0]), int(signs[j, 0])


def new_randomness(params: SketchParams, seed: int) -> SketchRandomness:
    return SketchRandomness(params, seed)


class SparseVector:
    """Real vector over 64-bit keys, stored as sorted (key, value) arrays.

    Explicit zeros are dropped on construction.
    """

    __slots__ = ("keys", "values")

    def __init__(self, keys=(), values=()):
        keys = np.asarray(keys, dtype=np.uint64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if keys.shape != values.shape:
            raise SketchError("keys and values differ in length")
        order = np.argsort(keys, kind="stable")
        keys, values = keys[order], values[order]
        if keys.size > 1 and np.any(keys[1:] == keys[:-1]):
            raise SketchError("duplicate keys")
        nz = values != 0.0
        self.keys = keys[nz]
        self.values = values[nz]
        self.keys.flags.writeable = False
        self.values.flags.writeable = False

    @classmethod
    def from_dict(cls, entries: Mapping[int, float]) -> "SparseVector":
        items = sorted(entries.items())
        return cls([k for k, _ in items], [v for _, v in items])

    @classmethod
    def basis(cls, key: int, value: float = 1.0) -> "SparseVector":
        return cls([key], [value])

    @classmethod
    def _sorted_unique(cls, keys, values) -> "SparseVector":
        # trusted constructor: keys already sorted and unique
        out = cls.__new__(cls)
        nz = values != 0.0
        out.keys, out.values = keys[nz], values[nz]
        out.keys.flags.writeable = False
        out.values.flags.writeable = False
        return out

    def to_dict(self) -> dict[int, float]:
        return {int(k): float(v) for k, v in zip(self.keys, self.values)}

    def supp(self) -> np.ndarray:
        return self.keys

    def __len__(self):
        return int(self.keys.size)

    def __getitem__(self, key: int) -> float:
        i = np.searchsorted(self.keys, np.uint64(key))
        if i < self.keys.size and self.keys[i] == np.uint64(key):
            return float(self.values[i])
        return 0.0

    def __contains__(self, key: int) -> bool:
        return self[key] != 0.0

    def norm_sq(self) -> float:
        return float(np.dot(self.values, self.values))

    def norm(self) -> float:
        return float(np.sqrt(self.norm_sq()))

    def norm1(self) -> float:
        return float(np.abs(self.values).sum())

    def scale(self, alpha: float) -> "SparseVector":
        return SparseVector._sorted_unique(self.keys, self.values * float(alpha))

    def __mul__(self, alpha: float) -> "SparseVector":
        return self.scale(alpha)

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1.0)

    def __add__(self, other: "SparseVector") -> "SparseVector":
        keys = np.concatenate([self.keys, other.keys])
        vals = np.concatenate([self.values, other.values])
        uniq, inv = np.unique(keys, return_inverse=True)
        out = np.zeros(uniq.size)
        np.add.at(out, inv, vals)
        return SparseVector._sorted_unique(uniq, out)

    def __sub__(self, other: "SparseVector") -> "SparseVector":
        return self + (-other)

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.keys, other.keys) and np.array_equal(self.values, other.values)

    def __repr__(self):
        if len(self) <= 6:
            return f"SparseVector({self.to_dict()})"
        return f"SparseVector(<{len(self)} entries>, norm={self.norm():.4g})"

    @classmethod
    def concat_disjoint(cls, parts, weights=None) -> "SparseVector":
        """Sum of vectors with pairwise disjoint supports, optionally weighted."""
        parts = list(parts)
        if not parts:
            return cls()
        if weights is None:
            weights = np.ones(len(parts))
        keys = np.concatenate([p.keys for p in parts])
        vals = np.concatenate([p.values * w for p, w in zip(parts, weights)])
        return cls(keys, vals)


@dataclass(frozen=True)
class SketchMatrix:
    """``ell x b`` table of measurements <mu^(j,k), v>."""

    values: np.ndarray
    params: SketchParams
    seed: int

    @property
    def shape(self):
        return self.values.shape

    def _check_compatible(self, other: "SketchMatrix"):
        if self.values.shape != other.values.shape:
            raise SketchError(f"shape mismatch {self.values.shape} vs {other.values.shape}")
        if self.params != other.params or self.seed != other.seed:
            raise SketchError("sketches built from different randomness")

    def __add__(self, other: "SketchMatrix") -> "SketchMatrix":
        self._check_compatible(other)
        return SketchMatrix(self.values + other.values, self.params, self.seed)

    def __mul__(self, alpha: float) -> "SketchMatrix":
        return SketchMatrix(self.values * float(alpha), self.params, self.seed)

    __rmul__ = __mul__


def zeros(rho: SketchRandomness) -> SketchMatrix:
    p = rho.params
    return SketchMatrix(np.zeros((p.ell, p.b)), p, rho.seed)


def _check_keys(params: SketchParams, keys: np.ndarray):
    if keys.size and int(keys[-1]) >= params.n:
        raise SketchError(f"key {int(keys[-1])} outside key space [0, {params.n})")


def sketch(rho: SketchRandomness, v: SparseVector) -> SketchMatrix:
    """Sketch_rho(v): values[j][k] = sum over keys i with h_j(i) = k of s_j(i) v_i."""
    p = rho.params
    _check_keys(p, v.keys)
    out = np.zeros((p.ell, p.b))
    if len(v):
        _sketch_kernel(v.keys, v.values, rho._row_keys, out)
    return SketchMatrix(out, p, rho.seed)


def add_scaled(sk: SketchMatrix, rho: SketchRandomness, v: SparseVector, alpha: float) -> SketchMatrix:
    """Sketch of (prior input + alpha * v), using linearity."""
    if sk.params != rho.params or sk.seed != rho.seed:
        raise SketchError("sketch and randomness do not match")
    if sk.values.shape != (rho.params.ell, rho.params.b):
        raise SketchError("sketch has the wrong dimensions")
    return SketchMatrix(sk.values + alpha * sketch(rho, v).values, sk.params, sk.seed)


def adjusted_measurements(rho: SketchRandomness, sk: SketchMatrix, key: int) -> np.ndarray:
    """The ell adjusted measurements of ``key``: values[j, h_j(key)] * s_j(key)."""
    if key < 0 or key >= rho.params.n:
        raise SketchError(f"key {key} outside key space")
    if sk.params != rho.params or sk.seed != rho.seed:
        raise SketchError("sketch and randomness do not match")
    buckets, signs = rho.hash_keys([key])
    rows = np.arange(rho.params.ell)
    return sk.values[rows, buckets[:, 0]] * signs[:, 0]


def measurement_coefficients(rho: SketchRandomness, keys, key: int) -> np.ndarray:
    """mu^(j)_i * mu^(j)_key for the ell measurement vectors that contain ``key``.

    Shape ``(ell, len(keys))``, entries in {-1, 0, +1} (int8). Dotting a row
    with the values of a vector supported on ``keys`` gives that vector's
    adjusted measurement of ``key`` in that row.
    """
    keys = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
    hb, hs = rho.hash_keys([key])
    out = np.zeros((rho.params.ell, keys.size), dtype=np.int8)
    _coeff_kernel(keys, rho._row_keys, rho.params.b, hb[:, 0].copy(), hs[:, 0].copy(), out)
    return out


def batch_adjusted_measurements(rho: SketchRandomness, keys, values, key: int) -> np.ndarray:
    """Adjusted measurements of ``key`` for several vectors sharing support ``keys``.

    ``values`` has shape ``(q, len(keys))`` (float64, or int8 to save memory);
    returns ``(q, ell)``. Bitwise equal
    to ``adjusted_measurements(rho, sketch(rho, v), key)`` for each row when
    ``key`` is not in ``keys``, without building the sketches.
    """
    keys = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
    values = np.atleast_2d(values)
    if values.dtype not in (np.int8, np.float64):
        values = values.astype(np.float64)
    values = np.ascontiguousarray(values)
    if values.shape[1] != keys.size:
        raise SketchError("values do not match keys")
    if keys.size and np.any(keys == np.uint64(key)):
        raise SketchError("key lies in the shared support")
    hb, hs = rho.hash_keys([key])
    out = np.zeros((values.shape[0], rho.params.ell))
    _adjusted_batch_kernel(keys, values, rho._row_keys, rho.params.b, hb[:, 0].copy(), hs[:, 0].astype(np.float64), out)
    return out


def inner_product_estimates(sx: SketchMatrix, sy: SketchMatrix) -> np.ndarray:
    """Per-row inner-product estimates sum_k sx[j,k] * sy[j,k]."""
    sx._check_compatible(sy)
    return np.einsum("jk,jk->j", sx.values, sy.values)


def ams_row_norms(sk: SketchMatrix) -> np.ndarray:
    """Squared measurement per row; their mean estimates ||v||^2 (b = 1 only)."""
    if sk.params.b != 1:
        raise ModeError(f"AMS row norms need b = 1, got b = {sk.params.b}")
    return sk.values[:, 0] ** 2

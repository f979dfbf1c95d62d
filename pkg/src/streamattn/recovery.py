"""Linear k-sparse recovery: bucketed sign measurements plus median decoding.

The encoder is an oblivious matrix Phi of `reps` stacked hash rows, each
hashing [n] into `width` signed buckets; one update touches exactly `reps`
cells. The decoder estimates every coordinate by the median of its signed
bucket values across repetitions and keeps the 2k largest magnitudes,
achieving ||x' - x||_2 <= (1 + eps1) * min_{k-sparse y} ||y - x||_2 with
per-sketch failure probability <= 0.001 at the default constants. Decoding
sweeps all n candidates (O(n log n) time); the encoder side stays sublinear.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

from .core import check_seed
from .sketch import MERSENNE_P, HashFamily4, poly_hash_mod

REPS_CONST = 4.0
WIDTH_CONST = 8.0


def recovery_dims(k: int, eps1: float, n: int, reps_const: float = REPS_CONST, width_const: float = WIDTH_CONST):
    """(repetitions, buckets per repetition, total measurement length)."""
    if k < 1 or n < 1:
        raise ValueError(f"need k >= 1 and n >= 1, got k={k} n={n}")
    if not 0.0 < eps1 <= 1.0:
        raise ValueError(f"eps1 must lie in (0,1], got {eps1}")
    reps = math.ceil(reps_const * math.log2(max(n, 2)))
    width = math.ceil(width_const * k / eps1)
    return reps, width, reps * width


class Measurement:
    """A length-m1 linear measurement z = Phi x, tagged with its sketch id."""

    __slots__ = ("z", "sketch_id")

    def __init__(self, z: np.ndarray, sketch_id: int):
        self.z = z
        self.sketch_id = sketch_id


class SparseColumn:
    """Sparse vector as parallel (strictly increasing) index and value arrays."""

    __slots__ = ("indices", "values")

    def __init__(self, indices, values, n: int | None = None):
        idx = np.asarray(indices, dtype=np.int64)
        val = np.asarray(values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-D and equal length")
        if idx.size:
            if (np.diff(idx) <= 0).any():
                raise ValueError("indices must be strictly increasing")
            if idx[0] < 0 or (n is not None and idx[-1] >= n):
                raise ValueError("index out of range")
        if not np.isfinite(val).all():
            raise ValueError("non-finite value in sparse column")
        self.indices = idx
        self.values = val

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.indices] = self.values
        return out

    def __iter__(self):
        return iter(zip(self.indices.tolist(), self.values.tolist()))


class RecoverySketch:
    """Hash structure behind Phi: bucket + sign hashes for each repetition.

    Pass explicit reps/width to pin the measurement size independently of n
    (n then only bounds the index space swept by the decoder).
    """

    def __init__(self, k: int, eps1: float, n: int, seed: int,
                 reps: int | None = None, width: int | None = None):
        self.k = int(k)
        self.eps1 = float(eps1)
        self.n = int(n)
        self.seed = check_seed(seed)
        auto_reps, auto_width, _ = recovery_dims(k, eps1, n)
        self.reps = int(reps) if reps is not None else auto_reps
        self.width = int(width) if width is not None else auto_width
        if self.reps < 1 or self.width < 1:
            raise ValueError(f"reps and width must be >= 1, got {self.reps}, {self.width}")
        self.m1 = self.reps * self.width
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x0F]))
        # pairwise-independent bucket hashes: (a x + b) mod p mod width, a != 0
        a = rng.integers(1, MERSENNE_P, size=(self.reps, 1), dtype=np.uint64)
        b = rng.integers(0, MERSENNE_P, size=(self.reps, 1), dtype=np.uint64)
        self.bucket_coeffs = np.concatenate([a, b], axis=1)
        self.sign_hashes = HashFamily4(self.reps, rng.integers(0, 2**63, dtype=np.uint64))
        digest = hashlib.blake2b(
            f"{self.seed}:{self.n}:{self.k}:{self.eps1}:{self.reps}:{self.width}".encode(),
            digest_size=8,
        ).digest()
        self.sketch_id = int.from_bytes(digest, "little")

    def buckets(self, x):
        """Bucket index per repetition; shape (reps,) or (reps, len(x))."""
        x = np.asarray(x, dtype=np.uint64)
        coeffs = self.bucket_coeffs if x.ndim == 0 else self.bucket_coeffs[:, None, :]
        vals = poly_hash_mod(coeffs, x)
        return (vals % np.uint64(self.width)).astype(np.int64)

    def signs(self, x):
        return self.sign_hashes.signs(x)

    def cells(self, i: int) -> np.ndarray:
        """Flat measurement cells touched by index i, one per repetition."""
        if not 0 <= i < self.n:
            raise IndexError(f"index {i} out of range [0, {self.n})")
        return np.arange(self.reps, dtype=np.int64) * self.width + self.buckets(np.uint64(i))

    def new_measurement(self) -> Measurement:
        return Measurement(np.zeros(self.m1), self.sketch_id)

    def new_bank(self, columns: int) -> np.ndarray:
        """Zeroed (m1, columns) array: one Measurement per tracked column."""
        return np.zeros((self.m1, columns))


def encode_update(rs: RecoverySketch, z: Measurement, i: int, delta: float) -> None:
    """z += Phi e_i delta: touches exactly rs.reps cells."""
    if z.sketch_id != rs.sketch_id:
        raise ValueError("measurement belongs to a different recovery sketch")
    z.z[rs.cells(i)] += rs.signs(np.uint64(i)) * delta


def encode_update_many(rs: RecoverySketch, bank: np.ndarray, i: int, values) -> None:
    """Apply one index-i update to a bank of measurements (columns share i).

    bank row layout: bank[cell, c] is cell `cell` of the c-th measurement.
    """
    vals = np.asarray(values, dtype=np.float64)
    cells = rs.cells(i)
    signs = rs.signs(np.uint64(i))
    for r in range(rs.reps):
        bank[cells[r]] += signs[r] * vals


def encode_vector(rs: RecoverySketch, x) -> Measurement:
    """Phi x for a dense vector, bucket-summed per repetition."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != rs.n:
        raise ValueError(f"vector length {x.shape[0]} != ambient dim {rs.n}")
    idx = np.arange(rs.n, dtype=np.uint64)
    buckets = rs.buckets(idx)
    signed = rs.signs(idx) * x[None, :]
    z = np.empty(rs.m1)
    for r in range(rs.reps):
        z[r * rs.width : (r + 1) * rs.width] = np.bincount(
            buckets[r], weights=signed[r], minlength=rs.width
        )
    return Measurement(z, rs.sketch_id)


def decode_estimates(rs: RecoverySketch, z: np.ndarray) -> np.ndarray:
    """Median-of-repetitions estimate for every coordinate in [n]."""
    idx = np.arange(rs.n, dtype=np.uint64)
    buckets = rs.buckets(idx)
    signs = rs.signs(idx)
    gathered = z.reshape(rs.reps, rs.width)[np.arange(rs.reps)[:, None], buckets]
    return np.median(signs * gathered, axis=0)


def decode_topk(rs: RecoverySketch, z: Measurement) -> SparseColumn:
    """Best-2k sparse approximation decoded from a measurement.

    Keeps the 2k largest-magnitude median estimates (ties to the lower
    index), drops exact zeros, and returns entries sorted by index.
    """
    if z.sketch_id != rs.sketch_id:
        raise ValueError("measurement belongs to a different recovery sketch")
    est = decode_estimates(rs, z.z)
    keep = min(2 * rs.k, rs.n)
    # sort by (-|value|, index); lexsort keys run last-key-major
    order = np.lexsort((np.arange(rs.n), -np.abs(est)))[:keep]
    order = order[est[order] != 0.0]
    order.sort()
    return SparseColumn(order, est[order], rs.n)

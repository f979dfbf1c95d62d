"""Column-on-demand random projections with streaming rank-one accumulation.

Two projection families share one interface: an AMS sketch whose entries are
+-1/sqrt(m2) signs from 4-wise independent polynomial hashes, and a Gaussian
sketch with N(0, 1/m2) entries regenerated per column from counter-based
seeding. Neither ever materializes its m2 x n matrix; state is O(m2) words.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import blas as _blas

from .core import check_seed

MERSENNE_P = (1 << 61) - 1

_P = np.uint64(MERSENNE_P)
_MASK32 = np.uint64(0xFFFFFFFF)
_MASK29 = np.uint64((1 << 29) - 1)
_U3 = np.uint64(3)
_U29 = np.uint64(29)
_U32 = np.uint64(32)
_U61 = np.uint64(61)


def _mulmod(a, b):
    # (a * b) mod (2^61 - 1) on uint64 arrays, via 32-bit limb split;
    # both inputs must already be < 2^61.
    a1 = a >> _U32
    a0 = a & _MASK32
    b1 = b >> _U32
    b0 = b & _MASK32
    mid = a1 * b0 + a0 * b1
    lo = a0 * b0
    acc = (
        ((a1 * b1) << _U3)
        + (mid >> _U29)
        + ((mid & _MASK29) << _U32)
        + (lo >> _U61)
        + (lo & _P)
    )
    acc = (acc >> _U61) + (acc & _P)
    return np.where(acc >= _P, acc - _P, acc)


def poly_hash_mod(coeffs, x):
    """Evaluate polynomial hashes over GF(2^61 - 1) by Horner's rule.

    coeffs: uint64 array (..., deg+1), highest degree first; x: uint64 index
    array broadcastable against coeffs[..., 0]. Returns values in [0, p).
    """
    coeffs = np.asarray(coeffs, dtype=np.uint64)
    x = np.asarray(x, dtype=np.uint64) % _P
    acc = np.broadcast_to(coeffs[..., 0], np.broadcast_shapes(coeffs[..., 0].shape, x.shape)).copy()
    for j in range(1, coeffs.shape[-1]):
        acc = _mulmod(acc, x) + coeffs[..., j]
        acc = np.where(acc >= _P, acc - _P, acc)
    return acc


class HashFamily4:
    """Batch of 4-wise independent hash functions (degree-3 polynomials mod 2^61-1).

    `count` independent functions are drawn from one seeded generator; each
    costs 4 stored words, evaluation is deterministic in the coefficients.
    """

    DEGREE = 3

    def __init__(self, count: int, seed: int):
        self.count = int(count)
        self.seed = check_seed(seed)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x4A]))
        self.coeffs = rng.integers(0, MERSENNE_P, size=(self.count, 4), dtype=np.uint64)

    def values(self, x):
        """Raw field values, shape (count,) for scalar x or (count, len(x))."""
        x = np.asarray(x, dtype=np.uint64)
        if x.ndim == 0:
            return poly_hash_mod(self.coeffs, x)
        return poly_hash_mod(self.coeffs[:, None, :], x[None, :])

    def signs(self, x):
        """Map field values to +-1 via the low bit (bias O(1/p))."""
        return 1.0 - 2.0 * (self.values(x) & np.uint64(1)).astype(np.float64)


class AmsSketcher:
    """Implicit m2 x n sign matrix Psi with entries h_i(j) in {+-1/sqrt(m2)}."""

    def __init__(self, m2: int, n: int, seed: int):
        if m2 < 1 or n < 1:
            raise ValueError(f"m2 and n must be >= 1, got m2={m2} n={n}")
        self.m2 = int(m2)
        self.n = int(n)
        self.seed = check_seed(seed)
        self.hashes = HashFamily4(self.m2, self.seed)
        self._scale = 1.0 / math.sqrt(self.m2)

    def column(self, i: int) -> np.ndarray:
        """Column i of the implicit Psi, regenerated on demand."""
        self._check_index(i)
        return self.hashes.signs(np.uint64(i)) * self._scale

    def columns(self, indices) -> np.ndarray:
        """Columns at the given indices, stacked as an (m2, len(indices)) block."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError(f"column index out of range [0, {self.n})")
        return self.hashes.signs(idx.astype(np.uint64)) * self._scale

    def _check_index(self, i: int):
        if not 0 <= i < self.n:
            raise IndexError(f"column index {i} out of range [0, {self.n})")


class GaussianSketcher:
    """Implicit m2 x n Gaussian matrix, entries N(0, 1/m2).

    Column i is regenerated from a Philox counter-based stream keyed on
    (seed, i), so no n-sized state exists and regeneration is exact.
    """

    def __init__(self, m2: int, n: int, seed: int):
        if m2 < 1 or n < 1:
            raise ValueError(f"m2 and n must be >= 1, got m2={m2} n={n}")
        self.m2 = int(m2)
        self.n = int(n)
        self.seed = check_seed(seed)
        self._scale = 1.0 / math.sqrt(self.m2)

    def column(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n:
            raise IndexError(f"column index {i} out of range [0, {self.n})")
        bitgen = np.random.Philox(key=[self.seed, int(i)])
        return np.random.Generator(bitgen).standard_normal(self.m2) * self._scale

    def columns(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        out = np.empty((self.m2, idx.size))
        for j, i in enumerate(idx):
            out[:, j] = self.column(int(i))
        return out


def sketch_column(sketcher, i: int) -> np.ndarray:
    """Column i of the implicit projection matrix (AMS or Gaussian)."""
    return sketcher.column(i)


def materialize(sketcher) -> np.ndarray:
    """Full m2 x n matrix; test/oracle use only, O(m2 n) memory."""
    return sketcher.columns(np.arange(sketcher.n))


def jl_dim(eps2: float, delta: float, union_count: int = 1, c: float = 8.0) -> int:
    """Projection rows needed for eps2 inner-product accuracy at failure delta.

    m2 = ceil(c * eps2^-2 * ln(union_count / delta)); union_count folds a
    union bound over that many simultaneous events (n*d for a full run).
    """
    if not 0.0 < eps2 <= 1.0:
        raise ValueError(f"eps2 must lie in (0,1], got {eps2}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    if union_count < 1:
        raise ValueError(f"union_count must be >= 1, got {union_count}")
    return math.ceil(c * eps2**-2 * math.log(union_count / delta))


class SketchAccumulator:
    """Streaming sum of rank-one updates: buffer = sum_i column(i) (x) row_i.

    After a full pass over updates {(i, r_i)} the buffer equals Psi R for the
    stacked row matrix R, without ever holding R. Updates are staged in a
    fixed-size block and flushed through one in-place GEMM; staging is
    O(block * (m2 + width)), independent of the stream length. Each stream
    index must be used at most once (enforced by the caller).
    """

    BLOCK = 64

    def __init__(self, sketcher, width: int):
        if width < 1:
            raise ValueError(f"width must be >= 1, got {width}")
        self.sketcher = sketcher
        self.m2 = sketcher.m2
        self.width = int(width)
        # Fortran order lets BLAS accumulate in place without a copy
        self._buffer = np.zeros((self.m2, self.width), order="F")
        self._cols = np.empty((self.m2, self.BLOCK), order="F")
        self._rows = np.empty((self.BLOCK, self.width))
        self._pending = 0

    def add(self, i: int, row) -> None:
        """Accumulate column(i) (x) row. O(m2 + width) staging, GEMM amortized."""
        r = np.asarray(row, dtype=np.float64).ravel()
        if r.shape[0] != self.width:
            raise ValueError(f"row has length {r.shape[0]}, accumulator width {self.width}")
        self._cols[:, self._pending] = self.sketcher.column(i)
        self._rows[self._pending] = r
        self._pending += 1
        if self._pending == self.BLOCK:
            self.flush()

    def flush(self) -> None:
        if self._pending == 0:
            return
        _blas.dgemm(
            1.0,
            self._cols[:, : self._pending],
            self._rows[: self._pending],
            beta=1.0,
            c=self._buffer,
            overwrite_c=1,
        )
        self._pending = 0

    @property
    def matrix(self) -> np.ndarray:
        """Current accumulated product (flushes staged updates first)."""
        self.flush()
        return self._buffer

    def state_arrays(self) -> dict:
        return {"buffer": self._buffer, "stage_cols": self._cols, "stage_rows": self._rows}


def accumulate_rank_one(acc: SketchAccumulator, sketcher, i: int, row) -> None:
    """Functional form of SketchAccumulator.add; sketcher must match acc's."""
    if sketcher is not acc.sketcher:
        raise ValueError("accumulator was built for a different sketcher")
    acc.add(i, row)

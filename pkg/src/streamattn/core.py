"""Dense matrix plumbing: validation, bit-exact file I/O, spectral norm bound.

Matrices are plain 2-D float64 numpy arrays in row-major (C) order. Every
loader/constructor in this package guarantees finite entries; anything
streamed or stored goes through the checks here.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

MATF_MAGIC = b"MATF0001"
_HEADER = struct.Struct("<8sII")  # magic, rows (u32 LE), cols (u32 LE)


class MatFormatError(ValueError):
    """Raised when a .matf file is malformed or contains non-finite data."""


def ensure_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 C-order array and reject NaN/Inf entries."""
    a = np.ascontiguousarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        r, c = np.argwhere(~np.isfinite(a))[0]
        raise ValueError(f"{name} has non-finite entry at cell ({r}, {c})")
    return a


def check_seed(seed: int) -> int:
    """Validate a 64-bit unsigned RNG seed."""
    s = int(seed)
    if not 0 <= s < 2**64:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    return s


def mat_store(m, path) -> None:
    """Write a matrix as MATF: 8-byte magic, u32 rows, u32 cols, row-major f64 LE.

    Round-trips bit-exactly with mat_load.
    """
    a = ensure_matrix(m)
    rows, cols = a.shape
    if rows >= 2**32 or cols >= 2**32:
        raise ValueError(f"dims {rows}x{cols} exceed u32 header range")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MATF_MAGIC, rows, cols))
            fh.write(a.astype("<f8", copy=False).tobytes(order="C"))
    except OSError as exc:
        raise OSError(f"failed writing matrix to {path}: {exc}") from exc


def mat_load(path) -> np.ndarray:
    """Load a MATF file, validating header, payload length, and finiteness."""
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise MatFormatError(
            f"{path}: truncated header, {len(blob)} bytes < {_HEADER.size} (byte offset 0)"
        )
    magic, rows, cols = _HEADER.unpack_from(blob, 0)
    if magic != MATF_MAGIC:
        raise MatFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    payload = blob[_HEADER.size :]
    expected = rows * cols * 8
    if len(payload) != expected:
        raise MatFormatError(
            f"{path}: payload length mismatch, header says {rows}x{cols} "
            f"({expected} bytes) but payload has {len(payload)} bytes "
            f"(byte offset {_HEADER.size})"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(rows, cols)
    bad = ~np.isfinite(data)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        offset = _HEADER.size + (r * cols + c) * 8
        raise MatFormatError(
            f"{path}: non-finite entry at cell ({r}, {c}), byte offset {offset}"
        )
    return np.ascontiguousarray(data)


def spectral_norm_upper(m, iterations: int = 30) -> float:
    """Upper estimate of the spectral norm via power iteration.

    Deterministic all-ones start vector, `iterations` rounds of A^T A, then a
    (1 + 1e-6) safety factor. The result never falls below the largest column
    norm, so it is safe for enforcing spectral-norm preconditions.
    """
    a = ensure_matrix(m)
    if a.size == 0 or not a.any():
        return 0.0
    col_norm = float(np.sqrt((a * a).sum(axis=0).max()))
    v = np.full(a.shape[1], 1.0 / math.sqrt(a.shape[1]))
    est = 0.0
    for _ in range(iterations):
        u = a @ v
        nu = float(np.linalg.norm(u))
        if nu == 0.0:
            break
        v = a.T @ u
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            break
        v /= nv
        est = float(np.linalg.norm(a @ v))
    return max(est, col_norm) * (1.0 + 1e-6)


class ProblemParams:
    """Sizes and accuracy knobs for one streaming-attention problem.

    n: sequence length; d: head dimension; b: entry bound on Q and K;
    k: output sparsity target; eps1: sparse-recovery accuracy; eps2:
    inner-product sketch accuracy; delta: failure probability.
    """

    __slots__ = ("n", "d", "b", "k", "eps1", "eps2", "delta")

    def __init__(self, n, d, b, k, eps1, eps2, delta):
        if n < 1 or d < 1 or k < 1:
            raise ValueError(f"n, d, k must be >= 1, got n={n} d={d} k={k}")
        if not 0.0 < eps1 < 1.0:
            raise ValueError(f"eps1 must lie in (0,1), got {eps1}")
        if not 0.0 < eps2 < 1.0:
            raise ValueError(f"eps2 must lie in (0,1), got {eps2}")
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must lie in (0,1), got {delta}")
        if not (math.isfinite(b) and b >= 0.0):
            raise ValueError(f"entry bound b must be finite and >= 0, got {b}")
        self.n = int(n)
        self.d = int(d)
        self.b = float(b)
        self.k = int(k)
        self.eps1 = float(eps1)
        self.eps2 = float(eps2)
        self.delta = float(delta)

    def __repr__(self):
        return (
            f"ProblemParams(n={self.n}, d={self.d}, b={self.b}, k={self.k}, "
            f"eps1={self.eps1}, eps2={self.eps2}, delta={self.delta})"
        )

    def __eq__(self, other):
        if not isinstance(other, ProblemParams):
            return NotImplemented
        return all(getattr(self, f) == getattr(other, f) for f in self.__slots__)

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__slots__}

"""Positive polynomial feature maps for the exponential kernel.

A length-d input row x maps to the concatenation of scaled tensor powers

    block j = x^(tensor j) / (sqrt(j!) * d^(j/2)),   j = 0 .. g,

so that for any two rows q, k:

    <phi(q), phi(k)> = sum_{j<=g} (q.k / d)^j / j!

i.e. the degree-g Taylor truncation of exp(q.k / d). With g even the
truncation is strictly positive on all of R, which keeps every softmax
denominator built from these features positive.
"""
from __future__ import annotations

import math

import numpy as np


class FeatureConfig:
    """Input dimension d and even Taylor degree g; feature width t = sum d^j."""

    __slots__ = ("d", "g")

    def __init__(self, d: int, g: int):
        if d < 1:
            raise ValueError(f"d must be >= 1, got {d}")
        if g < 2 or g % 2 != 0:
            raise ValueError(f"degree g must be even and >= 2, got {g}")
        self.d = int(d)
        self.g = int(g)

    @property
    def t(self) -> int:
        if self.d == 1:
            return self.g + 1
        return (self.d ** (self.g + 1) - 1) // (self.d - 1)

    def __repr__(self):
        return f"FeatureConfig(d={self.d}, g={self.g}, t={self.t})"

    def __eq__(self, other):
        if not isinstance(other, FeatureConfig):
            return NotImplemented
        return self.d == other.d and self.g == other.g


def default_degree(b: float) -> int:
    """Default truncation degree for entry bound b: 6 up to b=1, 8 up to b=2."""
    if b <= 1.0:
        return 6
    if b <= 2.0:
        return 8
    raise ValueError(
        f"no default degree for entry bound {b} > 2; pass an explicit degree"
    )


def build_feature_row(x, cfg: FeatureConfig) -> np.ndarray:
    """One feature row of width cfg.t from a length-d input row.

    The same map serves the query and key sides. O(t) time: each tensor-power
    block is the flattened outer product of the previous block with x.
    """
    v = np.asarray(x, dtype=np.float64).ravel()
    if v.shape[0] != cfg.d:
        raise ValueError(f"input row has length {v.shape[0]}, config wants {cfg.d}")
    if not np.isfinite(v).all():
        raise ValueError("input row has non-finite entries")
    out = np.empty(cfg.t)
    out[0] = 1.0
    pos = 1
    block = out[0:1]
    for j in range(1, cfg.g + 1):
        size = block.shape[0] * cfg.d
        nxt = out[pos : pos + size]
        # block_j = (block_{j-1} (x) x) / sqrt(j * d), keeping the running
        # 1/sqrt(j!) d^(j/2) scale without recomputing factorials
        np.multiply(block[:, None], v[None, :] * (1.0 / math.sqrt(j * cfg.d)), out=nxt.reshape(block.shape[0], cfg.d))
        block = nxt
        pos += size
    return out


def feature_matrix(rows, cfg: FeatureConfig) -> np.ndarray:
    """Stack build_feature_row over the rows of an (n, d) matrix."""
    rows = np.asarray(rows, dtype=np.float64)
    out = np.empty((rows.shape[0], cfg.t))
    for i in range(rows.shape[0]):
        out[i] = build_feature_row(rows[i], cfg)
    return out


def kernel_error_bound(b: float, d: int, g: int) -> float:
    """Entrywise gap between the feature inner product and exp(q.k/d).

    Lagrange remainder of the degree-g truncation at argument bound b^2
    (|q.k/d| <= b^2 whenever both rows have sup-norm <= b); the head
    dimension d drops out of the bound. Decreasing in g once g + 1 > b^2.
    """
    if b < 0:
        raise ValueError(f"entry bound must be >= 0, got {b}")
    if g < 0:
        raise ValueError(f"degree must be >= 0, got {g}")
    arg = b * b
    return arg ** (g + 1) * math.exp(arg) / math.factorial(g + 1)

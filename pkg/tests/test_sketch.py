import math

import numpy as np
import pytest

from streamattn.sketch import (
    MERSENNE_P,
    AmsSketcher,
    GaussianSketcher,
    HashFamily4,
    SketchAccumulator,
    accumulate_rank_one,
    jl_dim,
    materialize,
    poly_hash_mod,
    sketch_column,
)


def test_poly_hash_matches_bigint_arithmetic():
    rng = np.random.default_rng(0)
    coeffs = rng.integers(0, MERSENNE_P, size=(5, 4), dtype=np.uint64)
    xs = rng.integers(0, 2**62, size=7, dtype=np.uint64)
    got = poly_hash_mod(coeffs[:, None, :], xs[None, :])
    for i in range(5):
        c3, c2, c1, c0 = (int(c) for c in coeffs[i])
        for j, x in enumerate(int(x) for x in xs):
            xm = x % MERSENNE_P
            want = (c3 * xm**3 + c2 * xm**2 + c1 * xm + c0) % MERSENNE_P
            assert int(got[i, j]) == want


def test_hash_family_deterministic():
    h1 = HashFamily4(8, seed=99)
    h2 = HashFamily4(8, seed=99)
    xs = np.arange(100, dtype=np.uint64)
    assert np.array_equal(h1.signs(xs), h2.signs(xs))
    assert set(np.unique(h1.signs(xs))) <= {-1.0, 1.0}


def test_ams_entry_magnitudes():
    s = AmsSketcher(m2=4, n=100, seed=1)
    for i in (0, 5, 99):
        col = sketch_column(s, i)
        assert np.all(np.abs(col) == 0.5)


def test_ams_column_determinism():
    s = AmsSketcher(m2=16, n=64, seed=5)
    assert np.array_equal(s.column(7), s.column(7))
    s2 = AmsSketcher(m2=16, n=64, seed=5)
    assert np.array_equal(s.column(7), s2.column(7))


def test_ams_out_of_range():
    s = AmsSketcher(m2=4, n=10, seed=0)
    with pytest.raises(IndexError):
        s.column(10)
    with pytest.raises(IndexError):
        s.column(-1)


def test_ams_sign_balance():
    m2, n = 64, 1024
    s = AmsSketcher(m2=m2, n=n, seed=0)
    entries = materialize(s)
    sigma = (1 / math.sqrt(m2)) / math.sqrt(m2 * n)
    assert abs(entries.mean()) <= 3 * sigma


def test_gaussian_column_determinism_and_scale():
    g = GaussianSketcher(m2=256, n=32, seed=11)
    a = g.column(3)
    b = g.column(3)
    assert np.array_equal(a, b)
    # entries ~ N(0, 1/m2); crude variance check across a few columns
    cols = materialize(g)
    assert cols.var() == pytest.approx(1.0 / 256, rel=0.2)


def test_sketchers_store_no_n_sized_state():
    huge_n = 10**8
    s = AmsSketcher(m2=32, n=huge_n, seed=0)
    assert s.hashes.coeffs.shape == (32, 4)
    g = GaussianSketcher(m2=32, n=huge_n, seed=0)
    col = g.column(huge_n - 1)
    assert col.shape == (32,)


def test_jl_dim_values():
    assert jl_dim(0.5, 0.1, 1) == 74
    assert jl_dim(1.0, 0.1, 1) == math.ceil(8 * math.log(10))
    # halving eps quadruples m2, up to the ceiling
    for eps, delta, uc in ((0.4, 0.05, 10), (0.5, 0.1, 1), (0.2, 0.01, 1024)):
        m, m_half = jl_dim(eps, delta, uc), jl_dim(eps / 2, delta, uc)
        assert 4 * m - 3 <= m_half <= 4 * m
    with pytest.raises(ValueError):
        jl_dim(0.0, 0.1)
    with pytest.raises(ValueError):
        jl_dim(0.5, 1.0)


def test_accumulator_zero_row_noop():
    s = AmsSketcher(m2=8, n=16, seed=2)
    acc = SketchAccumulator(s, width=5)
    acc.add(0, np.zeros(5))
    assert np.array_equal(acc.matrix, np.zeros((8, 5)))


def test_accumulator_single_update_is_outer_product():
    s = AmsSketcher(m2=8, n=16, seed=2)
    acc = SketchAccumulator(s, width=3)
    row = np.array([1.0, -2.0, 0.5])
    acc.add(4, row)
    assert np.array_equal(acc.matrix, np.outer(s.column(4), row))


def test_accumulator_matches_offline_product():
    rng = np.random.default_rng(6)
    n, width, m2 = 32, 7, 24
    for make in (lambda: AmsSketcher(m2, n, 3), lambda: GaussianSketcher(m2, n, 3)):
        s = make()
        r = rng.standard_normal((n, width))
        acc = SketchAccumulator(s, width)
        for i in range(n):
            accumulate_rank_one(acc, s, i, r[i])
        offline = materialize(s) @ r
        assert np.linalg.norm(acc.matrix - offline) <= 1e-12 * max(
            1.0, np.linalg.norm(offline)
        )


def test_accumulator_flush_boundary():
    # stream longer than one staging block; result must not depend on blocking
    rng = np.random.default_rng(12)
    n, width, m2 = 3 * SketchAccumulator.BLOCK + 5, 4, 16
    s = AmsSketcher(m2, n, 8)
    r = rng.standard_normal((n, width))
    acc = SketchAccumulator(s, width)
    for i in range(n):
        acc.add(i, r[i])
    offline = materialize(s) @ r
    assert np.allclose(acc.matrix, offline, rtol=1e-9, atol=1e-12)


def test_accumulator_width_mismatch():
    s = AmsSketcher(m2=8, n=16, seed=2)
    acc = SketchAccumulator(s, width=5)
    with pytest.raises(ValueError, match="width"):
        acc.add(0, np.zeros(4))


def test_ams_norm_preservation_in_expectation():
    n = 64
    u = np.random.default_rng(0).standard_normal(n)
    target = float(u @ u)
    vals = []
    for seed in range(2000):
        s = AmsSketcher(m2=74, n=n, seed=seed)
        pu = materialize(s) @ u
        vals.append(float(pu @ pu))
    mean = float(np.mean(vals))
    assert abs(mean - target) <= 0.05 * target

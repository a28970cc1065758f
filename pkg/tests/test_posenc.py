import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tspformer.numerics.functional import ConfigError
from tspformer.posenc import (
    circular_pe,
    pe_similarity_matrix,
    pe_table,
    similarity_csv,
    sinusoidal_pe,
    spatial_pe,
    to_pgm,
)


def direct_circular(pos, n, d):
    """Closed form evaluated element by element with math."""
    out = []
    for i in range(d // 2):
        a = pos / 10000 ** (2 * i / d) + 2 * math.pi * pos / n
        out += [math.sin(a), math.cos(a)]
    return np.array(out)


def test_sinusoidal_examples():
    assert np.array_equal(sinusoidal_pe(0, 4), [0, 1, 0, 1])
    assert np.allclose(sinusoidal_pe(1, 2), [0.841471, 0.540302], atol=1e-6)


@given(st.floats(-1e4, 1e4), st.integers(1, 64))
def test_sinusoidal_range(pos, half):
    v = sinusoidal_pe(pos, 2 * half)
    assert np.all(np.abs(v) <= 1.0)


@pytest.mark.parametrize("fn", [lambda d: sinusoidal_pe(0, d), lambda d: circular_pe(0, 5, d)])
def test_odd_dim_rejected(fn):
    with pytest.raises(ConfigError):
        fn(7)


def test_spatial_dim_rejected():
    with pytest.raises(ConfigError):
        spatial_pe((0.1, 0.2), 6)


@pytest.mark.parametrize("n,d", [(3, 2), (10, 16), (50, 128)])
def test_circular_at_zero_and_full_turn(n, d):
    assert np.abs(circular_pe(0, n, d) - np.tile([0.0, 1.0], d // 2)).max() < 1e-9
    assert np.abs(circular_pe(n, n, d) - sinusoidal_pe(n, d)).max() < 1e-9


def test_circular_table_matches_direct_evaluation():
    table = pe_table("circular", 50, 128).values
    ref = np.stack([direct_circular(p, 50, 128) for p in range(50)])
    assert np.abs(table - ref).max() < 1e-9


def test_spatial_examples():
    assert np.array_equal(spatial_pe((0.0, 0.0), 8), np.tile([0.0, 1.0], 4))
    a, b = spatial_pe((0.3, 0.1), 16), spatial_pe((0.3, 0.9), 16)
    assert np.array_equal(a[:8], b[:8])
    got = spatial_pe((0.5, 0.25), 8)
    want = np.array(
        [math.sin(math.pi), math.cos(math.pi), math.sin(math.pi / 100), math.cos(math.pi / 100),
         math.sin(math.pi / 2), math.cos(math.pi / 2), math.sin(math.pi / 200), math.cos(math.pi / 200)]
    )
    assert np.abs(got - want).max() < 1e-12


@pytest.mark.parametrize("kind", ["sinusoidal", "circular"])
def test_similarity_diagonal_and_shift_structure(kind):
    n, d = 30, 32
    sim = pe_similarity_matrix(pe_table(kind, n, d))
    assert np.allclose(np.diag(sim), d / 2, atol=1e-9)
    assert np.allclose(sim, sim.T, atol=1e-12)
    for s in range(1, n):
        assert np.abs(sim[: n - s, : n - s] - sim[s:, s:]).max() < 1e-9


def test_circular_specific_shift_entry():
    sim = pe_similarity_matrix(pe_table("circular", 50, 128))
    assert abs(sim[3, 7] - sim[10, 14]) < 1e-9


def test_circular_ring_ordering():
    sim = pe_similarity_matrix(pe_table("circular", 50, 128))
    assert sim[0, 1] > sim[0, 25]
    assert sim[0, 49] > sim[0, 25]


def test_sinusoidal_lacks_ring_closure():
    circ = pe_similarity_matrix(pe_table("circular", 50, 128))
    sinu = pe_similarity_matrix(pe_table("sinusoidal", 50, 128))
    assert not np.allclose(circ, sinu)
    # plain sinusoids keep the last position far from the first
    assert (sinu[0, 49] - sinu[0, 25]) < (circ[0, 49] - circ[0, 25])


def test_spatial_depends_on_coordinates_only():
    pts = np.random.default_rng(0).random((6, 2))
    a = pe_table("spatial", 6, 16, points=pts).values
    perm = [5, 3, 1, 0, 2, 4]
    b = pe_table("spatial", 6, 16, points=pts[perm]).values
    assert np.array_equal(a[perm], b)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        pe_table("rotary", 4, 8)


def test_csv_and_pgm_outputs():
    sim = pe_similarity_matrix(pe_table("circular", 5, 8))
    csv_text = similarity_csv(sim)
    rows = [list(map(float, line.split(","))) for line in csv_text.splitlines()]
    assert np.allclose(rows, sim, rtol=1e-8)
    pgm = to_pgm(sim)
    header, pixels = pgm[:11], pgm[11:]
    assert header == b"P5\n5 5\n255\n"
    assert len(pixels) == 25
    assert max(pixels) == 255 and min(pixels) == 0

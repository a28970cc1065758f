import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tspformer.tsp import (
    DatasetParseError,
    DatasetRecord,
    Instance,
    InvalidSizeError,
    InvalidTourError,
    Tour,
    augment_tour,
    canonicalize_tour,
    format_record,
    format_tour_suffix,
    gen_instance,
    gen_instances,
    optimality_gap,
    parse_line,
    read_dataset,
    tour_length,
    write_dataset,
)


def test_gen_instance_deterministic():
    a, b = gen_instance(5, 7), gen_instance(5, 7)
    assert np.array_equal(a.points, b.points)
    assert a == b


def test_gen_instance_range_and_size():
    inst = gen_instance(3, 0)
    assert inst.n == 3
    assert ((inst.points >= 0) & (inst.points < 1)).all()


def test_gen_instance_uses_numpy_default_rng():
    expected = np.random.default_rng(1).random((50, 2))
    inst = gen_instance(50, 1)
    assert np.array_equal(inst.points, expected)
    assert 0.40 <= inst.points.mean() <= 0.60


def test_gen_instances_offsets_seed():
    batch = gen_instances(6, 3, seed=10)
    assert [i for i in batch] == [gen_instance(6, 10 + k) for k in range(3)]


@pytest.mark.parametrize("n", [2, 0, -4])
def test_gen_instance_rejects_small_n(n):
    with pytest.raises(InvalidSizeError):
        gen_instance(n, 0)


def test_instance_is_immutable():
    inst = gen_instance(4, 0)
    with pytest.raises(ValueError):
        inst.points[0, 0] = 0.5


def test_tour_length_triangle():
    inst = Instance([(0, 0), (1, 0), (0, 1)])
    assert tour_length(inst, [0, 1, 2]) == pytest.approx(2 + math.sqrt(2), abs=1e-12)


def test_tour_length_square(square):
    assert tour_length(square, [0, 1, 2, 3]) == 4.0


@pytest.mark.parametrize("bad", [[0, 1, 1, 2], [0, 1, 2], [0, 1, 2, 4]])
def test_tour_length_rejects_non_permutation(square, bad):
    with pytest.raises(InvalidTourError):
        tour_length(square, bad)


def test_gap_values():
    assert optimality_gap(10.0, 10.0) == 0.0
    assert optimality_gap(11.0, 10.0) == pytest.approx(10.0)
    assert optimality_gap(9.99, 10.0) < 0


@pytest.mark.parametrize("ref", [0.0, -1.0])
def test_gap_rejects_bad_reference(ref):
    with pytest.raises(ValueError):
        optimality_gap(1.0, ref)


def test_reference_row_of_published_table_has_zero_gap():
    # the 5.69 TSP-50 optimum compared against itself
    assert optimality_gap(5.69, 5.69) == 0.0


def test_canonicalize_examples():
    assert canonicalize_tour([2, 0, 1]).order == (0, 1, 2)
    assert canonicalize_tour([0, 3, 1, 2]).order == (0, 2, 1, 3)


def test_augment_examples():
    assert augment_tour([0, 1, 2, 3], 1, False).order == (1, 2, 3, 0)
    assert augment_tour([0, 1, 2, 3], 0, True).order == (0, 3, 2, 1)


@pytest.mark.parametrize("rot", [-1, 4])
def test_augment_rejects_rotation(rot):
    with pytest.raises(ValueError):
        augment_tour([0, 1, 2, 3], rot, False)


@st.composite
def instance_and_tour(draw, max_n=12):
    n = draw(st.integers(3, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    perm = draw(st.permutations(range(n)))
    return gen_instance(n, seed), list(perm)


@settings(max_examples=100, deadline=None)
@given(instance_and_tour(), st.data())
def test_augment_preserves_length(it, data):
    inst, tour = it
    rot = data.draw(st.integers(0, inst.n - 1))
    flip = data.draw(st.booleans())
    out = augment_tour(tour, rot, flip)
    assert sorted(out.order) == list(range(inst.n))
    assert tour_length(inst, out) == pytest.approx(tour_length(inst, tour), abs=1e-12)
    assert canonicalize_tour(out) == canonicalize_tour(tour)


@settings(max_examples=100, deadline=None)
@given(instance_and_tour())
def test_length_invariant_under_reversal_and_rotation(it):
    inst, tour = it
    base = tour_length(inst, tour)
    assert tour_length(inst, tour[::-1]) == pytest.approx(base, abs=1e-12)
    assert tour_length(inst, tour[1:] + tour[:1]) == pytest.approx(base, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.permutations(range(7)))
def test_all_representations_share_canonical_form(perm):
    canon = canonicalize_tour(perm)
    assert canon.order[0] == 0 and canon.order[1] < canon.order[-1]
    assert canonicalize_tour(canon) == canon
    for rot in range(7):
        for flip in (False, True):
            assert canonicalize_tour(augment_tour(perm, rot, flip)) == canon


@given(st.floats(0.1, 100), st.floats(0, 10), st.floats(0, 10))
def test_gap_monotone(ref, a, b):
    lo, hi = sorted((a, b))
    assert optimality_gap(ref, ref) == 0.0
    assert optimality_gap(ref + lo, ref) <= optimality_gap(ref + hi, ref)


def test_format_example_line():
    inst = Instance([(0.25, 0.5), (0.75, 0.5), (0.5, 0.9)])
    rec = DatasetRecord(inst, Tour([0, 1, 2]), tour_length(inst, [0, 1, 2]))
    assert format_record(rec) == "0.25 0.5 0.75 0.5 0.5 0.9 output 1 2 3 1"
    assert format_tour_suffix(Tour([2, 0, 1])) == "output 3 1 2 3"


def test_parse_rejects_duplicate_node():
    with pytest.raises(InvalidTourError):
        parse_line("0.25 0.5 0.75 0.5 0.5 0.9 output 1 2 2 1")


@pytest.mark.parametrize(
    "line",
    [
        "0.1 0.2 0.3",
        "0.1 0.2 0.3 0.4 0.5 abc output 1 2 3 1",
        "0.1 0.2 0.3 0.4 0.5 0.6 output 1 2 3 2",
        "0.1 0.2 0.3 0.4 0.5 0.6 output 1 2",
    ],
)
def test_parse_malformed(line):
    with pytest.raises((DatasetParseError, InvalidTourError)):
        parse_line(line, line_no=3)


def test_parse_error_reports_line_number(tmp_path):
    path = tmp_path / "d.txt"
    path.write_text("0.1 0.2 0.3 0.4 0.5 0.6 output 1 2 3 1\nnonsense here\n")
    with pytest.raises(DatasetParseError) as info:
        read_dataset(path)
    assert info.value.line_no == 2
    assert "2" in str(info.value)


def test_strict_parse_rejects_out_of_square():
    line = "1.5 0.2 0.3 0.4 0.5 0.6 output 1 2 3 1"
    assert parse_line(line).instance.n == 3
    with pytest.raises(DatasetParseError):
        parse_line(line, strict=True)


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    records = []
    for k in range(50):
        inst = gen_instance(int(rng.integers(3, 15)), k)
        tour = Tour(rng.permutation(inst.n).tolist())
        records.append(DatasetRecord(inst, tour, tour_length(inst, tour)))
    path = tmp_path / "data.txt"
    write_dataset(path, records)
    back = read_dataset(path)
    assert len(back) == 50
    for a, b in zip(records, back):
        assert np.array_equal(a.instance.points, b.instance.points)
        assert a.optimal_tour == b.optimal_tour
        assert a.optimal_length == b.optimal_length
    assert path.read_bytes().endswith(b"\n") and b"\r" not in path.read_bytes()


def test_unlabeled_records(tmp_path):
    path = tmp_path / "u.txt"
    write_dataset(path, [DatasetRecord(gen_instance(4, 0))])
    (rec,) = read_dataset(path, require_tours=False)
    assert not rec.labeled
    with pytest.raises(DatasetParseError):
        read_dataset(path)


def test_record_rejects_inconsistent_length(square):
    with pytest.raises(ValueError):
        DatasetRecord(square, Tour([0, 1, 2, 3]), 4.1)

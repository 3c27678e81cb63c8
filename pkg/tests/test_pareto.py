import math
import random

import pytest
from hypothesis import given, strategies as st

from nas_forge.pareto import InsertStatus, ParetoArchive, ParetoPoint, brute_force_front, dominates, pareto_insert

from oracles import pairwise_front


def test_incumbent_removed():
    a = ParetoArchive([ParetoPoint(4, 12)])
    a, status = pareto_insert(a, ParetoPoint(5, 10))
    assert status is InsertStatus.KEPT and a.objective_set() == {(5, 10)}


def test_dominated_rejected():
    a = ParetoArchive([ParetoPoint(4, 10)])
    assert a.insert(ParetoPoint(3, 11)) is InsertStatus.DOMINATED
    assert a.objective_set() == {(4, 10)}


def test_ties_kept_once_first_wins():
    a = ParetoArchive()
    assert a.insert(ParetoPoint(1, 1, "first")) is InsertStatus.KEPT
    assert a.insert(ParetoPoint(1, 1, "second")) is InsertStatus.DOMINATED
    assert [p.payload for p in a] == ["first"]


def test_equal_on_one_axis_is_dominance():
    a = ParetoArchive([ParetoPoint(3, 10)])
    assert a.insert(ParetoPoint(3, 9)) is InsertStatus.KEPT
    assert a.objective_set() == {(3, 9)}
    assert a.insert(ParetoPoint(2, 9)) is InsertStatus.DOMINATED


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        ParetoArchive().insert(ParetoPoint(math.inf, 1))


def test_front_sorted_by_latency():
    a = ParetoArchive([ParetoPoint(3, 30), ParetoPoint(1, 10), ParetoPoint(2, 20)])
    assert [p.latency_us for p in a.front()] == [10, 20, 30]


coords = st.floats(0, 100, allow_nan=False) | st.integers(0, 5).map(float)


@given(st.lists(st.tuples(coords, coords), max_size=60))
def test_archive_matches_pairwise_oracle(pts):
    a = ParetoArchive()
    for i, (q, lat) in enumerate(pts):
        a.insert(ParetoPoint(q, lat, i))
        members = a.points
        assert not any(dominates(x, y) for x in members for y in members)
    assert a.objective_set() == pairwise_front(pts)
    assert {p.objectives for p in brute_force_front(ParetoPoint(q, l) for q, l in pts)} == pairwise_front(pts)


def test_first_duplicate_payload_survives():
    rng = random.Random(5)
    pts = [(float(rng.randint(0, 4)), float(rng.randint(0, 4))) for _ in range(200)]
    a = ParetoArchive(ParetoPoint(q, l, i) for i, (q, l) in enumerate(pts))
    for p in a:
        assert p.payload == pts.index(p.objectives)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meet_replay.sum_tree import EmptyTreeError, SumTree

from .conftest import linear_scan


def filled(values):
    tree = SumTree(len(values))
    for i, v in enumerate(values):
        tree.set(i, v)
    return tree


def test_new_tree_is_empty():
    assert SumTree(4).total() == 0.0


@pytest.mark.parametrize("capacity", [0, -3, 2.5])
def test_bad_capacity(capacity):
    with pytest.raises(ValueError):
        SumTree(capacity)


def test_single_leaf():
    tree = SumTree(1)
    tree.set(0, 5.0)
    assert tree.total() == 5.0
    assert tree.sample_prefix(4.9) == 0


def test_total_and_update():
    tree = filled([1, 2, 3, 4])
    assert tree.total() == sum([1, 2, 3, 4])
    tree.set(0, 11.0)
    assert tree.total() == 11 + 2 + 3 + 4
    assert tree.get(0) == 11.0


@pytest.mark.parametrize("bad", [-1.0, math.nan, math.inf])
def test_set_rejects_bad_priority(bad):
    with pytest.raises(ValueError):
        SumTree(4).set(0, bad)


def test_set_rejects_bad_index():
    with pytest.raises(IndexError):
        SumTree(4).set(4, 1.0)
    with pytest.raises(IndexError):
        SumTree(3).set(3, 1.0)  # padded leaf 3 exists internally but is not a slot


@pytest.mark.parametrize("u,expected", [(0.5, 0), (9.999, 3), (1.0, 1), (3.0, 2), (6.0, 3)])
def test_sample_prefix_examples(u, expected):
    tree = filled([1, 2, 3, 4])
    assert tree.sample_prefix(u) == expected == linear_scan([1, 2, 3, 4], u)


def test_single_nonzero_leaf_always_chosen():
    tree = filled([0, 0, 7, 0])
    for u in np.linspace(0, 7, 50, endpoint=False):
        assert tree.sample_prefix(u) == 2
    assert set(tree.sample_prefix_many(np.linspace(0, 7, 50, endpoint=False))) == {2}


def test_sample_prefix_errors():
    with pytest.raises(EmptyTreeError):
        SumTree(4).sample_prefix(0.0)
    tree = filled([1, 2, 3, 4])
    with pytest.raises(ValueError):
        tree.sample_prefix(10.0)
    with pytest.raises(ValueError):
        tree.sample_prefix(-0.1)


def test_zero_leaf_never_sampled(rng):
    tree = filled([1.0, 2.0, 0.0, 4.0])
    draws = tree.sample_prefix_many(rng.random(100_000) * tree.total())
    assert not np.any(draws == 2)


def test_proportional_frequencies(rng):
    tree = filled([1, 2, 3, 4])
    draws = tree.sample_prefix_many(rng.random(100_000) * tree.total())
    freq = np.bincount(draws, minlength=4) / draws.size
    np.testing.assert_allclose(freq, [0.1, 0.2, 0.3, 0.4], atol=0.01)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=64).filter(lambda v: sum(v) > 0),
    st.floats(0, 1, exclude_max=True),
)
def test_matches_linear_scan(leaves, frac):
    tree = filled(leaves)
    u = frac * tree.total()
    expected = linear_scan(leaves, u) if u < sum(leaves) else None
    if expected is None:  # u sits within rounding of the total; only the tree's own sums apply
        return
    assert tree.sample_prefix(u) == expected
    assert tree.sample_prefix_many([u])[0] == expected


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 19), st.floats(0, 1e3, allow_nan=False)), min_size=1, max_size=200))
def test_internal_nodes_are_child_sums(updates):
    tree = SumTree(20)
    for idx, p in updates:
        tree.set(idx, p)
    nodes, n = tree._nodes, tree._leaves
    for node in range(1, n):
        assert nodes[node] == pytest.approx(nodes[2 * node] + nodes[2 * node + 1], rel=1e-9, abs=1e-12)
    assert tree.total() == pytest.approx(tree.leaves().sum(), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("capacity", [1, 2, 3, 5, 64, 100, 1000])
def test_update_cost_is_logarithmic(capacity):
    tree = SumTree(capacity)
    tree.set(capacity - 1, 1.0)
    assert tree.last_write_count <= math.ceil(math.log2(capacity)) + 1


def test_set_many_matches_set(rng):
    a, b = SumTree(37), SumTree(37)
    idx = rng.integers(0, 37, size=200)
    vals = rng.random(200)
    for i, v in zip(idx, vals):
        a.set(int(i), float(v))
    b.set_many(idx, vals)
    np.testing.assert_array_equal(a.leaves(), b.leaves())
    assert a.total() == pytest.approx(b.total(), rel=1e-12)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalgcn.graph import (
    ROOT,
    CycleError,
    HeadRangeError,
    RootError,
    build_adjacency,
    tree_distances,
    validate_tree,
)


@st.composite
def random_heads(draw, max_n=12):
    """Random tree: attach each token to an earlier one in a shuffled order."""
    n = draw(st.integers(1, max_n))
    order = draw(st.permutations(range(n)))
    heads = [ROOT] * n
    for k in range(1, n):
        heads[order[k]] = order[draw(st.integers(0, k - 1))]
    return heads


def test_singleton():
    assert validate_tree([ROOT]).n == 1


def test_three_token_tree():
    assert validate_tree([1, ROOT, 1]).n == 3


def test_two_cycle():
    with pytest.raises(CycleError):
        validate_tree([1, 0])


def test_self_loop():
    with pytest.raises(CycleError):
        validate_tree([0, ROOT])


def test_multiple_roots():
    with pytest.raises(RootError):
        validate_tree([ROOT, ROOT])


def test_out_of_range():
    with pytest.raises(HeadRangeError):
        validate_tree([ROOT, 5])


def test_cycle_hidden_behind_root():
    with pytest.raises(CycleError):
        validate_tree([ROOT, 2, 3, 1])


def test_path_adjacency():
    adj = build_adjacency(validate_tree([1, ROOT, 1]))
    np.testing.assert_array_equal(adj.a_tilde, [[1, 1, 0], [1, 1, 1], [0, 1, 1]])
    np.testing.assert_array_equal(adj.degrees, [2, 3, 2])


def test_singleton_adjacency():
    adj = build_adjacency(validate_tree([ROOT]))
    np.testing.assert_array_equal(adj.a_tilde, [[1]])
    np.testing.assert_array_equal(adj.degrees, [1])


def test_star_degrees():
    adj = build_adjacency(validate_tree([ROOT, 0, 0, 0]))
    np.testing.assert_array_equal(adj.degrees, [4, 2, 2, 2])


@settings(max_examples=200, deadline=None)
@given(random_heads())
def test_adjacency_invariants(heads):
    tree = validate_tree(heads)
    adj = build_adjacency(tree)
    a = adj.a_tilde
    n = tree.n
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 1)
    assert adj.degrees.sum() == 3 * n - 2
    assert np.all(adj.degrees >= 1)
    assert np.array_equal(adj.degrees, a.sum(axis=1))
    assert np.all(tree_distances(tree) >= 0)  # connected


@settings(max_examples=100, deadline=None)
@given(random_heads(), st.randoms(use_true_random=False))
def test_permutation_equivariance(heads, rnd):
    n = len(heads)
    perm = list(range(n))
    rnd.shuffle(perm)  # old index i -> new index perm[i]
    new_heads = [ROOT] * n
    for i, h in enumerate(heads):
        new_heads[perm[i]] = ROOT if h == ROOT else perm[h]
    a = build_adjacency(validate_tree(heads)).a_tilde
    b = build_adjacency(validate_tree(new_heads)).a_tilde
    p = np.zeros((n, n))
    p[perm, range(n)] = 1
    np.testing.assert_array_equal(p @ a @ p.T, b)


def test_deterministic():
    a = build_adjacency(validate_tree([2, 2, ROOT, 2]))
    b = build_adjacency(validate_tree([2, 2, ROOT, 2]))
    assert a.a_tilde.tobytes() == b.a_tilde.tobytes()

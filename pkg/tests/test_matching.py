"""Hungarian solver against exhaustive enumeration."""

import itertools

import numpy as np
import pytest

from ovdet.errors import ConfigError
from ovdet.matching import assignment_cost, hungarian

_PERM_CACHE = {}


def brute_force_optimum(cost: np.ndarray) -> tuple[float, np.ndarray]:
    """Enumerate every injective row->column map; return (min cost, argmin).

    Argmin ties resolve to the lexicographically smallest assignment vector,
    matching the documented solver contract.
    """
    n, m = cost.shape
    key = (n, m)
    if key not in _PERM_CACHE:
        perms = np.array(list(itertools.permutations(range(m), n)), dtype=np.int64)
        _PERM_CACHE[key] = perms
    perms = _PERM_CACHE[key]
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    best = totals.min()
    # itertools.permutations emits in lexicographic order, so the first hit wins
    idx = int(np.argmax(totals == best))
    return float(best), perms[idx]


def test_two_by_two_hand_case():
    assign = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert assign.tolist() == [0, 1]
    assert assignment_cost(np.array([[1.0, 2.0], [2.0, 1.0]]), assign) == 2.0


def test_diagonal_preference():
    cost = np.full((4, 4), 5.0)
    np.fill_diagonal(cost, 1.0)
    assert hungarian(cost).tolist() == [0, 1, 2, 3]


def test_rejects_more_rows_than_columns():
    with pytest.raises(ConfigError):
        hungarian(np.zeros((3, 2)))


def test_rejects_non_finite():
    with pytest.raises(ConfigError):
        hungarian(np.array([[1.0, np.inf]]))


def test_empty_is_empty():
    assert hungarian(np.zeros((0, 4))).size == 0


def test_matches_brute_force_on_random_matrices():
    rng = np.random.default_rng(42)
    for _ in range(300):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(n, 10))
        cost = rng.normal(size=(n, m))
        assign = hungarian(cost)
        best, _ = brute_force_optimum(cost)
        assert len(set(assign.tolist())) == n  # injective
        assert assignment_cost(cost, assign) == pytest.approx(best, abs=1e-9)


def test_lexicographic_tie_breaking_exact():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 5))
        m = int(rng.integers(n, 7))
        # small integer costs force plenty of ties
        cost = rng.integers(0, 3, size=(n, m)).astype(np.float64)
        assign = hungarian(cost)
        best, lex = brute_force_optimum(cost)
        assert assignment_cost(cost, assign) == best
        assert assign.tolist() == lex.tolist()


def test_beats_random_injective_assignments():
    rng = np.random.default_rng(3)
    cost = rng.normal(size=(5, 8))
    opt = assignment_cost(cost, hungarian(cost))
    cols = np.arange(8)
    for _ in range(100):
        rng.shuffle(cols)
        assert opt <= assignment_cost(cost, cols[:5]) + 1e-12


def test_scaling_invariance_of_argmin():
    rng = np.random.default_rng(11)
    cost = rng.normal(size=(4, 6)) + 2.0
    base = hungarian(cost)
    for c in (0.1, 3.0, 250.0):
        assert np.array_equal(hungarian(cost * c), base)


def test_deterministic_across_calls():
    rng = np.random.default_rng(5)
    cost = rng.integers(0, 2, size=(5, 6)).astype(np.float64)
    first = hungarian(cost)
    for _ in range(5):
        assert np.array_equal(hungarian(cost), first)

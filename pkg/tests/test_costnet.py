import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from halp import costnet


def random_factors(rng, n_vars, n_factors, max_arity=3):
    sizes = tuple(int(s) for s in rng.integers(1, 4, n_vars))
    factors = []
    for _ in range(n_factors):
        arity = int(rng.integers(0, max_arity + 1))
        scope = tuple(sorted(rng.choice(n_vars, size=min(arity, n_vars), replace=False).tolist()))
        table = rng.normal(size=tuple(sizes[u] for u in scope))
        factors.append((scope, table))
    return factors, sizes


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 6), st.integers(1, 7))
def test_max_sum_equals_dense_maximum(seed, n_vars, n_factors):
    factors, sizes = random_factors(np.random.default_rng(seed), n_vars, n_factors)
    dense = costnet.dense_table(factors, sizes)
    value, z = costnet.max_sum(factors, sizes)
    assert value == np.float64(value)
    assert abs(value - dense.max()) <= 1e-9
    assert abs(costnet.evaluate(factors, z) - dense.max()) <= 1e-9


def test_ties_pick_lowest_indices():
    factors = [((0,), np.zeros(3)), ((1,), np.array([1.0, 1.0]))]
    assert costnet.max_sum(factors, (3, 2)) == (1.0, (0, 0))


def test_unused_axes_stay_at_zero():
    value, z = costnet.max_sum([((1,), np.array([0.0, 2.0, 1.0]))], (4, 3, 5))
    assert value == 2.0 and z == (0, 1, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_coordinate_ascent_is_a_local_maximum(seed):
    rng = np.random.default_rng(seed)
    factors, sizes = random_factors(rng, 5, 6)
    start = [int(rng.integers(s)) for s in sizes]
    value, z = costnet.coordinate_ascent(factors, sizes, start)
    dense = costnet.dense_table(factors, sizes)
    assert value == dense[z] or abs(value - dense[z]) < 1e-9
    assert value <= dense.max() + 1e-9
    for axis in range(len(sizes)):
        line = list(z)
        for j in range(sizes[axis]):
            line[axis] = j
            assert dense[tuple(line)] <= value + 1e-9


def test_merge_folds_subscopes():
    merged = costnet.merge([((0,), np.array([1.0, 2.0])), ((0, 1), np.zeros((2, 2))), ((0, 1), np.ones((2, 2)))],
                           (2, 2))
    assert len(merged) == 1
    np.testing.assert_allclose(merged[0][1], [[2.0, 2.0], [3.0, 3.0]])

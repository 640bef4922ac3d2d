import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halp.errors import BudgetExceededError, MisuseError, SolverError
from halp.lp import (ArrayOracle, ConstraintOracle, LinearProgram, LPStatus, coordinate_search,
                     solve_lp, solve_with_generation, write_lp_text)


def vertex_enumeration(c, A, b, lo, hi):
    """Brute-force LP oracle: best feasible vertex over all active-set choices."""
    k = len(c)
    rows = [(a, bb) for a, bb in zip(A, b)]
    for i in range(k):
        e = np.zeros(k)
        e[i] = 1.0
        rows.append((e, lo[i]))
        rows.append((-e, -hi[i]))
    best = None
    for subset in itertools.combinations(range(len(rows)), k):
        M = np.array([rows[j][0] for j in subset])
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        w = np.linalg.solve(M, np.array([rows[j][1] for j in subset]))
        if np.all(A @ w >= b - 1e-7) and np.all(w >= lo - 1e-7) and np.all(w <= hi + 1e-7):
            val = float(c @ w)
            best = val if best is None else min(best, val)
    return best


def test_small_lp_known_optimum():
    # minimize w0 + w1 with w0 + 2 w1 >= 2 and 3 w0 + w1 >= 3
    lp = LinearProgram([1.0, 1.0], [-10, -10], [10, 10], [[1, 2], [3, 1]], [2, 3])
    res = solve_lp(lp)
    assert res.status == LPStatus.OPTIMAL
    np.testing.assert_allclose(res.w, [0.8, 0.6], atol=1e-9)
    assert res.objective == pytest.approx(1.4)


def test_infeasible_and_unbounded_status():
    infeasible = LinearProgram([1.0], [-1], [1], [[1.0]], [5.0])
    assert solve_lp(infeasible).status == LPStatus.INFEASIBLE
    unbounded = LinearProgram([1.0], [-np.inf], [np.inf], [[1.0], [-1.0]], [-np.inf, -np.inf])
    unbounded.rows, unbounded.rhs = [], []
    assert solve_lp(unbounded).status == LPStatus.UNBOUNDED


def test_constraint_shape_is_checked():
    lp = LinearProgram([1.0, 2.0], -1, 1)
    with pytest.raises(MisuseError):
        lp.add_constraint([1.0], 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_solver_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    k, m = int(rng.integers(1, 4)), int(rng.integers(1, 6))
    c = rng.normal(size=k)
    A = rng.normal(size=(m, k))
    b = rng.normal(size=m)
    lo, hi = -np.full(k, 3.0), np.full(k, 3.0)
    want = vertex_enumeration(c, A, b, lo, hi)
    res = solve_lp(LinearProgram(c, lo, hi, list(A), list(b)))
    if want is None:
        assert res.status == LPStatus.INFEASIBLE
    else:
        assert res.status == LPStatus.OPTIMAL
        assert res.objective == pytest.approx(want, abs=1e-7)


def test_lp_text_dump_lists_every_part():
    lp = LinearProgram([1.0, -2.0], [-1, 0], [1, np.inf], [[1, 1]], [0.5])
    buf = io.StringIO()
    write_lp_text(lp, buf, ["a", "b"])
    text = buf.getvalue()
    assert "Minimize" in text and "Subject To" in text and "Bounds" in text and text.endswith("End\n")
    assert " c0: +1 a +1 b >= 0.5" in text
    assert "0 <= b <= +inf" in text


# ---------------------------------------------------------------------------
# constraint generation


def random_family(seed, shape=(4, 5, 3), k=3):
    rng = np.random.default_rng(seed)
    rows = rng.normal(size=shape + (k,))
    rows[..., 0] = 1.0  # a constant column keeps the LP feasible
    rhs = rng.normal(size=shape)
    return ArrayOracle(rows, rhs), rng.uniform(0.1, 1.0, size=k)


def dense_objective(oracle, c, bound):
    lp = LinearProgram(c, -bound, bound, list(oracle.rows.reshape(-1, oracle.dim)), list(oracle.rhs.ravel()))
    return solve_lp(lp).objective


@pytest.mark.parametrize("seed", range(5))
def test_generation_reproduces_dense_lp(seed):
    oracle, c = random_family(seed)
    res = solve_with_generation(c, oracle, "exhaustive", lower=-50, upper=50, seed_points=4)
    assert res.objective == pytest.approx(dense_objective(oracle, c, 50), abs=1e-6)
    assert res.max_violation <= 1e-6
    assert res.verified


@pytest.mark.parametrize("seed", range(3))
def test_greedy_with_verification_is_exact(seed):
    oracle, c = random_family(seed)
    res = solve_with_generation(c, oracle, "greedy_coordinate", lower=-50, upper=50, verify=True)
    assert res.verified
    assert res.objective == pytest.approx(dense_objective(oracle, c, 50), abs=1e-6)


def test_greedy_never_beats_the_dense_optimum():
    oracle, c = random_family(11)
    res = solve_with_generation(c, oracle, "greedy_coordinate", lower=-50, upper=50)
    assert res.objective <= dense_objective(oracle, c, 50) + 1e-6


def test_generic_oracle_search_matches_array_oracle():
    oracle, _ = random_family(3)

    class Slow(ConstraintOracle):
        axis_sizes = oracle.axis_sizes
        dim = oracle.dim

        def row(self, z):
            return oracle.row(z)

    w = np.array([0.3, -0.2, 0.5])
    assert Slow().most_violated(w) == oracle.most_violated(w)
    z, v = coordinate_search(Slow(), w, np.random.default_rng(0))
    assert v <= oracle.most_violated(w)[1] + 1e-12


def test_budget_exceeded_carries_partial_result():
    oracle, c = random_family(2)
    with pytest.raises(BudgetExceededError) as info:
        solve_with_generation(c, oracle, "exhaustive", lower=-50, upper=50, seed_points=1, max_iter=1)
    partial = info.value.partial
    assert partial is not None and partial.iterations == 1 and partial.max_violation > 1e-6


def test_generation_rejects_bad_arguments():
    oracle, c = random_family(0)
    with pytest.raises(MisuseError):
        solve_with_generation(c, oracle, "simplex")
    with pytest.raises(MisuseError):
        solve_with_generation(c[:2], oracle)
    with pytest.raises(MisuseError):
        solve_with_generation(c, oracle, tol=0.0)


def test_generation_reports_an_infeasible_relaxation():
    # every row demands w >= 5 but the box stops at 1
    oracle = ArrayOracle(np.ones((3, 1)), np.full(3, 5.0))
    with pytest.raises(SolverError, match="infeasible"):
        solve_with_generation([1.0], oracle, lower=-1, upper=1)


def test_warm_started_solves_track_a_fresh_solve():
    oracle, c = random_family(4, shape=(6, 6, 4), k=4)
    res = solve_with_generation(c, oracle, "exhaustive", lower=-50, upper=50, seed_points=2)
    fresh = solve_lp(res.lp)
    assert res.iterations > 3
    assert res.objective == pytest.approx(fresh.objective, abs=1e-9)

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halp.basis import BasisFunction, DiscreteFactor, constraint_function
from halp.errors import BudgetExceededError, MisuseError, ValidationError
from halp.expr import linear
from halp.halp import (EpsGrid, GridProbe, SampleProbe, build_halp, constraint_lipschitz, grid_count,
                       measure_infeasibility, resolution_for_delta, solve_halp)
from halp.irrigation import BenchmarkSpec, generate
from halp.lp import LinearProgram, solve_lp
from halp.model import (DiscriminantCPF, HybridModel, ScopedFunction, VariableSpec, reward_values,
                        transition_density)

from conftest import hybrid_model, poly_basis, toy_model, two_var_model


# ---------------------------------------------------------------------------
# grid


@pytest.mark.parametrize("eps,count", [(1.0, 2), (0.5, 2), (0.25, 3), (0.125, 5), (0.1, 6), (0.3, 3),
                                       (1 / 16, 9), (1 / 40, 21)])
def test_grid_counts(eps, count):
    assert grid_count(eps) == count


@pytest.mark.parametrize("eps", [0.0, -0.1, 1.5, float("nan")])
def test_grid_rejects_bad_eps(eps):
    with pytest.raises(MisuseError):
        grid_count(eps)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.0, 1.0))
def test_every_point_is_within_eps_of_the_grid(eps, x):
    grid = EpsGrid.for_model(toy_model(), eps, ["x"])
    assert np.min(np.abs(np.asarray(grid.values[0]) - x)) <= eps + 1e-12


def test_grid_spans_discrete_domains():
    grid = EpsGrid.for_model(hybrid_model(), 0.5)
    assert grid.names == ("x", "d", "a")
    assert grid.values[1] == (0.0, 1.0, 2.0) and grid.values[2] == (0.0, 1.0)


# ---------------------------------------------------------------------------
# program construction


def test_uniform_relevance_weights():
    program = build_halp(toy_model(), poly_basis("x", 3), eps=0.25)
    np.testing.assert_allclose(program.alphas, [1.0, 1 / 2, 1 / 3, 1 / 4], atol=1e-12)


def test_constant_basis_alone_has_unit_weight():
    program = build_halp(hybrid_model(), [BasisFunction.constant()])
    np.testing.assert_allclose(program.alphas, [1.0])


def two_channel_benchmark(tmp_path):
    topo = {"channels": ["p", "q"],
            "devices": [{"name": "u", "incoming": ["p"], "outgoing": ["q"]},
                        {"name": "v", "incoming": ["q"], "outgoing": ["p"]}],
            "inputs": ["p"], "outputs": ["q"]}
    path = tmp_path / "topo.json"
    path.write_text(json.dumps(topo))
    return generate(BenchmarkSpec(topology="custom", custom=str(path)))


def test_cached_tables_match_direct_evaluation(tmp_path):
    bench = two_channel_benchmark(tmp_path)
    program = build_halp(bench.model, bench.basis, eps=0.125)
    oracle = program.oracle
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = tuple(int(rng.integers(s)) for s in oracle.axis_sizes)
        point = program.grid.point(z)
        coeffs, rhs = oracle.row(z)
        direct = np.array([float(c.evaluate(point)) for c in program.constraints])
        np.testing.assert_allclose(coeffs, direct, rtol=0, atol=1e-12)
        assert rhs == pytest.approx(float(reward_values(bench.model, point)), abs=1e-12)


def test_tables_follow_grid_order_when_scope_is_listed_differently():
    # the second reward is tabulated on ("a", "y") while the grid orders y before a
    model = two_var_model()
    program = build_halp(model, poly_basis("y", 2), eps=0.25)
    for z in itertools.product(*(range(s) for s in program.oracle.axis_sizes)):
        point = program.grid.point(z)
        coeffs, rhs = program.oracle.row(z)
        assert rhs == pytest.approx(float(reward_values(model, point)), abs=1e-12)
        np.testing.assert_allclose(coeffs, [float(c.evaluate(point)) for c in program.constraints], atol=1e-12)


def test_invalid_inputs_raise_validation_error():
    model = toy_model()
    with pytest.raises(ValidationError):
        build_halp(model, [BasisFunction.monomial({"nope": 1})])
    bad = HybridModel(model.state_vars, model.action_vars, model.cpfs, model.rewards, 1.0)
    with pytest.raises(ValidationError):
        build_halp(bad, [BasisFunction.constant()])


# ---------------------------------------------------------------------------
# solving


def discrete_model():
    """Two discrete state variables and one binary action."""
    d_cpf = DiscriminantCPF("d", (
        ScopedFunction.tabular(("a",), (2,), [1.0, 0.2]),
        ScopedFunction.tabular(("d",), (3,), [0.5, 2.0, 1.0]),
        ScopedFunction.tabular(("a", "e"), (2, 2), [0.1, 0.4, 3.0, 1.5]),
    ))
    e_cpf = DiscriminantCPF("e", (ScopedFunction.tabular(("d",), (3,), [2.0, 1.0, 0.5]), ScopedFunction.const(1.0)))
    reward = ScopedFunction.tabular(("d", "a"), (3, 2), [0.0, -0.2, 0.5, 0.3, 1.0, 0.8])
    return HybridModel((VariableSpec.discrete("d", 3), VariableSpec.discrete("e", 2)),
                       (VariableSpec.discrete("a", 2),), (d_cpf, e_cpf), (reward,), 0.9)


def discrete_basis():
    return [BasisFunction.constant(), BasisFunction.indicator("d", 1, 3), BasisFunction.indicator("d", 2, 3),
            BasisFunction(discrete=DiscreteFactor(("e",), (2,), (0.0, 1.0)))]


def test_discrete_model_matches_enumerated_alp():
    model, basis = discrete_model(), discrete_basis()
    program = build_halp(model, basis, eps=0.5)
    sol = solve_halp(program)
    # enumerate the exact ALP: every state-action pair, transitions summed by hand
    states = list(itertools.product(range(3), range(2)))
    rows, rhs = [], []
    for (d, e), a in itertools.product(states, range(2)):
        x = {"d": d, "e": e}
        row = []
        for f in basis:
            expect = sum(transition_density(model, {"d": d2, "e": e2}, x, {"a": a}) * float(f.evaluate({"d": d2, "e": e2}))
                         for d2, e2 in states)
            row.append(float(f.evaluate(x)) - model.discount * expect)
        rows.append(row)
        rhs.append(float(reward_values(model, {**x, "a": a})))
    c = np.array([np.mean([float(f.evaluate({"d": d, "e": e})) for d, e in states]) for f in basis])
    dense = solve_lp(LinearProgram(c, -program.weight_bound, program.weight_bound, rows, rhs))
    assert sol.objective == pytest.approx(dense.objective, abs=1e-7)
    np.testing.assert_allclose(program.alphas, c, atol=1e-12)


def test_exhaustive_delta_is_within_tolerance():
    sol = solve_halp(build_halp(two_var_model(), poly_basis("x", 2) + [BasisFunction.monomial({"y": 1})], eps=0.125),
                     tol=1e-6)
    assert sol.delta_kind == "grid"
    assert sol.measured_delta <= 1e-6
    assert sol.diagnostics["grid_points_per_axis"] == 5


def test_objective_grows_as_grid_refines():
    model, basis = toy_model(), poly_basis("x", 3)
    objectives = [solve_halp(build_halp(model, basis, eps=e)).objective for e in (0.5, 0.25, 0.125, 0.0625)]
    assert all(b >= a - 1e-8 for a, b in zip(objectives, objectives[1:]))


def test_greedy_search_is_a_relaxation_of_exhaustive():
    program = build_halp(two_var_model(), poly_basis("x", 2) + poly_basis("y", 2)[1:], eps=0.125)
    exact = solve_halp(program)
    greedy = solve_halp(program, search="greedy", sample_points=5000)
    assert greedy.objective <= exact.objective + 1e-7
    assert greedy.delta_kind in ("sampled_estimate", "grid")
    verified = solve_halp(program, search="greedy", verify=True)
    assert verified.delta_kind == "grid"
    assert verified.objective == pytest.approx(exact.objective, abs=1e-7)


def test_unknown_search_mode_is_misuse():
    with pytest.raises(MisuseError):
        solve_halp(build_halp(toy_model(), poly_basis()), search="simplex")


def test_iteration_budget_returns_partial_solution():
    program = build_halp(two_var_model(), poly_basis("x", 3) + poly_basis("y", 3)[1:], eps=0.0625)
    with pytest.raises(BudgetExceededError) as info:
        solve_halp(program, max_iter=1)
    partial = info.value.partial
    assert partial.delta_kind == "partial" and partial.w.shape == (7,)


# ---------------------------------------------------------------------------
# infeasibility and resolution


def test_zero_weights_violate_by_the_largest_reward():
    model, basis = toy_model(), poly_basis("x", 2)
    assert measure_infeasibility(model, basis, np.zeros(3), GridProbe(0.25)) == pytest.approx(1.0)


def test_constant_value_bound_is_feasible():
    model = toy_model(discount=0.9)
    w = np.array([1.0 / (1.0 - 0.9), 0.0])
    basis = poly_basis("x", 1)
    assert measure_infeasibility(model, basis, w, GridProbe(0.05)) == 0.0
    assert measure_infeasibility(model, basis, w, SampleProbe(1000, seed=1)) == 0.0


def test_probe_rejects_wrong_weight_count():
    with pytest.raises(MisuseError):
        measure_infeasibility(toy_model(), poly_basis("x", 2), np.zeros(2), GridProbe(0.25))


def test_sample_probe_never_exceeds_fine_grid_by_much():
    model, basis = toy_model(), poly_basis("x", 3)
    sol = solve_halp(build_halp(model, basis, eps=0.25))
    fine = measure_infeasibility(model, basis, sol.w, GridProbe(1e-3))
    sampled = measure_infeasibility(model, basis, sol.w, SampleProbe(20_000, seed=3))
    assert sampled <= fine + 1e-3


def test_resolution_for_reward_only_bound():
    # R = x has Lipschitz constant 1, the constant basis has 0; two functions share delta
    model = toy_model(discount=0.9)
    assert resolution_for_delta(model, [BasisFunction.constant()], 0.1, w_bound=10.0) == pytest.approx(0.05)
    with pytest.raises(MisuseError):
        resolution_for_delta(model, [BasisFunction.constant()], 0.0)


def test_resolution_is_capped_at_one():
    model = HybridModel((VariableSpec.discrete("d", 2),), (), (DiscriminantCPF("d", (ScopedFunction.const(1.0),
                                                                                     ScopedFunction.const(1.0))),),
                        (ScopedFunction.const(1.0),), 0.5)
    assert resolution_for_delta(model, [BasisFunction.constant()], 0.01) == 1.0


@pytest.mark.parametrize("f", [BasisFunction.monomial({"x": 1}), BasisFunction.monomial({"x": 3}),
                               BasisFunction.piecewise("x", (0.0, 0.3, 1.0), (0.0, 1.0, 0.2))])
def test_constraint_lipschitz_bounds_finite_differences(f):
    model = toy_model()
    F = constraint_function(model, f)
    xs = np.linspace(0.0, 1.0, 4001)
    k = constraint_lipschitz(model, f)
    for a in (0, 1):
        vals = np.asarray(F.evaluate({"x": xs, "a": np.full_like(xs, a, dtype=int)}), dtype=float)
        assert np.abs(np.diff(vals)).max() / xs[1] <= k + 1e-9


def test_resolution_delivers_the_requested_accuracy():
    model, basis = toy_model(), poly_basis("x", 2)
    delta = 0.5
    eps = resolution_for_delta(model, basis, delta)
    sol = solve_halp(build_halp(model, basis, eps=eps))
    off_grid = measure_infeasibility(model, basis, sol.w, SampleProbe(20_000, seed=2))
    assert off_grid <= sol.measured_delta + delta


def test_lipschitz_accounts_for_state_dependent_parameters():
    model = toy_model()
    assert constraint_lipschitz(model, BasisFunction.monomial({"x": 1})) > 1.0
    flat = HybridModel(model.state_vars, model.action_vars,
                       (model.cpfs[0].__class__("x", ScopedFunction.const(2.0), ScopedFunction.const(2.0)),),
                       (ScopedFunction.of(linear("x")),), 0.9)
    assert constraint_lipschitz(flat, BasisFunction.monomial({"x": 1})) == pytest.approx(1.0)

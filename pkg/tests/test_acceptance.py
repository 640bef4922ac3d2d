"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines
are printed even when output capture is on.
"""
import contextlib
import io
import json
import time

import numpy as np
import pytest
from scipy import integrate, special, stats

from halp.basis import (BasisFunction, BetaMarginal, Categorical, DiscreteFactor, MonomialFactor,
                        PiecewiseLinearFactor, StateRelevanceDensity, Uniform, backproject,
                        constraint_function, relevance_weight)
from halp.cli import main, quadratic_fit
from halp.expr import linear
from halp.halp import EpsGrid, GridProbe, build_halp, measure_infeasibility, solve_halp
from halp.irrigation import BenchmarkSpec, generate
from halp.lp import LinearProgram, LPStatus, solve_lp
from halp.model import BetaCPF, HybridModel, ScopedFunction, VariableSpec, reward_values
from halp.policy import (GreedyPolicy, LocalController, RandomController, bellman_backup, bellman_infeasibility,
                         discrete_states, discretize, pooled_stderr, rollout, value_iteration)

from conftest import poly_basis, toy_model, two_var_model

RING_EPS = (0.5, 0.25, 0.125)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail, seconds, limit=None):
        in_time = limit is None or seconds < limit
        status = "PASS" if ok and in_time else "FAIL"
        budget = "" if limit is None else f", limit {limit:.0f}s"
        with capsys.disabled():
            print(f"\nCRITERION {k}: {status} {detail} [{seconds:.2f}s{budget}]")
        assert ok, detail
        assert in_time, f"criterion {k} took {seconds:.1f}s"
    return emit


def quad_moment(a, b, m):
    """E[X^m] for X ~ Beta(a, b) by adaptive quadrature."""
    if min(a, b) < 1.0:
        val, _ = integrate.quad(lambda x: x ** m, 0.0, 1.0, weight="alg", wvar=(a - 1.0, b - 1.0), limit=200)
        return val / special.beta(a, b)
    mode = (a - 1.0) / (a + b - 2.0) if a + b > 2.0 else 0.5
    val, _ = integrate.quad(lambda x: x ** m * stats.beta.pdf(x, a, b), 0.0, 1.0, points=[mode],
                            limit=200, epsabs=1e-12, epsrel=1e-12)
    return val


def test_criterion_1_closed_form_backprojection(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        s1, c1, s2, c2 = rng.uniform(-3, 3), rng.uniform(0.2, 15), rng.uniform(-3, 3), rng.uniform(0.2, 15)
        cpf = BetaCPF("y", ScopedFunction.of(linear("x", s1, c1)), ScopedFunction.of(linear("x", s2, c2)))
        model = HybridModel((VariableSpec.continuous("x"), VariableSpec.continuous("y")), (),
                            (BetaCPF("x", ScopedFunction.const(1.0), ScopedFunction.const(1.0)), cpf), (), 0.9)
        m = int(rng.integers(0, 5))
        x = float(rng.random())
        got = float(backproject(model, BasisFunction.monomial({"y": m})).evaluate({"x": x}))
        a, b = (float(v) for v in cpf.params({"x": np.array(x)}))
        worst = max(worst, abs(got - quad_moment(a, b, m)))
    report(1, worst <= 1e-6, f"max |closed form - quadrature| = {worst:.2e} over 100 cases (tol 1e-6)",
           time.perf_counter() - start, 10)


def random_pair(rng):
    """A random basis function over (x, y, d) and a random product density."""
    marginals = []
    for v in ("x", "y"):
        marginals.append((v, Uniform() if rng.random() < 0.3 else BetaMarginal(*rng.uniform(0.5, 6.0, 2))))
    marginals.append(("d", Categorical(tuple(rng.dirichlet(np.ones(3))))))
    psi = StateRelevanceDensity(tuple(marginals))
    discrete = DiscreteFactor(("d",), (3,), tuple(rng.normal(size=3))) if rng.random() < 0.6 else DiscreteFactor()
    if rng.random() < 0.5:
        degrees = tuple((v, int(rng.integers(1, 4))) for v in ("x", "y") if rng.random() < 0.7)
        cont = MonomialFactor(degrees)
    else:
        pieces = []
        for v in ("x", "y"):
            if rng.random() < 0.7:
                inner = np.sort(rng.uniform(0.05, 0.95, int(rng.integers(0, 3))))
                knots = (0.0, *inner.tolist(), 1.0)
                pieces.append((v, knots, tuple(rng.uniform(-2, 2, len(knots)).tolist())))
        cont = PiecewiseLinearFactor(tuple(pieces))
    return BasisFunction(discrete, cont), psi


def test_criterion_2_relevance_weights(report):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(50):
        f, psi = random_pair(rng)
        samples = psi.sample(np.random.default_rng(1000 + k), 1_000_000)
        vals = np.broadcast_to(f.evaluate(samples), (1_000_000,))
        se = vals.std(ddof=1) / 1000.0
        z = abs(relevance_weight(psi, f) - vals.mean()) / se if se > 0 else 0.0
        worst = max(worst, z)
    report(2, worst <= 3.0, f"max |factored - Monte Carlo| = {worst:.2f} SE over 50 pairs (tol 3 SE)",
           time.perf_counter() - start, 60)


def test_criterion_3_dense_lp_equivalence(report):
    start = time.perf_counter()
    model = two_var_model()
    basis = [BasisFunction.constant(), BasisFunction.monomial({"x": 1}), BasisFunction.monomial({"y": 1}),
             BasisFunction.monomial({"x": 1, "y": 1})]
    program = build_halp(model, basis, eps=0.25)
    sol = solve_halp(program)
    # enumerate every grid point with direct evaluation of each constraint function
    grid = EpsGrid.for_model(model, 0.25)
    rows, rhs = [], []
    for z in np.ndindex(*grid.sizes):
        point = grid.point(z)
        rows.append([float(constraint_function(model, f).evaluate(point)) for f in basis])
        rhs.append(float(reward_values(model, point)))
    dense = solve_lp(LinearProgram(program.alphas, -program.weight_bound, program.weight_bound, rows, rhs))
    gap = abs(sol.objective - dense.objective)
    ok = dense.status == LPStatus.OPTIMAL and gap <= 1e-6
    report(3, ok, f"generation {sol.objective:.9f} vs dense {dense.objective:.9f} over {len(rows)} rows "
                  f"(gap {gap:.1e}, tol 1e-6)", time.perf_counter() - start, 5)


def test_criterion_4_upper_bound(report):
    start = time.perf_counter()
    model = toy_model(discount=0.9)
    basis = poly_basis("x", 6)
    eps = 1 / 40
    sol = solve_halp(build_halp(model, basis, eps=eps))
    mdp = discretize(model, eps)
    V, _ = value_iteration(mdp, tol=1e-8)
    residual = float(np.abs(bellman_backup(mdp, V).max(axis=0) - V).max())
    states = discrete_states(mdp)
    Hw = sum(wi * np.broadcast_to(f.evaluate(states), V.shape) for wi, f in zip(sol.w, basis))
    # delta is the constraint violation of Hw against the same discretized dynamics
    delta = bellman_infeasibility(mdp, Hw)
    slack = float((Hw - (V - delta / (1 - model.discount))).min())
    ok = mdp.R.shape[1] == 21 and residual <= 1e-8 and slack >= 0
    report(4, ok, f"min_x Hw - (V* - delta/(1-gamma)) = {slack:.3e} over {mdp.R.shape[1]} states "
                  f"(delta {delta:.3e}, VI residual {residual:.1e})", time.perf_counter() - start, 30)


@pytest.fixture(scope="module")
def ring6():
    start = time.perf_counter()
    bench = generate(BenchmarkSpec(topology="ring", n=6))
    sols = {eps: solve_halp(build_halp(bench.model, bench.basis, eps=eps)) for eps in RING_EPS}
    return bench, sols, time.perf_counter() - start


def test_criterion_5_delta_monotonicity(report, ring6):
    bench, sols, solve_time = ring6
    start = time.perf_counter()
    own = [measure_infeasibility(bench.model, bench.basis, sols[e].w, GridProbe(e / 2)) for e in RING_EPS]
    common = [measure_infeasibility(bench.model, bench.basis, sols[e].w, GridProbe(1 / 16)) for e in RING_EPS]
    ok = all(b <= a for a, b in zip(own, own[1:])) and all(b <= a for a, b in zip(common, common[1:]))
    detail = ("delta on 2x finer grid " + ", ".join(f"eps={e:g}: {d:.4g}" for e, d in zip(RING_EPS, own))
              + "; on 1/16 grid " + ", ".join(f"{d:.4g}" for d in common))
    report(5, ok, detail, solve_time + time.perf_counter() - start, 600)


def test_criterion_6_policy_trends(report, ring6):
    bench, sols, solve_time = ring6
    start = time.perf_counter()
    model = bench.model
    run = {e: rollout(model, GreedyPolicy(model, bench.basis, sols[e].w, eps=e), 100, 100, seed=0) for e in RING_EPS}
    rand = rollout(model, RandomController(model), 100, 100, seed=0)
    local = rollout(model, LocalController(model), 100, 100, seed=0)
    beats = all(run[e].mean - rand.mean >= 2 * pooled_stderr(run[e], rand) for e in RING_EPS if e <= 0.25)
    trend = all(run[b].mean >= run[a].mean - 2 * pooled_stderr(run[a], run[b])
                for a, b in zip(RING_EPS, RING_EPS[1:]))
    vs_local = run[0.125].mean >= local.mean - 2 * pooled_stderr(run[0.125], local)
    detail = (", ".join(f"eps={e:g}: {run[e].mean:.3f}" for e in RING_EPS)
              + f"; random {rand.mean:.3f}, local {local.mean:.3f} "
              + f"(a={'ok' if beats else 'no'}, b={'ok' if trend else 'no'}, c={'ok' if vs_local else 'no'})")
    report(6, beats and trend and vs_local, detail, solve_time + time.perf_counter() - start, 1200)


def test_criterion_7_scaleup(report):
    start = time.perf_counter()
    ns = (4, 6, 8, 10)
    times = []
    for n in ns:
        bench = generate(BenchmarkSpec(topology="ring", n=n))
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            solve_halp(build_halp(bench.model, bench.basis, eps=0.25))
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    _, r2 = quadratic_fit(ns, times)
    ratios = [b / a for a, b in zip(times, times[1:])]
    ok = r2 >= 0.9 and all(r < 3 for r in ratios)
    detail = (", ".join(f"n={n}: {t:.3f}s" for n, t in zip(ns, times))
              + f"; R^2 {r2:.4f}; ratios " + ", ".join(f"{r:.2f}" for r in ratios))
    report(7, ok, detail, time.perf_counter() - start, 1800)


def run_every_command(root):
    """Run each CLI command once into ``root``; return every JSON output as bytes."""
    out = {}
    bench = root / "bench"
    common = ["--seed", "3", "--format", "json"]
    inputs = ["--model", str(bench / "model.json"), "--basis", str(bench / "basis.json")]

    def call(name, argv):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = main(argv)
        assert code == 0, f"{name} exited with {code}"
        out[f"{name}:stdout"] = buf.getvalue().encode()

    call("generate", ["generate", "--n", "4", "--jitter", "0.1", "--out-dir", str(bench), *common])
    call("solve", ["solve", *inputs, "--eps", "1/2", "--eps", "1/4", "--out-dir", str(root / "sol"), *common])
    sols = [str(root / "sol" / f"solution-eps{e}.json") for e in ("0.5", "0.25")]
    call("evaluate", ["evaluate", *inputs, "--solution", sols[0], "--solution", sols[1], "--baseline", "random",
                      "--baseline", "local", "--baseline", "global-3", "--trajectories", "10", "--horizon", "20",
                      "--out-dir", str(root / "eval"), *common])
    call("infeasibility", ["infeasibility", *inputs, "--solution", sols[1], "--out-dir", str(root / "inf"), *common])
    call("infeasibility-sampled", ["infeasibility", *inputs, "--solution", sols[1], "--samples", "5000",
                                   "--out-dir", str(root / "inf"), *common])
    call("scaleup", ["scaleup", "--n", "3", "--n", "4", "--eps", "1/2", "--out-dir", str(root / "scale"), *common])
    for path in sorted(root.rglob("*.json")):
        if path.name != "timings.json":
            out[str(path.relative_to(root))] = path.read_bytes()
    return out


def test_criterion_8_determinism(report, tmp_path):
    start = time.perf_counter()
    first = run_every_command(tmp_path / "one")
    second = run_every_command(tmp_path / "two")
    # generate reports its output paths, which differ by run directory
    for doc in (first, second):
        parsed = json.loads(doc["generate:stdout"])
        doc["generate:stdout"] = json.dumps({k: v for k, v in parsed.items() if k not in ("model", "basis")}).encode()
    for doc in (first, second):
        for key in ("infeasibility:stdout", "infeasibility-sampled:stdout"):
            parsed = json.loads(doc[key])
            for entry in parsed["infeasibility"]:
                entry["solution"] = entry["solution"].split("/")[-1]
            doc[key] = json.dumps(parsed).encode()
    differing = sorted(k for k in first if first[k] != second.get(k)) + sorted(set(second) - set(first))
    files = sum(1 for k in first if not k.endswith(":stdout"))
    report(8, not differing, f"{files} JSON files and {len(first) - files} JSON stdout documents compared"
                             + (f"; differing: {differing}" if differing else ", all byte-identical"),
           time.perf_counter() - start)

"""Command-line driver: ``halp generate|solve|evaluate|scaleup|infeasibility``.

Every JSON file a command writes depends only on its inputs and seed.
Wall-clock times go to a ``timings.json`` sidecar and to the text tables,
never into the JSON results.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .errors import BudgetExceededError, MisuseError, ParseError, SolverError, ValidationError
from .halp import GridProbe, SampleProbe, build_halp, measure_infeasibility, solve_halp
from .irrigation import BenchmarkSpec, generate
from .lp import write_lp_text
from .policy import GreedyPolicy, heuristic_controller, rollout

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_BUDGET = 5
EXIT_MISUSE = 6
EXIT_SOLVER = 7

log = logging.getLogger("halp")


def _eps(text: str) -> float:
    """Accept decimals or fractions such as ``1/8``."""
    try:
        if "/" in text:
            num, den = text.split("/", 1)
            value = float(num) / float(den)
        else:
            value = float(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"eps must lie in (0, 1], got {text}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _eps_tag(eps: float) -> str:
    return f"{eps:.6g}"


def threads() -> int:
    """Parallelism cap from ``HALP_THREADS`` (default 1)."""
    raw = os.environ.get("HALP_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise MisuseError(f"HALP_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise MisuseError(f"HALP_THREADS must be a positive integer, got {raw!r}")
    return value


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _record_timings(out_dir: Path, entries: dict) -> None:
    path = out_dir / "timings.json"
    existing = {}
    if path.exists():
        try:
            existing = json.loads(path.read_text())
        except json.JSONDecodeError:
            existing = {}
    existing.update(entries)
    _write(path, io.dumps(existing))


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def _emit(args, doc: dict, header: list[str], rows: list[list[str]]) -> None:
    if args.format == "json":
        sys.stdout.write(io.dumps(doc))
    else:
        sys.stdout.write(_table(header, rows))


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    spec = BenchmarkSpec(topology=args.topology, n=args.n, custom=args.topology_file, seed=args.seed,
                         jitter=args.jitter, tau=args.tau)
    bench = generate(spec)
    out = Path(args.out_dir)
    _write(out / "model.json", io.dump_model(bench.model))
    _write(out / "basis.json", io.dump_basis(bench.basis))
    doc = {"model": str(out / "model.json"), "basis": str(out / "basis.json"),
           "state_vars": len(bench.model.state_vars), "action_vars": len(bench.model.action_vars),
           "basis_functions": len(bench.basis)}
    _emit(args, doc, ["file", "state vars", "action vars", "basis"],
          [[doc["model"], str(doc["state_vars"]), str(doc["action_vars"]), str(doc["basis_functions"])]])
    return EXIT_OK


def _load_inputs(args):
    model = io.load_model(args.model)
    basis, psi = io.load_basis(args.basis)
    return model, basis, psi


def _run_all(args, fn, items) -> list:
    """Apply ``fn`` to ``items`` in order, on a thread pool when ``--parallel`` is set."""
    workers = threads()
    if getattr(args, "parallel", False) and workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def cmd_solve(args) -> int:
    model, basis, psi = _load_inputs(args)
    out = Path(args.out_dir)

    def solve_one(eps):
        start = time.perf_counter()
        program = build_halp(model, basis, psi, eps)
        try:
            sol = solve_halp(program, args.search, args.tol, args.seed, args.max_iter)
        except BudgetExceededError as err:
            return eps, None, err, 0.0
        return eps, sol, None, time.perf_counter() - start

    rows, docs, timings = [], [], {}
    status = EXIT_OK
    for eps, sol, err, elapsed in _run_all(args, solve_one, list(args.eps)):
        if err is not None:
            log.error("eps=%s: %s", _eps_tag(eps), err)
            if err.partial is not None:
                doc = io.solution_to_json(err.partial, basis)
                doc["partial"] = True
                _write(out / f"solution-eps{_eps_tag(eps)}.json", io.dumps(doc))
            status = EXIT_BUDGET
            continue
        doc = io.solution_to_json(sol, basis)
        name = f"solution-eps{_eps_tag(eps)}.json"
        _write(out / name, io.dumps(doc))
        if args.lp_dump and sol.lp is not None:
            path = out / f"lp-eps{_eps_tag(eps)}.lp"
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w") as fh:
                write_lp_text(sol.lp, fh, [f.name or f"w{i}" for i, f in enumerate(basis)])
        timings[name] = {"solve_seconds": elapsed}
        docs.append({"file": name, **{k: doc[k] for k in ("eps", "objective", "measured_delta", "delta_kind")},
                     "constraints_added": doc["diagnostics"]["constraints_added"]})
        rows.append([_eps_tag(eps), f"{sol.objective:.6g}", str(sol.diagnostics["constraints_added"]),
                     f"{sol.measured_delta:.3g}" + ("" if sol.delta_kind == "grid" else "*"), f"{elapsed:.3f}"])
    _record_timings(out, timings)
    _emit(args, {"solutions": docs}, ["eps", "objective", "constraints", "delta", "seconds"], rows)
    return status


def _solution_policy(model, basis, path, eps_override):
    sol = io.load_solution(path)
    if sol["basis_ref"] != io.basis_ref(basis):
        raise MisuseError(f"{path}: solution was computed for a different basis set")
    if len(sol["weights"]) != len(basis):
        raise MisuseError(f"{path}: {len(sol['weights'])} weights for {len(basis)} basis functions")
    eps = eps_override or sol["eps"]
    return GreedyPolicy(model, basis, sol["weights"], eps=eps, name=f"eps-HALP {_eps_tag(sol['eps'])}"), sol


def _baseline(model, name: str, eps: float):
    if name.startswith("global"):
        _, _, trials = name.partition("-")
        if trials and not trials.isdigit():
            raise MisuseError(f"bad baseline {name!r}; expected global-K with integer K")
        return heuristic_controller(model, "global", int(trials or 1), eps)
    return heuristic_controller(model, name, eps=eps)


def _solve_time(solution: Path):
    """Solve time recorded in the sidecar next to ``solution``, if any."""
    try:
        timings = json.loads((solution.parent / "timings.json").read_text())
    except (OSError, json.JSONDecodeError):
        return None
    return timings.get(solution.name, {}).get("solve_seconds")


def cmd_evaluate(args) -> int:
    model, basis, _ = _load_inputs(args)
    controllers = []
    for path in args.solution:
        policy, _ = _solution_policy(model, basis, path, args.action_eps)
        solve_time = _solve_time(Path(path))
        controllers.append((policy, solve_time))
    for name in args.baseline:
        controllers.append((_baseline(model, name, args.action_eps or 0.25), None))
    reps = _run_all(args, lambda c: rollout(model, c[0], args.trajectories, args.horizon, args.seed), controllers)
    reports, rows = [], []
    for (_, solve_time), rep in zip(controllers, reps):
        reports.append({"method": rep.name, "mean": rep.mean, "std": rep.std,
                        "trajectories": rep.n_traj, "horizon": rep.horizon, "seed": rep.seed,
                        "mean_discounted": float(np.mean(rep.discounted))})
        rows.append([rep.name, f"{rep.mean:.4f}", f"{rep.std:.4f}", "-" if solve_time is None else f"{solve_time:.3f}"])
    doc = {"evaluations": reports}
    _write(Path(args.out_dir) / "evaluation.json", io.dumps(doc))
    _emit(args, doc, ["method", "mu", "sigma", "solve seconds"], rows)
    return EXIT_OK


def quadratic_fit(x, y) -> tuple[np.ndarray, float]:
    """Least-squares quadratic coefficients (highest power first) and R^2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    coef = np.polyfit(x, y, 2)
    resid = y - np.polyval(coef, x)
    total = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / total if total > 0 else 1.0
    return coef, r2


def cmd_scaleup(args) -> int:
    out = Path(args.out_dir)
    rows, docs, times, ns = [], [], {}, []
    for n in args.n:
        bench = generate(BenchmarkSpec(topology=args.topology, n=n, seed=args.seed))
        best = None
        try:
            for _ in range(args.repeats):
                start = time.perf_counter()
                sol = solve_halp(build_halp(bench.model, bench.basis, eps=args.eps[0]), args.search, args.tol,
                                 args.seed, args.max_iter)
                elapsed = time.perf_counter() - start
                best = elapsed if best is None else min(best, elapsed)
        except BudgetExceededError as err:
            log.error("n=%d: %s", n, err)
            docs.append({"n": n, "status": "budget_exceeded"})
            rows.append([str(n), "-", "-", "budget"])
            continue
        ns.append(n)
        times[str(n)] = best
        docs.append({"n": n, "status": "ok", "state_vars": len(bench.model.state_vars),
                     "constraints_added": sol.diagnostics["constraints_added"], "objective": sol.objective})
        rows.append([str(n), str(sol.diagnostics["constraints_added"]), f"{sol.objective:.6g}", f"{best:.3f}"])
    doc = {"topology": args.topology, "eps": args.eps[0], "instances": docs}
    _write(out / "scaleup.json", io.dumps(doc))
    _record_timings(out, {"scaleup": times})
    _emit(args, doc, ["n", "constraints", "objective", "seconds"], rows)
    if len(ns) >= 3 and args.format == "text":
        coef, r2 = quadratic_fit(ns, [times[str(n)] for n in ns])
        sys.stdout.write(f"quadratic fit: {coef[0]:.4g} n^2 + {coef[1]:.4g} n + {coef[2]:.4g}  (R^2 = {r2:.4f})\n")
    return EXIT_OK


def cmd_infeasibility(args) -> int:
    model, basis, _ = _load_inputs(args)
    rows, docs = [], []
    for path in args.solution:
        sol = io.load_solution(path)
        if sol["basis_ref"] != io.basis_ref(basis):
            raise MisuseError(f"{path}: solution was computed for a different basis set")
        if args.samples:
            probe, label = SampleProbe(args.samples, args.seed), f"sample({args.samples})"
        else:
            probe_eps = args.eps[0] if args.eps else sol["eps"] / 2
            probe, label = GridProbe(probe_eps), f"grid({_eps_tag(probe_eps)})"
        delta = measure_infeasibility(model, basis, sol["weights"], probe)
        docs.append({"solution": str(path), "eps": sol["eps"], "probe": label, "delta": delta})
        rows.append([Path(path).name, _eps_tag(sol["eps"]), label, f"{delta:.6g}"])
    _emit(args, {"infeasibility": docs}, ["solution", "eps", "probe", "delta"], rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="halp", description="eps-HALP solver for hybrid factored MDPs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inputs=True):
        if inputs:
            p.add_argument("--model", required=True)
            p.add_argument("--basis", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--format", choices=("text", "json"), default="text")

    def solver(p):
        p.add_argument("--search", choices=("exhaustive", "greedy"), default="exhaustive")
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--max-iter", type=_positive_int, default=5000)

    p = sub.add_parser("generate", help="write an irrigation benchmark model and basis")
    common(p, inputs=False)
    p.add_argument("--topology", choices=("ring", "ring_of_rings", "custom"), default="ring")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--topology-file")
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=20.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve the eps-HALP for each --eps")
    common(p)
    solver(p)
    p.add_argument("--eps", type=_eps, action="append", required=True)
    p.add_argument("--lp-dump", action="store_true", help="also write the final LP in LP text format")
    p.add_argument("--parallel", action="store_true",
                   help="solve the eps values concurrently (up to HALP_THREADS); times are then not comparable")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("evaluate", help="roll out solutions and baselines")
    common(p)
    p.add_argument("--solution", action="append", default=[])
    p.add_argument("--baseline", action="append", default=[],
                   help="random, local or global-K (K joint-action trials)")
    p.add_argument("--trajectories", type=_positive_int, default=100)
    p.add_argument("--horizon", type=_positive_int, default=100)
    p.add_argument("--action-eps", type=_eps, default=None)
    p.add_argument("--parallel", action="store_true", help="roll out methods concurrently (up to HALP_THREADS)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("scaleup", help="time solves across benchmark sizes")
    common(p, inputs=False)
    solver(p)
    p.add_argument("--topology", choices=("ring", "ring_of_rings"), default="ring")
    p.add_argument("--n", type=int, action="append", required=True)
    p.add_argument("--eps", type=_eps, action="append", default=None)
    p.add_argument("--repeats", type=_positive_int, default=1)
    p.set_defaults(func=cmd_scaleup)

    p = sub.add_parser("infeasibility", help="measure the constraint violation of solutions")
    common(p)
    p.add_argument("--solution", action="append", required=True)
    p.add_argument("--eps", type=_eps, action="append", default=None, help="probe grid resolution")
    p.add_argument("--samples", type=_positive_int, default=None, help="probe with uniform samples instead")
    p.set_defaults(func=cmd_infeasibility)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "eps", None) is None and args.command == "scaleup":
        args.eps = [0.25]
    if args.command == "evaluate" and not args.solution and not args.baseline:
        parser.error("evaluate needs at least one --solution or --baseline")
    try:
        threads()
        return args.func(args)
    except ParseError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as err:
        print("error: invalid input:", file=sys.stderr)
        for v in err.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except BudgetExceededError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BUDGET
    except MisuseError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_MISUSE
    except SolverError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

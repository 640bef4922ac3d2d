"""Linear programs with ``>=`` rows and box bounds, plus constraint generation.

``solve_lp`` delegates the actual pivoting to HiGHS through scipy.
``solve_with_generation`` keeps one HiGHS instance alive and re-solves
after each added row from the previous basis. It handles constraint families too large to write
down: it keeps a small working set of rows, asks an oracle for the most
violated member of the family, and repeats until nothing is violated by
more than ``tol``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import highspy
import numpy as np
from scipy.optimize import linprog

from .errors import BudgetExceededError, MisuseError, SolverError

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-8
_HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


class LPStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """minimize c.w subject to A w >= b and lower <= w <= upper."""

    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rows: list = field(default_factory=list)
    rhs: list = field(default_factory=list)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        k = self.objective.shape[0]
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (k,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (k,)).copy()
        rows, self.rows = self.rows, []
        rhs, self.rhs = self.rhs, []
        for a, b in zip(rows, rhs):
            self.add_constraint(a, b)

    @property
    def dim(self) -> int:
        return self.objective.shape[0]

    def add_constraint(self, a, b: float) -> None:
        a = np.asarray(a, dtype=float)
        if a.shape != (self.dim,):
            raise MisuseError(f"constraint has shape {a.shape}, objective has dimension {self.dim}")
        self.rows.append(a)
        self.rhs.append(float(b))

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        return np.vstack(self.rows), np.asarray(self.rhs)


@dataclass
class LPResult:
    status: LPStatus
    w: np.ndarray | None
    objective: float


def solve_lp(lp: LinearProgram) -> LPResult:
    if lp.lower.shape != (lp.dim,) or lp.upper.shape != (lp.dim,):
        raise MisuseError("bound vectors must match the objective dimension")
    if np.any(lp.lower > lp.upper):
        raise MisuseError("lower bound exceeds upper bound")
    A, b = lp.matrix()
    res = linprog(lp.objective,
                  A_ub=-A if len(b) else None, b_ub=-b if len(b) else None,
                  bounds=list(zip(lp.lower, lp.upper)), method="highs", options=_HIGHS_OPTIONS)
    if res.status == 0:
        w = np.asarray(res.x, dtype=float)
        return LPResult(LPStatus.OPTIMAL, w, float(lp.objective @ w))
    if res.status == 2:
        return LPResult(LPStatus.INFEASIBLE, None, float("nan"))
    if res.status == 3:
        return LPResult(LPStatus.UNBOUNDED, None, float("-inf"))
    raise SolverError(f"LP solver failed: {res.message}")


class _IncrementalLP:
    """A HiGHS model that grows one ``>=`` row at a time and warm-starts each solve."""

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("presolve", "off")
        h.setOptionValue("threads", 1)
        for key, value in _HIGHS_OPTIONS.items():
            h.setOptionValue(key, value)
        inf = h.getInfinity()
        lower = np.where(np.isneginf(lp.lower), -inf, lp.lower)
        upper = np.where(np.isposinf(lp.upper), inf, lp.upper)
        h.addVars(lp.dim, lower, upper)
        h.changeColsCost(lp.dim, np.arange(lp.dim, dtype=np.int32), lp.objective)
        self.h, self.inf = h, inf
        for a, b in zip(lp.rows, lp.rhs):
            self._push(a, b)

    def _push(self, a, b):
        idx = np.flatnonzero(a).astype(np.int32)
        self.h.addRow(float(b), self.inf, len(idx), idx, a[idx])

    def add_constraint(self, a, b: float) -> None:
        self.lp.add_constraint(a, b)
        self._push(self.lp.rows[-1], self.lp.rhs[-1])

    def solve(self) -> LPResult:
        self.h.run()
        status = self.h.getModelStatus()
        if status == highspy.HighsModelStatus.kOptimal:
            w = np.asarray(self.h.getSolution().col_value, dtype=float)
            return LPResult(LPStatus.OPTIMAL, w, float(self.lp.objective @ w))
        if status == highspy.HighsModelStatus.kInfeasible:
            return LPResult(LPStatus.INFEASIBLE, None, float("nan"))
        if status in (highspy.HighsModelStatus.kUnbounded, highspy.HighsModelStatus.kUnboundedOrInfeasible):
            return LPResult(LPStatus.UNBOUNDED, None, float("-inf"))
        raise SolverError(f"LP solver failed: {self.h.modelStatusToString(status)}")


def write_lp_text(lp: LinearProgram, out: TextIO, names: Sequence[str] | None = None) -> None:
    """Dump ``lp`` in CPLEX LP text format."""
    names = list(names) if names is not None else [f"w{i}" for i in range(lp.dim)]

    def expr(coeffs):
        parts = [f"{c:+.17g} {n}" for c, n in zip(coeffs, names) if c != 0.0]
        return " ".join(parts) if parts else f"0 {names[0]}"

    out.write("\\ HALP weight LP\nMinimize\n")
    out.write(f" obj: {expr(lp.objective)}\nSubject To\n")
    for i, (a, b) in enumerate(zip(lp.rows, lp.rhs)):
        out.write(f" c{i}: {expr(a)} >= {b:.17g}\n")
    out.write("Bounds\n")
    for n, lo, hi in zip(names, lp.lower, lp.upper):
        lo_s = "-inf" if np.isneginf(lo) else f"{lo:.17g}"
        hi_s = "+inf" if np.isposinf(hi) else f"{hi:.17g}"
        out.write(f" {lo_s} <= {n} <= {hi_s}\n")
    out.write("End\n")


# ---------------------------------------------------------------------------
# implicit constraint families


class ConstraintOracle:
    """A finite family of constraints ``row(z).w >= rhs(z)`` indexed by grid points.

    Points ``z`` are integer tuples inside ``axis_sizes``. Subclasses supply
    ``row``; the default searches are generic but slow, so large families
    should override ``violations_along`` and ``most_violated``.
    """

    axis_sizes: tuple[int, ...] = ()
    dim: int = 0

    def row(self, z) -> tuple[np.ndarray, float]:
        raise NotImplementedError

    @property
    def size(self) -> int:
        return int(np.prod(self.axis_sizes, dtype=object))

    def violation(self, w, z) -> float:
        """rhs(z) - row(z).w; positive means the constraint at z is violated."""
        coeffs, rhs = self.row(z)
        return float(rhs - coeffs @ np.asarray(w, dtype=float))

    def violations_along(self, w, z, axis: int) -> np.ndarray:
        z = list(z)
        out = np.empty(self.axis_sizes[axis])
        for j in range(self.axis_sizes[axis]):
            z[axis] = j
            out[j] = self.violation(w, z)
        return out

    def most_violated(self, w, search: str = "exhaustive", rng: np.random.Generator | None = None):
        """Return ``(z, violation)`` for the worst point found by ``search``."""
        if search == "exhaustive":
            best_z, best_v = None, -np.inf
            for z in np.ndindex(*self.axis_sizes):
                v = self.violation(w, z)
                if v > best_v:
                    best_z, best_v = z, v
            return tuple(int(i) for i in best_z), float(best_v)
        if search == "greedy_coordinate":
            return coordinate_search(self, w, rng if rng is not None else np.random.default_rng(0))
        raise MisuseError(f"unknown search mode {search!r}")

    def random_points(self, n: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
        """Up to ``n`` distinct uniformly drawn points."""
        n = min(n, self.size)
        seen: dict[tuple[int, ...], None] = {}
        attempts = 0
        while len(seen) < n and attempts < 50 * n + 50:
            z = tuple(int(rng.integers(0, s)) for s in self.axis_sizes)
            seen.setdefault(z)
            attempts += 1
        return list(seen)


class ArrayOracle(ConstraintOracle):
    """Explicitly tabulated family: ``rows[z]`` and ``rhs[z]`` for every grid point."""

    def __init__(self, rows, rhs):
        self.rows = np.asarray(rows, dtype=float)
        self.rhs = np.asarray(rhs, dtype=float)
        self.axis_sizes = tuple(self.rhs.shape)
        self.dim = self.rows.shape[-1]
        if self.rows.shape[:-1] != self.rhs.shape:
            raise MisuseError("rows and rhs disagree on the grid shape")

    def row(self, z):
        z = tuple(int(i) for i in z)
        return self.rows[z].copy(), float(self.rhs[z])

    def violations_along(self, w, z, axis):
        z = tuple(slice(None) if k == axis else int(i) for k, i in enumerate(z))
        return self.rhs[z] - self.rows[z] @ np.asarray(w, dtype=float)

    def most_violated(self, w, search="exhaustive", rng=None):
        if search == "exhaustive":
            v = self.rhs - self.rows @ np.asarray(w, dtype=float)
            flat = int(np.argmax(v))
            z = np.unravel_index(flat, self.axis_sizes)
            return tuple(int(i) for i in z), float(v.flat[flat])
        return super().most_violated(w, search, rng)


def coordinate_search(oracle: ConstraintOracle, w, rng: np.random.Generator, restarts: int = 5):
    """Coordinate-wise ascent of the violation from ``restarts`` random starts."""
    best_z, best_v = None, -np.inf
    for _ in range(restarts):
        z = [int(rng.integers(0, s)) for s in oracle.axis_sizes]
        v = oracle.violation(w, z)
        improved = True
        while improved:
            improved = False
            for axis in range(len(z)):
                along = oracle.violations_along(w, z, axis)
                j = int(np.argmax(along))
                if along[j] > v:
                    z[axis], v = j, float(along[j])
                    improved = True
        if v > best_v or (v == best_v and tuple(z) < best_z):
            best_z, best_v = tuple(z), v
    return best_z, float(best_v)


@dataclass
class GenerationResult:
    w: np.ndarray
    objective: float
    added_constraints: int
    max_violation: float
    iterations: int
    history: list[float]
    lp: LinearProgram
    verified: bool


def solve_with_generation(objective, oracle: ConstraintOracle, search: str = "exhaustive",
                          tol: float = 1e-6, lower=-np.inf, upper=np.inf, seed_points: int = 32,
                          max_iter: int = 5000, seed: int = 0, verify: bool = False,
                          initial: Iterable | None = None) -> GenerationResult:
    """Minimize ``objective.w`` over every constraint in ``oracle`` by generation.

    ``search`` picks the most-violated-constraint routine. In greedy mode the
    loop stops once the heuristic finds nothing above ``tol``; with
    ``verify=True`` an exhaustive pass then confirms (or resumes the loop).
    Exhaustive mode certifies that the returned weights violate no
    constraint by more than ``tol``.
    """
    if not tol > 0:
        raise MisuseError("tol must be positive")
    if search not in ("exhaustive", "greedy_coordinate"):
        raise MisuseError(f"unknown search mode {search!r}")
    rng = np.random.default_rng(seed)
    lp = LinearProgram(objective, lower, upper)
    if lp.dim != oracle.dim:
        raise MisuseError(f"objective has dimension {lp.dim}, oracle rows have {oracle.dim}")
    if np.any(lp.lower > lp.upper):
        raise MisuseError("lower bound exceeds upper bound")

    added: set[tuple[int, ...]] = set()
    points = list(initial) if initial is not None else oracle.random_points(seed_points, rng)
    for z in points:
        z = tuple(int(i) for i in z)
        if z not in added:
            added.add(z)
            lp.add_constraint(*oracle.row(z))
    session = _IncrementalLP(lp)

    history: list[float] = []
    mode = search
    verified = search == "exhaustive"
    result = None
    for it in range(1, max_iter + 1):
        sol = session.solve()
        if sol.status != LPStatus.OPTIMAL:
            raise SolverError(f"relaxed LP is {sol.status.value}; widen the weight bounds")
        history.append(sol.objective)
        z, v = oracle.most_violated(sol.w, mode, rng)
        result = GenerationResult(sol.w, sol.objective, len(added), max(v, 0.0), it, history, lp, verified)
        if v <= tol:
            if mode == "greedy_coordinate" and verify:
                z, v = oracle.most_violated(sol.w, "exhaustive", rng)
                result.max_violation = max(v, 0.0)
                result.verified = verified = True
                if v <= tol:
                    return result
                mode = "exhaustive"
            else:
                return result
        if z in added:
            log.warning("most violated point %s is already in the LP (violation %.3g)", z, v)
            return result
        added.add(z)
        session.add_constraint(*oracle.row(z))
    raise BudgetExceededError(f"constraint generation did not converge in {max_iter} iterations", result)

"""The eps-HALP: grid relaxation of the hybrid approximate linear program.

``build_halp`` tabulates every constraint function F_i and reward factor
R_j on its own restricted scope over the eps-grid and computes the
objective coefficients. ``solve_halp`` runs constraint generation on that
program. The tables are combined with max-sum variable elimination, so the
most violated grid constraint is found exactly without enumerating the
joint grid.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import polygamma

from . import costnet
from .basis import (BasisFunction, ConstraintFunction, MonomialFactor, StateRelevanceDensity,
                    basis_problems, constraint_function, relevance_weight)
from .errors import BudgetExceededError, MisuseError, ValidationError
from .lp import ConstraintOracle, solve_with_generation
from .model import (BetaCPF, DiscriminantCPF, HybridModel, MixtureBetaCPF, ScopedFunction,
                    domain_values, reward_bound, reward_values, validate_model)

SEARCH_MODES = {"exhaustive": "exhaustive", "greedy": "greedy_coordinate",
                "greedy_coordinate": "greedy_coordinate"}


def grid_count(eps: float) -> int:
    """Points per continuous axis so that every value is within ``eps`` of one."""
    if not 0.0 < eps <= 1.0:
        raise MisuseError(f"eps must lie in (0, 1], got {eps!r}")
    return math.ceil(1.0 / (2.0 * eps) - 1e-9) + 1


@dataclass(frozen=True)
class EpsGrid:
    eps: float
    names: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]

    @classmethod
    def for_model(cls, model: HybridModel, eps: float, names: Sequence[str] | None = None) -> "EpsGrid":
        names = tuple(names) if names is not None else tuple(v.name for v in model.variables)
        count = grid_count(eps)
        vals = []
        for n in names:
            spec = model.spec(n)
            vals.append(tuple(float(x) for x in domain_values(spec, count if spec.is_continuous else None)))
        return cls(float(eps), names, tuple(vals))

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.values)

    def axis(self, name: str) -> int:
        return self.names.index(name)

    def point(self, z) -> dict[str, float]:
        return {n: vals[int(i)] for n, vals, i in zip(self.names, self.values, z)}

    def nearest(self, name: str, x) -> np.ndarray:
        vals = np.asarray(self.values[self.axis(name)])
        return np.abs(np.asarray(x)[..., None] - vals).argmin(axis=-1)


def tabulate(fn, scope: Sequence[str], grid: EpsGrid) -> np.ndarray:
    """Evaluate ``fn`` on every grid point of its restricted scope."""
    axes = [np.asarray(grid.values[grid.axis(v)]) for v in scope]
    mesh = np.meshgrid(*axes, indexing="ij") if axes else []
    vals = fn.evaluate(dict(zip(scope, mesh)))
    return np.array(np.broadcast_to(vals, tuple(len(a) for a in axes)), dtype=float)


class GridOracle(ConstraintOracle):
    """HALP constraints on an eps-grid, stored as per-scope tables."""

    def __init__(self, grid: EpsGrid, constraints: Sequence, rewards: Sequence):
        self.grid = grid
        self.axis_sizes = grid.sizes
        self.dim = len(constraints)
        self.f_tables = [self._table(c) for c in constraints]
        self.r_tables = [self._table(r) for r in rewards]
        groups: dict[tuple[int, ...], list[int]] = {}
        for i, (scope, _) in enumerate(self.f_tables):
            groups.setdefault(scope, []).append(i)
        self._groups = [(scope, np.asarray(idx), np.stack([self.f_tables[i][1] for i in idx]))
                        for scope, idx in groups.items()]

    def _table(self, fn):
        # tables are laid out in grid-axis order, whatever order the scope lists
        axes = tuple(sorted(self.grid.axis(v) for v in fn.scope))
        return axes, tabulate(fn, [self.grid.names[u] for u in axes], self.grid)

    def row(self, z):
        z = tuple(int(i) for i in z)
        coeffs = np.array([t[tuple(z[u] for u in s)] for s, t in self.f_tables])
        rhs = sum(float(t[tuple(z[u] for u in s)]) for s, t in self.r_tables)
        return coeffs, float(rhs)

    def factors(self, w) -> list[costnet.Factor]:
        """Tables whose sum over the grid is R(z) - sum_i w_i F_i(z)."""
        w = np.asarray(w, dtype=float)
        out = list(self.r_tables)
        for scope, idx, stack in self._groups:
            out.append((scope, -np.tensordot(w[idx], stack, axes=1)))
        return out

    def violations_along(self, w, z, axis):
        z = list(z)
        out = np.zeros(self.axis_sizes[axis])
        for scope, table in self.factors(w):
            if axis in scope:
                out = out + table[tuple(slice(None) if u == axis else z[u] for u in scope)]
            else:
                out = out + table[tuple(z[u] for u in scope)]
        return out

    def most_violated(self, w, search="exhaustive", rng=None, restarts: int = 5):
        factors = self.factors(w)
        if search == "exhaustive":
            value, z = costnet.max_sum(factors, self.axis_sizes)
            return z, value
        if search == "greedy_coordinate":
            rng = rng if rng is not None else np.random.default_rng(0)
            best_z, best_v = None, -np.inf
            for _ in range(restarts):
                start = [int(rng.integers(0, s)) for s in self.axis_sizes]
                v, z = costnet.coordinate_ascent(factors, self.axis_sizes, start)
                if v > best_v or (v == best_v and z < best_z):
                    best_z, best_v = z, v
            return best_z, best_v
        raise MisuseError(f"unknown search mode {search!r}")

    def max_violation(self, w) -> float:
        return self.most_violated(w, "exhaustive")[1]


@dataclass
class HalpProgram:
    model: HybridModel
    basis: tuple[BasisFunction, ...]
    psi: StateRelevanceDensity
    grid: EpsGrid
    alphas: np.ndarray
    constraints: list[ConstraintFunction]
    oracle: GridOracle
    weight_bound: float


@dataclass
class HalpSolution:
    w: np.ndarray
    objective: float
    eps: float
    measured_delta: float
    delta_kind: str
    diagnostics: dict = field(default_factory=dict)
    lp: object = field(default=None, repr=False)


def default_weight_bound(model: HybridModel) -> float:
    bound = reward_bound(model) / (1.0 - model.discount)
    return bound if bound > 0 else 1.0


def check_inputs(model: HybridModel, basis: Sequence[BasisFunction]) -> None:
    issues = validate_model(model) + basis_problems(model, basis)
    if issues:
        raise ValidationError(issues)


def build_halp(model: HybridModel, basis: Sequence[BasisFunction], psi: StateRelevanceDensity | None = None,
               eps: float = 0.25, weight_bound: float | None = None) -> HalpProgram:
    check_inputs(model, basis)
    psi = psi if psi is not None else StateRelevanceDensity.uniform(model)
    grid = EpsGrid.for_model(model, eps)
    alphas = np.array([relevance_weight(psi, f) for f in basis])
    constraints = [constraint_function(model, f) for f in basis]
    oracle = GridOracle(grid, constraints, model.rewards)
    bound = default_weight_bound(model) if weight_bound is None else float(weight_bound)
    return HalpProgram(model, tuple(basis), psi, grid, alphas, constraints, oracle, bound)


def solve_halp(program: HalpProgram, search: str = "exhaustive", tol: float = 1e-6, seed: int = 0,
               max_iter: int = 5000, verify: bool = False, sample_points: int = 100_000) -> HalpSolution:
    """Solve the program; ``measured_delta`` is exact on the grid in exhaustive
    mode and a Monte Carlo estimate over the continuum in greedy mode."""
    if search not in SEARCH_MODES:
        raise MisuseError(f"unknown search mode {search!r}")
    mode = SEARCH_MODES[search]
    start = time.perf_counter()
    try:
        res = solve_with_generation(program.alphas, program.oracle, mode, tol,
                                    lower=-program.weight_bound, upper=program.weight_bound,
                                    seed=seed, max_iter=max_iter, verify=verify)
    except BudgetExceededError as err:
        partial = err.partial
        if partial is not None:
            err.partial = HalpSolution(partial.w, partial.objective, program.grid.eps, partial.max_violation,
                                       "partial", {"iterations": partial.iterations})
        raise
    elapsed = time.perf_counter() - start
    if mode == "exhaustive" or res.verified:
        delta, kind = max(program.oracle.max_violation(res.w), 0.0), "grid"
    else:
        delta = measure_infeasibility(program.model, program.basis, res.w, SampleProbe(sample_points, seed),
                                      constraints=program.constraints)
        kind = "sampled_estimate"
    at_box = np.isclose(np.abs(res.w), program.weight_bound, rtol=0, atol=1e-7 * program.weight_bound)
    diagnostics = {
        "constraints_added": res.added_constraints,
        "iterations": res.iterations,
        "search": search,
        "tol": tol,
        "grid_points_per_axis": grid_count(program.grid.eps),
        "weight_bound": program.weight_bound,
        "weights_at_bound": int(at_box.sum()),
        "wall_time": elapsed,
    }
    return HalpSolution(res.w, float(program.alphas @ res.w), program.grid.eps, float(delta), kind, diagnostics,
                        res.lp)


# ---------------------------------------------------------------------------
# infeasibility


@dataclass(frozen=True)
class GridProbe:
    eps: float


@dataclass(frozen=True)
class SampleProbe:
    n: int
    seed: int = 0


Probe = Union[GridProbe, SampleProbe]


def measure_infeasibility(model: HybridModel, basis: Sequence[BasisFunction], w, probe: Probe,
                          constraints: Sequence[ConstraintFunction] | None = None) -> float:
    """max over probe points of R(x, a) - sum_i w_i F_i(x, a), floored at 0."""
    w = np.asarray(w, dtype=float)
    if w.shape != (len(basis),):
        raise MisuseError(f"got {w.shape[0] if w.ndim else 0} weights for {len(basis)} basis functions")
    constraints = constraints if constraints is not None else [constraint_function(model, f) for f in basis]
    if isinstance(probe, GridProbe):
        oracle = GridOracle(EpsGrid.for_model(model, probe.eps), constraints, model.rewards)
        return max(oracle.max_violation(w), 0.0)
    rng = np.random.default_rng(probe.seed)
    worst = 0.0
    chunk = 20_000
    for start in range(0, probe.n, chunk):
        n = min(chunk, probe.n - start)
        values = {v.name: (rng.random(n) if v.is_continuous else rng.integers(0, v.domain_size, n))
                  for v in model.variables}
        slack = reward_values(model, values) - sum(wi * c.evaluate(values) for wi, c in zip(w, constraints))
        worst = max(worst, float(np.max(slack)))
    return worst


# ---------------------------------------------------------------------------
# Lipschitz bounds and grid resolution


def _h_range(h: ScopedFunction, floor: float) -> tuple[float, float]:
    lo, hi = h.bounds()
    return max(lo, floor), max(hi, floor)


def _expectation_sensitivity(cpf, phi_range: float, phi_lip: float) -> dict[str, float]:
    """Per-axis bound on |d/du E[phi(X')]| for a beta-family child.

    Uses |dE/dh| = |Cov(phi(X), d log p / dh)| <= sqrt(Var phi(X) * Fisher_hh),
    with Var phi <= min(range^2 / 4, lip^2 Var X).
    """
    comps = [(1.0, cpf)] if isinstance(cpf, BetaCPF) else list(cpf.components)
    out: dict[str, float] = {}
    for weight, comp in comps:
        a_lo, _ = _h_range(comp.h1, comp.floor)
        b_lo, _ = _h_range(comp.h2, comp.floor)
        var_x = 1.0 / (4.0 * (a_lo + b_lo + 1.0))
        var_phi = min(phi_range ** 2 / 4.0, phi_lip ** 2 * var_x)
        da = math.sqrt(var_phi * float(polygamma(1, a_lo)))
        db = math.sqrt(var_phi * float(polygamma(1, b_lo)))
        for h, d in ((comp.h1, da), (comp.h2, db)):
            for u, k in h.lipschitz().items():
                out[u] = out.get(u, 0.0) + weight * d * k
    return out


def _discriminant_sensitivity(cpf: DiscriminantCPF) -> dict[str, float]:
    """Per-axis bound on sum_j |d/du P(child = j | u)|."""
    lows = [_h_range(d, cpf.floor)[0] for d in cpf.discriminants]
    total_lo = sum(lows)
    lips = [d.lipschitz() for d in cpf.discriminants]
    axes = set().union(*lips) if lips else set()
    out = {}
    for u in axes:
        s = sum(l.get(u, 0.0) for l in lips)
        out[u] = sum((l.get(u, 0.0) + s) / total_lo for l in lips)
    return out


def _add(into: dict, other: dict, scale: float = 1.0) -> None:
    for k, v in other.items():
        into[k] = into.get(k, 0.0) + scale * v


def basis_lipschitz(f: BasisFunction) -> dict[str, float]:
    dmax = f.discrete.max_abs()
    out: dict[str, float] = {}
    if isinstance(f.continuous, MonomialFactor):
        for v, m in f.continuous.degrees:
            if m:
                out[v] = dmax * m
    else:
        pieces = f.continuous.pieces
        sups = [max(abs(x) for x in vals) for _, _, vals in pieces]
        for j, (v, knots, vals) in enumerate(pieces):
            slope = float(np.max(np.abs(np.diff(vals) / np.diff(knots))))
            others = float(np.prod(sups[:j] + sups[j + 1:]))
            out[v] = out.get(v, 0.0) + dmax * slope * others
    return out


def backprojection_lipschitz(model: HybridModel, f: BasisFunction) -> dict[str, float]:
    dmax = f.discrete.max_abs()
    out: dict[str, float] = {}
    # continuous part: product of per-child expectations
    if isinstance(f.continuous, MonomialFactor):
        items = [(v, 1.0, float(m)) for v, m in f.continuous.degrees if m]
        sups = [1.0] * len(items)
    else:
        items = []
        sups = []
        for v, knots, vals in f.continuous.pieces:
            slope = float(np.max(np.abs(np.diff(vals) / np.diff(knots))))
            items.append((v, max(vals) - min(vals), slope))
            sups.append(max(abs(x) for x in vals))
    for j, (v, rng_, lip) in enumerate(items):
        cpf = model.cpf(v)
        if not isinstance(cpf, (BetaCPF, MixtureBetaCPF)):
            raise MisuseError(f"no Lipschitz bound for continuous factor on {v!r}")
        others = float(np.prod(sups[:j] + sups[j + 1:]))
        _add(out, _expectation_sensitivity(cpf, rng_, lip), dmax * others)
    # discrete part: sensitivity of the child distribution
    cont_sup = float(np.prod(sups)) if sups else 1.0
    for v in f.discrete.scope:
        cpf = model.cpf(v)
        if not isinstance(cpf, DiscriminantCPF):
            raise MisuseError(f"no Lipschitz bound for discrete factor on {v!r}")
        _add(out, _discriminant_sensitivity(cpf), dmax * cont_sup)
    return out


def _continuous_axes(model: HybridModel, per_axis: dict[str, float]) -> float:
    return sum(k for v, k in per_axis.items() if model.spec(v).is_continuous)


def constraint_lipschitz(model: HybridModel, f: BasisFunction) -> float:
    """Max-norm Lipschitz bound of F = f - discount * g over continuous axes."""
    per_axis = dict(basis_lipschitz(f))
    _add(per_axis, backprojection_lipschitz(model, f), model.discount)
    return _continuous_axes(model, per_axis)


def reward_lipschitz(model: HybridModel, r: ScopedFunction) -> float:
    return _continuous_axes(model, r.lipschitz())


def resolution_for_delta(model: HybridModel, basis: Sequence[BasisFunction], delta: float,
                         w_bound: float | None = None) -> float:
    """Largest eps (capped at 1) whose grid keeps every constraint within ``delta``."""
    if not delta > 0:
        raise MisuseError("delta must be positive")
    w_bound = default_weight_bound(model) if w_bound is None else float(w_bound)
    ks = [w_bound * constraint_lipschitz(model, f) for f in basis]
    ks += [reward_lipschitz(model, r) for r in model.rewards]
    k_max = max(ks, default=0.0)
    if k_max <= 0.0:
        return 1.0
    return min(1.0, delta / (len(ks) * k_max))

"""Hybrid factored MDPs: variables, scoped functions, CPFs and the model itself."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np
from scipy import stats

from .errors import DomainError, MisuseError
from .expr import Constant, ContinuousExpr

CONTINUOUS = "continuous"
DISCRETE = "discrete"

# Query points for continuous densities are pulled this far inside [0, 1].
DENSITY_EDGE = 1e-9


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    domain_size: int | None = None

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS

    @classmethod
    def continuous(cls, name: str) -> "VariableSpec":
        return cls(name, CONTINUOUS)

    @classmethod
    def discrete(cls, name: str, domain_size: int) -> "VariableSpec":
        return cls(name, DISCRETE, int(domain_size))


@dataclass(frozen=True)
class ScopedFunction:
    """A function of a few variables: a table of continuous expressions
    indexed by the joint assignment of the discrete scope (row-major)."""

    discrete_scope: tuple[str, ...]
    continuous_scope: tuple[str, ...]
    table: tuple[ContinuousExpr, ...]
    shape: tuple[int, ...] = ()

    @property
    def scope(self) -> tuple[str, ...]:
        return self.discrete_scope + self.continuous_scope

    @classmethod
    def of(cls, expr: ContinuousExpr) -> "ScopedFunction":
        return cls((), tuple(expr.variables), (expr,))

    @classmethod
    def const(cls, value: float) -> "ScopedFunction":
        return cls((), (), (Constant(float(value)),))

    @classmethod
    def tabular(cls, discrete_scope: Sequence[str], shape: Sequence[int], table: Sequence,
                continuous_scope: Sequence[str] | None = None) -> "ScopedFunction":
        """Build from a row-major table whose entries are expressions or numbers.

        The continuous scope defaults to every variable the entries use.
        """
        entries = tuple(e if hasattr(e, "evaluate") else Constant(float(e)) for e in table)
        if continuous_scope is None:
            continuous_scope = tuple(dict.fromkeys(v for e in entries for v in e.variables))
        return cls(tuple(discrete_scope), tuple(continuous_scope), entries, tuple(int(s) for s in shape))

    def evaluate(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        arrays = {v: np.asarray(values[v]) for v in self.scope}
        shape = np.broadcast_shapes(*(a.shape for a in arrays.values())) if arrays else ()
        cont = {v: np.broadcast_to(arrays[v], shape) for v in self.continuous_scope}
        if not self.discrete_scope:
            return np.array(np.broadcast_to(self.table[0].evaluate(cont), shape), dtype=float)
        idx = np.ravel_multi_index(
            tuple(np.broadcast_to(arrays[v], shape).astype(np.intp) for v in self.discrete_scope),
            self.shape)
        out = np.empty(shape)
        keys = np.unique(idx)
        if keys.size == 1:
            out[...] = self.table[int(keys[0])].evaluate(cont)
            return out
        for k in keys:
            mask = idx == k
            out[mask] = self.table[int(k)].evaluate({v: c[mask] for v, c in cont.items()})
        return out

    def bounds(self) -> tuple[float, float]:
        pairs = [e.bounds() for e in self.table]
        return (min(p[0] for p in pairs), max(p[1] for p in pairs))

    def lipschitz(self) -> dict[str, float]:
        """Per-axis Lipschitz bound, maximized over table entries."""
        out: dict[str, float] = {}
        for e in self.table:
            for v, k in e.lipschitz().items():
                out[v] = max(out.get(v, 0.0), k)
        return out


@dataclass(frozen=True)
class BetaCPF:
    child: str
    h1: ScopedFunction
    h2: ScopedFunction
    floor: float = 1e-3

    @property
    def parents(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.h1.scope + self.h2.scope))

    def params(self, values) -> tuple[np.ndarray, np.ndarray]:
        return (np.maximum(self.h1.evaluate(values), self.floor),
                np.maximum(self.h2.evaluate(values), self.floor))

    def beta_params(self, values) -> list[tuple[float, np.ndarray, np.ndarray]]:
        a, b = self.params(values)
        return [(1.0, a, b)]


@dataclass(frozen=True)
class MixtureBetaCPF:
    child: str
    components: tuple[tuple[float, BetaCPF], ...]

    @property
    def parents(self) -> tuple[str, ...]:
        names: dict[str, None] = {}
        for _, comp in self.components:
            for v in comp.parents:
                names.setdefault(v)
        return tuple(names)

    def beta_params(self, values) -> list[tuple[float, np.ndarray, np.ndarray]]:
        return [(w, *comp.params(values)) for w, comp in self.components]


@dataclass(frozen=True)
class DiscriminantCPF:
    child: str
    discriminants: tuple[ScopedFunction, ...]
    floor: float = 1e-3

    @property
    def parents(self) -> tuple[str, ...]:
        names: dict[str, None] = {}
        for d in self.discriminants:
            for v in d.scope:
                names.setdefault(v)
        return tuple(names)

    def probabilities(self, values) -> np.ndarray:
        """Class probabilities, stacked on a trailing axis of length |Dom(child)|."""
        d = [np.maximum(f.evaluate(values), self.floor) for f in self.discriminants]
        d = np.stack(np.broadcast_arrays(*d), axis=-1)
        return d / d.sum(axis=-1, keepdims=True)


CPF = Union[BetaCPF, MixtureBetaCPF, DiscriminantCPF]


@dataclass(frozen=True)
class HybridModel:
    state_vars: tuple[VariableSpec, ...]
    action_vars: tuple[VariableSpec, ...]
    cpfs: tuple[CPF, ...]
    rewards: tuple[ScopedFunction, ...]
    discount: float

    @property
    def variables(self) -> tuple[VariableSpec, ...]:
        return self.state_vars + self.action_vars

    @property
    def state_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.state_vars)

    @property
    def action_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.action_vars)

    def spec(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise MisuseError(f"unknown variable {name!r}")

    def cpf(self, child: str) -> CPF:
        for c in self.cpfs:
            if c.child == child:
                return c
        raise MisuseError(f"no CPF for {child!r}")

    def is_action(self, name: str) -> bool:
        return name in self.action_names

    def order(self, names) -> tuple[str, ...]:
        """Sort variable names into model order (state vars, then actions)."""
        wanted = set(names)
        return tuple(v.name for v in self.variables if v.name in wanted)


def validate_model(model: HybridModel) -> list[str]:
    """Return every invariant violation found in ``model``; empty means valid."""
    issues: list[str] = []
    known: dict[str, VariableSpec] = {}
    for v in model.variables:
        if v.name in known:
            issues.append(f"duplicate variable name {v.name!r}")
        known[v.name] = v
        if v.kind == CONTINUOUS:
            if v.domain_size is not None:
                issues.append(f"continuous variable {v.name!r} must not declare domain_size")
        elif v.kind == DISCRETE:
            if v.domain_size is None or v.domain_size < 2:
                issues.append(f"discrete variable {v.name!r} needs domain_size >= 2")
        else:
            issues.append(f"variable {v.name!r} has unknown kind {v.kind!r}")

    if not (0.0 <= model.discount < 1.0):
        issues.append(f"discount must lie in [0, 1), got {model.discount!r}")

    state = {v.name: v for v in model.state_vars}
    seen_children: dict[str, int] = {}
    for cpf in model.cpfs:
        where = f"cpf[{cpf.child}]"
        seen_children[cpf.child] = seen_children.get(cpf.child, 0) + 1
        spec = state.get(cpf.child)
        if spec is None:
            issues.append(f"{where}: child {cpf.child!r} is not a state variable")
        if isinstance(cpf, (BetaCPF, MixtureBetaCPF)):
            if spec is not None and not spec.is_continuous:
                issues.append(f"{where}: beta CPF on discrete variable {cpf.child!r}")
            comps = [(1.0, cpf)] if isinstance(cpf, BetaCPF) else list(cpf.components)
            if isinstance(cpf, MixtureBetaCPF):
                if not comps:
                    issues.append(f"{where}: mixture has no components")
                weights = [w for w, _ in comps]
                if any(not w > 0 for w in weights):
                    issues.append(f"{where}: mixture weights must be strictly positive")
                if comps and abs(sum(weights) - 1.0) > 1e-9:
                    issues.append(f"{where}: mixture weights sum to {sum(weights)!r}, not 1")
            for k, (_, comp) in enumerate(comps):
                if not comp.floor > 0:
                    issues.append(f"{where}: floor must be positive, got {comp.floor!r}")
                issues += _scoped_issues(comp.h1, known, f"{where}.h1" + (f"[{k}]" if len(comps) > 1 else ""))
                issues += _scoped_issues(comp.h2, known, f"{where}.h2" + (f"[{k}]" if len(comps) > 1 else ""))
        elif isinstance(cpf, DiscriminantCPF):
            if spec is not None:
                if spec.is_continuous:
                    issues.append(f"{where}: discriminant CPF on continuous variable {cpf.child!r}")
                elif len(cpf.discriminants) != spec.domain_size:
                    issues.append(f"{where}: expected {spec.domain_size} discriminants, got {len(cpf.discriminants)}")
            if not cpf.floor > 0:
                issues.append(f"{where}: floor must be positive, got {cpf.floor!r}")
            for j, d in enumerate(cpf.discriminants):
                issues += _scoped_issues(d, known, f"{where}.d[{j}]")
        else:
            issues.append(f"{where}: unknown CPF type {type(cpf).__name__}")

    for name in state:
        count = seen_children.get(name, 0)
        if count != 1:
            issues.append(f"state variable {name!r} has {count} CPFs, expected exactly 1")
    for j, r in enumerate(model.rewards):
        issues += _scoped_issues(r, known, f"rewards[{j}]")
    return issues


def _scoped_issues(f: ScopedFunction, known: Mapping[str, VariableSpec], where: str) -> list[str]:
    issues = []
    dangling = False
    for v in f.discrete_scope:
        spec = known.get(v)
        if spec is None:
            issues.append(f"{where}: undeclared variable {v!r}")
            dangling = True
        elif spec.is_continuous:
            issues.append(f"{where}: {v!r} is continuous but listed in discrete_scope")
    for v in f.continuous_scope:
        spec = known.get(v)
        if spec is None:
            issues.append(f"{where}: undeclared variable {v!r}")
            dangling = True
        elif not spec.is_continuous:
            issues.append(f"{where}: {v!r} is discrete but listed in continuous_scope")
    if not dangling:
        sizes = tuple(known[v].domain_size or 0 for v in f.discrete_scope)
        if f.discrete_scope and tuple(f.shape) != sizes:
            issues.append(f"{where}: table shape {tuple(f.shape)} does not match domain sizes {sizes}")
        expected = int(np.prod(sizes)) if sizes else 1
        if len(f.table) != expected:
            issues.append(f"{where}: table has {len(f.table)} entries, expected {expected}")
    for e in f.table:
        extra = [v for v in e.variables if v not in f.continuous_scope]
        if extra:
            issues.append(f"{where}: expression uses {extra} outside continuous_scope")
        issues += [f"{where}: {p}" for p in e.problems()]
    return issues


def check_assignment(model: HybridModel, values: Mapping, names: Sequence[str]) -> None:
    for name in names:
        if name not in values:
            raise MisuseError(f"assignment is missing variable {name!r}")
        spec = model.spec(name)
        v = np.asarray(values[name], dtype=float)
        if spec.is_continuous:
            if np.any(~np.isfinite(v)) or np.any(v < 0.0) or np.any(v > 1.0):
                raise DomainError(f"value of {name!r} outside [0, 1]: {values[name]!r}")
        elif np.any(v != np.round(v)) or np.any(v < 0) or np.any(v >= spec.domain_size):
            raise DomainError(f"value of {name!r} outside 0..{spec.domain_size - 1}: {values[name]!r}")


def reward_values(model: HybridModel, values: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorized total reward; no domain checks."""
    total = np.float64(0.0)
    for r in model.rewards:
        total = total + r.evaluate(values)
    return np.asarray(total, dtype=float)


def eval_reward(model: HybridModel, x: Mapping, a: Mapping) -> float:
    values = {**x, **a}
    check_assignment(model, values, model.state_names + model.action_names)
    return float(reward_values(model, values))


def cpf_density(cpf: CPF, child_value, values) -> np.ndarray:
    """Density (continuous child) or probability (discrete child) of ``child_value``."""
    if isinstance(cpf, DiscriminantCPF):
        probs = cpf.probabilities(values)
        idx = np.asarray(child_value, dtype=np.intp)
        idx, probs = np.broadcast_arrays(idx[..., None], probs)
        return np.take_along_axis(probs, idx[..., :1], axis=-1)[..., 0]
    y = np.clip(np.asarray(child_value, dtype=float), DENSITY_EDGE, 1.0 - DENSITY_EDGE)
    out = np.float64(0.0)
    for w, a, b in cpf.beta_params(values):
        out = out + w * stats.beta.pdf(y, a, b)
    return np.asarray(out)


def transition_density(model: HybridModel, x_next: Mapping, x: Mapping, a: Mapping) -> float:
    values = {**x, **a}
    check_assignment(model, values, model.state_names + model.action_names)
    check_assignment(model, x_next, model.state_names)
    dens = 1.0
    for cpf in model.cpfs:
        dens *= float(cpf_density(cpf, x_next[cpf.child], values))
    return dens


def _sample_core(model: HybridModel, values, uniforms: np.ndarray,
                 gammas: Callable[[np.ndarray], np.ndarray]) -> dict[str, np.ndarray]:
    # uniforms: (n, n_cpfs), used for mixture-component and categorical choices
    n = uniforms.shape[0]
    shapes = []
    out: dict[str, np.ndarray] = {}
    continuous = []
    for j, cpf in enumerate(model.cpfs):
        u = uniforms[:, j]
        if isinstance(cpf, DiscriminantCPF):
            cum = np.broadcast_to(cpf.probabilities(values), (n, len(cpf.discriminants))).cumsum(axis=-1)
            idx = (cum < u[:, None] * cum[:, -1:]).sum(axis=-1)
            out[cpf.child] = np.minimum(idx, len(cpf.discriminants) - 1).astype(np.int64)
            continue
        comps = cpf.beta_params(values)
        a = np.broadcast_to(comps[0][1], (n,)).astype(float)
        b = np.broadcast_to(comps[0][2], (n,)).astype(float)
        if len(comps) > 1:
            edges = np.cumsum([w for w, _, _ in comps])
            pick = np.minimum(np.searchsorted(edges, u * edges[-1], side="right"), len(comps) - 1)
            for k, (_, ak, bk) in enumerate(comps):
                sel = pick == k
                a = np.where(sel, ak, a)
                b = np.where(sel, bk, b)
        shapes += [a, b]
        continuous.append(cpf.child)
    if continuous:
        g = gammas(np.stack(shapes, axis=1))
        for i, child in enumerate(continuous):
            ga, gb = g[:, 2 * i], g[:, 2 * i + 1]
            den = ga + gb
            out[child] = np.where(den > 0, ga / np.where(den > 0, den, 1.0), 0.5)
    return {v: out[v] for v in model.state_names}


def sample_transition(model: HybridModel, x: Mapping, a: Mapping, rng: np.random.Generator,
                      size: int | None = None) -> dict:
    """Draw the next state given ``(x, a)``.

    With ``size=None`` a single assignment of Python scalars is returned;
    otherwise a dict of arrays holding ``size`` independent draws.
    """
    values = {**x, **a}
    check_assignment(model, values, model.state_names + model.action_names)
    n = 1 if size is None else int(size)
    batch = {k: np.broadcast_to(np.asarray(v), (n,)) for k, v in values.items()}
    u = rng.random((n, len(model.cpfs)))
    nxt = _sample_core(model, batch, u, rng.standard_gamma)
    if size is None:
        return {k: (int(v[0]) if not model.spec(k).is_continuous else float(v[0])) for k, v in nxt.items()}
    return nxt


def sample_transition_streams(model: HybridModel, values: Mapping[str, np.ndarray],
                              rngs: Sequence[np.random.Generator]) -> dict[str, np.ndarray]:
    """Batch transition where row ``r`` draws only from ``rngs[r]``."""
    m = len(model.cpfs)
    u = np.stack([g.random(m) for g in rngs])

    def gammas(shape_matrix):
        return np.stack([g.standard_gamma(row) for g, row in zip(rngs, shape_matrix)])

    return _sample_core(model, values, u, gammas)


def uniform_states(model: HybridModel, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
    out = {}
    for v in model.state_vars:
        out[v.name] = rng.random(n) if v.is_continuous else rng.integers(0, v.domain_size, n)
    return out


def domain_values(spec: VariableSpec, count: int | None = None) -> np.ndarray:
    """Grid of ``count`` equally spaced values for continuous vars, full domain otherwise."""
    if spec.is_continuous:
        if count is None or count < 2:
            raise MisuseError(f"continuous variable {spec.name!r} needs a grid count >= 2")
        return np.arange(count) / (count - 1)
    return np.arange(spec.domain_size)


def reward_bound(model: HybridModel) -> float:
    """Upper bound on |R(x, a)| from per-factor interval bounds."""
    total = 0.0
    for r in model.rewards:
        lo, hi = r.bounds()
        total += max(abs(lo), abs(hi))
    return total

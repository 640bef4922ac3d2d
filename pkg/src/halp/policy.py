"""Acting with a value function, simulating controllers and exact baselines.

Controllers share one interface: ``act(states, rng)`` takes a batch of
states as ``{name: array}`` and returns the batch of chosen actions in the
same layout. ``rollout`` drives any controller through the model's own
transition sampler.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import costnet
from .basis import BasisFunction, backproject, expected_expr
from .errors import BudgetExceededError, MisuseError
from .halp import EpsGrid
from .model import (HybridModel, ScopedFunction, cpf_density, reward_values,
                    sample_transition_streams, uniform_states)

DENSE_ACTION_LIMIT = 4096


def q_value(model: HybridModel, basis: Sequence[BasisFunction], w, x: Mapping, a: Mapping) -> float:
    """R(x, a) + discount * sum_i w_i g_i(x, a)."""
    w = np.asarray(w, dtype=float)
    if w.shape != (len(basis),):
        raise MisuseError(f"got {w.size} weights for {len(basis)} basis functions")
    values = {**x, **a}
    total = float(reward_values(model, values))
    if model.discount:
        total += model.discount * sum(float(wi * backproject(model, f).evaluate(values))
                                      for wi, f in zip(w, basis))
    return total


def _batch_size(states: Mapping[str, np.ndarray]) -> int:
    return int(np.asarray(next(iter(states.values()))).shape[0]) if states else 1


class _ActionTables:
    """Per-state tables over small action sub-grids whose sum is a score.

    ``terms`` are callables of a value dict with an action scope each; their
    tables are summed per scope so the joint score decomposes into factors.
    """

    def __init__(self, model: HybridModel, grid: EpsGrid, terms: Sequence[tuple[tuple[str, ...], Callable]]):
        self.grid = grid
        self.sizes = grid.sizes
        self.terms = [(tuple(sorted(grid.axis(v) for v in scope)), fn) for scope, fn in terms]

    def factors(self, states: Mapping[str, np.ndarray]) -> list[tuple[tuple[int, ...], np.ndarray]]:
        n = _batch_size(states)
        by_scope: dict[tuple[int, ...], np.ndarray] = {}
        for axes, fn in self.terms:
            if not axes:
                continue
            k = len(axes)
            values = {s: np.asarray(x).reshape((n,) + (1,) * k) for s, x in states.items()}
            for j, u in enumerate(axes):
                shape = [1] * (k + 1)
                shape[j + 1] = self.sizes[u]
                values[self.grid.names[u]] = np.asarray(self.grid.values[u]).reshape(shape)
            table = np.broadcast_to(fn(values), (n,) + tuple(self.sizes[u] for u in axes))
            by_scope[axes] = by_scope.get(axes, 0.0) + table
        return list(by_scope.items())

    def joint_count(self) -> int:
        return int(np.prod(self.sizes, dtype=float))

    def best(self, states, mode: str = "exhaustive", starts: Sequence[Sequence[int]] = ()) -> np.ndarray:
        """Index of the best joint action per state, shape (n, n_action_vars)."""
        n = _batch_size(states)
        factors = self.factors(states)
        if mode == "exhaustive" and self.joint_count() <= DENSE_ACTION_LIMIT:
            total = np.zeros((n,) + tuple(self.sizes))
            full = tuple(range(len(self.sizes)))
            for axes, table in factors:
                shape = [n] + [self.sizes[u] if u in axes else 1 for u in full]
                total = total + table.reshape(shape)
            flat = total.reshape(n, -1).argmax(axis=1)
            return np.stack(np.unravel_index(flat, self.sizes), axis=1) if self.sizes else np.zeros((n, 0), int)
        out = np.zeros((n, len(self.sizes)), dtype=np.int64)
        for s in range(n):
            fs = [(axes, table[s]) for axes, table in factors]
            if mode == "exhaustive":
                out[s] = costnet.max_sum(fs, self.sizes)[1]
            else:
                best_v, best_z = -np.inf, None
                for z0 in starts:
                    v, z = costnet.coordinate_ascent(fs, self.sizes, z0)
                    if v > best_v or (v == best_v and z < best_z):
                        best_v, best_z = v, z
                out[s] = best_z
        return out

    def values_of(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        return {name: np.asarray(vals)[idx[:, j]] for j, (name, vals) in enumerate(zip(self.grid.names, self.grid.values))}


def _action_grid(model: HybridModel, eps: float) -> EpsGrid:
    return EpsGrid.for_model(model, eps, model.action_names)


def _action_scope(model: HybridModel, scope) -> tuple[str, ...]:
    return tuple(v for v in scope if model.is_action(v))


@dataclass
class GreedyPolicy:
    """Acts greedily with respect to the one-step lookahead under ``Hw``.

    ``search`` is ``"exhaustive"`` or ``"coordinate_ascent"``; ties in the
    exhaustive dense search go to the first joint action in grid order.
    """

    model: HybridModel
    basis: Sequence[BasisFunction]
    w: np.ndarray
    eps: float = 0.25
    search: str = "exhaustive"
    restarts: int = 5
    seed: int = 0
    name: str = "greedy"

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.shape != (len(self.basis),):
            raise MisuseError(f"got {self.w.size} weights for {len(self.basis)} basis functions")
        if self.search not in ("exhaustive", "coordinate_ascent"):
            raise MisuseError(f"unknown action search {self.search!r}")
        self.grid = _action_grid(self.model, self.eps)
        gamma = self.model.discount
        terms = [(_action_scope(self.model, r.scope), r.evaluate) for r in self.model.rewards]
        for wi, f in zip(self.w, self.basis):
            if wi == 0.0 or gamma == 0.0:
                continue
            g = backproject(self.model, f)
            terms.append((_action_scope(self.model, g.scope), lambda v, g=g, c=gamma * wi: c * g.evaluate(v)))
        self.tables = _ActionTables(self.model, self.grid, terms)
        rng = np.random.default_rng(self.seed)
        sizes = self.grid.sizes
        self.starts = [tuple(0 for _ in sizes)] + [tuple(int(rng.integers(0, s)) for s in sizes)
                                                   for _ in range(max(self.restarts - 1, 0))]

    def act(self, states: Mapping[str, np.ndarray], rng: np.random.Generator | None = None):
        mode = "exhaustive" if self.search == "exhaustive" else "coordinate"
        return self.tables.values_of(self.tables.best(states, mode, self.starts))


def greedy_action(policy: GreedyPolicy, x: Mapping) -> dict:
    states = {v: np.atleast_1d(x[v]) for v in policy.model.state_names}
    acts = policy.act(states)
    return {v: (float(a[0]) if policy.model.spec(v).is_continuous else int(a[0])) for v, a in acts.items()}


# ---------------------------------------------------------------------------
# heuristic baselines


def _expected_scoped(model: HybridModel, r: ScopedFunction, values: Mapping[str, np.ndarray]) -> np.ndarray:
    """E[r(X', a) | x, a]: next-state variables in scope are random, actions fixed."""
    state = set(model.state_names)
    random = {v: model.cpf(v).beta_params(values) for v in r.continuous_scope if v in state}
    fixed = {v: np.asarray(values[v]) for v in r.scope if v not in state or v in r.discrete_scope}
    d_state = [v for v in r.discrete_scope if v in state]
    probs = {v: model.cpf(v).probabilities(values) for v in d_state}
    entries = [expected_expr(e, random, fixed) for e in r.table]
    if not r.discrete_scope:
        return np.asarray(entries[0], dtype=float)
    total = 0.0
    domains = [range(model.spec(v).domain_size) for v in d_state]
    for combo in itertools.product(*domains):
        weight = np.float64(1.0)
        assign = dict(fixed)
        for v, k in zip(d_state, combo):
            weight = weight * probs[v][..., k]
            assign[v] = np.asarray(k)
        parts = [np.asarray(assign[v]).astype(np.intp) for v in r.discrete_scope]
        parts = np.broadcast_arrays(*parts)
        idx = np.ravel_multi_index(tuple(parts), r.shape)
        chosen = np.choose(idx, [np.broadcast_to(e, idx.shape) for e in entries]) if len(entries) > 1 \
            else np.asarray(entries[0])
        total = total + weight * chosen
    return np.asarray(total, dtype=float)


def expected_next_reward(model: HybridModel, values: Mapping[str, np.ndarray]) -> np.ndarray:
    """One-step expected reward E[R(X', a) | x, a], in closed form or by quadrature."""
    total = np.float64(0.0)
    for r in model.rewards:
        total = total + _expected_scoped(model, r, values)
    return np.asarray(total)


def _expected_scope(model: HybridModel, r: ScopedFunction) -> tuple[str, ...]:
    names: dict[str, None] = {}
    for v in r.scope:
        if model.is_action(v):
            names.setdefault(v)
        else:
            for p in model.cpf(v).parents:
                names.setdefault(p)
    return model.order(names)


@dataclass
class RandomController:
    model: HybridModel
    eps: float = 0.25
    name: str = "random"

    def __post_init__(self):
        self.grid = _action_grid(self.model, self.eps)

    def act(self, states, rng: np.random.Generator):
        n = _batch_size(states)
        return {name: np.asarray(vals)[rng.integers(0, len(vals), n)]
                for name, vals in zip(self.grid.names, self.grid.values)}


@dataclass
class LocalController:
    """Each action variable picks the value maximizing the one-step expected
    reward of the reward factors it affects, the others held at their first
    grid value."""

    model: HybridModel
    eps: float = 0.25
    name: str = "local"

    def __post_init__(self):
        self.grid = _action_grid(self.model, self.eps)
        self.touching = {a: [r for r in self.model.rewards if a in _expected_scope(self.model, r)]
                         for a in self.grid.names}

    def act(self, states, rng=None):
        n = _batch_size(states)
        out = {}
        defaults = {name: vals[0] for name, vals in zip(self.grid.names, self.grid.values)}
        for name, vals in zip(self.grid.names, self.grid.values):
            vals = np.asarray(vals)
            if not self.touching[name]:
                out[name] = np.full(n, vals[0])
                continue
            values = {s: np.asarray(x)[:, None] for s, x in states.items()}
            values.update({a: np.asarray(d) for a, d in defaults.items()})
            values[name] = vals[None, :]
            score = sum(np.broadcast_to(_expected_scoped(self.model, r, values), (n, len(vals)))
                        for r in self.touching[name])
            out[name] = vals[np.argmax(score, axis=1)]
        return out


@dataclass
class GlobalController:
    """Scores ``trials`` distinct random joint actions per state by one-step
    expected reward and keeps the best; every joint action when ``trials``
    covers them all."""

    model: HybridModel
    trials: int = 1
    eps: float = 0.25
    name: str = ""

    def __post_init__(self):
        if self.trials < 1:
            raise MisuseError("trials must be at least 1")
        self.grid = _action_grid(self.model, self.eps)
        self.name = self.name or f"global-{self.trials}"

    def act(self, states, rng: np.random.Generator):
        n = _batch_size(states)
        sizes = self.grid.sizes
        count = int(np.prod(sizes, dtype=object))
        if self.trials >= count:
            flat = np.broadcast_to(np.arange(count), (n, count))
        else:
            flat = np.stack([rng.choice(count, self.trials, replace=False) for _ in range(n)])
        idx = np.stack(np.unravel_index(flat, sizes), axis=-1) if sizes else np.zeros(flat.shape + (0,), int)
        values = {s: np.asarray(x)[:, None] for s, x in states.items()}
        for j, (name, vals) in enumerate(zip(self.grid.names, self.grid.values)):
            values[name] = np.asarray(vals)[idx[..., j]]
        score = np.broadcast_to(expected_next_reward(self.model, values), flat.shape)
        best = np.argmax(score, axis=1)
        rows = np.arange(n)
        return {name: values[name][rows, best] for name in self.grid.names}


def heuristic_controller(model: HybridModel, kind: str, trials: int = 1, eps: float = 0.25):
    if kind == "random":
        return RandomController(model, eps)
    if kind == "local":
        return LocalController(model, eps)
    if kind == "global":
        return GlobalController(model, trials, eps)
    raise MisuseError(f"unknown heuristic {kind!r}")


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutReport:
    name: str
    mean: float
    std: float
    n_traj: int
    horizon: int
    seed: int
    average: np.ndarray = field(repr=False)
    discounted: np.ndarray = field(repr=False)
    undiscounted: np.ndarray = field(repr=False)

    @property
    def stderr(self) -> float:
        return self.std / np.sqrt(self.n_traj)

    def to_dict(self) -> dict:
        return {"name": self.name, "mean": self.mean, "std": self.std, "n_traj": self.n_traj,
                "horizon": self.horizon, "seed": self.seed,
                "discounted": self.discounted.tolist(), "undiscounted": self.undiscounted.tolist()}


def pooled_stderr(a: RolloutReport, b: RolloutReport) -> float:
    return float(np.sqrt(a.std ** 2 / a.n_traj + b.std ** 2 / b.n_traj))


def rollout(model: HybridModel, controller, n_traj: int = 100, horizon: int = 100, seed: int = 0,
            initial: Callable[[np.random.Generator, int], dict] | None = None) -> RolloutReport:
    """Simulate ``n_traj`` trajectories; mean and std are over per-trajectory
    average rewards. The initial states depend only on ``seed``, so every
    controller run with the same seed starts from the same states."""
    if horizon < 1 or n_traj < 1:
        raise MisuseError("horizon and n_traj must be at least 1")
    children = np.random.SeedSequence(seed).spawn(n_traj + 2)
    init_rng = np.random.default_rng(children[0])
    ctrl_rng = np.random.default_rng(children[1])
    streams = [np.random.default_rng(c) for c in children[2:]]
    x = (initial or (lambda g, n: uniform_states(model, g, n)))(init_rng, n_traj)
    total = np.zeros(n_traj)
    discounted = np.zeros(n_traj)
    scale = 1.0
    for _ in range(horizon):
        a = controller.act(x, ctrl_rng)
        values = {**x, **a}
        r = np.broadcast_to(reward_values(model, values), (n_traj,))
        total += r
        discounted += scale * r
        scale *= model.discount
        x = sample_transition_streams(model, values, streams)
    average = total / horizon
    std = float(average.std(ddof=1)) if n_traj > 1 else 0.0
    return RolloutReport(getattr(controller, "name", type(controller).__name__), float(average.mean()), std,
                         n_traj, horizon, seed, average, discounted, total)


# ---------------------------------------------------------------------------
# fully discretized models


@dataclass
class DiscreteMDP:
    """P[a, s, s'] and R[a, s] over an enumerated state and action grid."""

    P: np.ndarray
    R: np.ndarray
    discount: float
    states: EpsGrid | None = None
    actions: EpsGrid | None = None


MAX_STATES = 1_000_000
MAX_KERNEL = 50_000_000


def _joint(grid: EpsGrid) -> dict[str, np.ndarray]:
    if not grid.names:
        return {}
    mesh = np.meshgrid(*[np.asarray(v) for v in grid.values], indexing="ij")
    return {n: m.ravel() for n, m in zip(grid.names, mesh)}


def discretize(model: HybridModel, eps: float) -> DiscreteMDP:
    """Restrict the model to its eps-grid; each child's densities at the grid
    values are normalized to a distribution over those values."""
    sgrid = EpsGrid.for_model(model, eps, model.state_names)
    agrid = EpsGrid.for_model(model, eps, model.action_names)
    S = int(np.prod(sgrid.sizes, dtype=float))
    A = int(np.prod(agrid.sizes, dtype=float))
    if S > MAX_STATES or S * S * A > MAX_KERNEL:
        raise BudgetExceededError(f"discretized model has {S} states and {A} actions; too large to enumerate")
    xs = _joint(sgrid)
    acts = _joint(agrid)
    values = {k: v[None, :] for k, v in xs.items()}
    values.update({k: v[:, None] for k, v in acts.items()})
    R = np.broadcast_to(reward_values(model, values), (A, S)).copy()
    P = np.ones((A, S, 1))
    for name, vals in zip(sgrid.names, sgrid.values):
        cpf = model.cpf(name)
        child = np.asarray(vals)
        q = cpf_density(cpf, child.reshape(1, 1, -1), {k: v[..., None] for k, v in values.items()})
        q = np.broadcast_to(q, (A, S, len(child)))
        q = q / q.sum(axis=-1, keepdims=True)
        P = (P[..., :, None] * q[..., None, :]).reshape(A, S, -1)
    return DiscreteMDP(P, R, model.discount, sgrid, agrid)


def bellman_backup(mdp: DiscreteMDP, V: np.ndarray) -> np.ndarray:
    """Q[a, s] = R[a, s] + discount * sum_s' P[a, s, s'] V[s']."""
    return mdp.R + mdp.discount * mdp.P @ V


def value_iteration(mdp: DiscreteMDP, tol: float = 1e-8, max_iter: int = 1_000_000):
    """Iterate to a sup-norm Bellman residual at most ``tol``; returns (V, policy)."""
    V = np.zeros(mdp.R.shape[1])
    for _ in range(max_iter):
        TV = bellman_backup(mdp, V).max(axis=0)
        if np.max(np.abs(TV - V)) <= tol:
            return V, bellman_backup(mdp, V).argmax(axis=0)
        V = TV
    raise BudgetExceededError(f"value iteration did not reach residual {tol} in {max_iter} sweeps", V)


def bellman_infeasibility(mdp: DiscreteMDP, V: np.ndarray) -> float:
    """max over (s, a) of R + discount * P V - V, floored at 0."""
    return max(float((bellman_backup(mdp, V) - V).max()), 0.0)


def discrete_states(mdp: DiscreteMDP) -> dict[str, np.ndarray]:
    return _joint(mdp.states)


@dataclass
class TableController:
    """Looks up a grid policy at the nearest grid state."""

    mdp: DiscreteMDP
    policy: np.ndarray
    name: str = "value-iteration"

    def act(self, states, rng=None):
        sg = self.mdp.states
        idx = [sg.nearest(n, np.asarray(states[n], dtype=float)) for n in sg.names]
        s = np.ravel_multi_index(tuple(idx), sg.sizes) if idx else np.zeros(_batch_size(states), int)
        a = self.policy[s]
        ag = self.mdp.actions
        if not ag.names:
            return {}
        parts = np.unravel_index(a, ag.sizes)
        return {n: np.asarray(vals)[p] for n, vals, p in zip(ag.names, ag.values, parts)}

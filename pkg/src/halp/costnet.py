"""Maximization of a sum of small tables over a finite grid.

A factor is ``(scope, table)`` where ``scope`` is a sorted tuple of axis
indices and ``table`` has one dimension per scope entry. ``max_sum`` finds
the exact maximum of the sum by variable elimination, so its cost grows with
the width of the factor graph rather than the size of the grid.
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np

Factor = tuple[tuple[int, ...], np.ndarray]


def _expand(scope, table, union, sizes):
    shape = [sizes[u] if u in scope else 1 for u in union]
    return np.asarray(table).reshape(shape)


def merge(factors: Sequence[Factor], sizes: Sequence[int]) -> list[Factor]:
    """Sum factors with identical scopes and fold subset scopes into supersets."""
    by_scope: dict[tuple[int, ...], np.ndarray] = {}
    for scope, table in factors:
        scope = tuple(scope)
        if scope in by_scope:
            by_scope[scope] = by_scope[scope] + table
        else:
            by_scope[scope] = np.array(table, dtype=float)
    scopes = sorted(by_scope, key=lambda s: (-len(s), s))
    kept: list[tuple[int, ...]] = []
    for s in scopes:
        host = next((k for k in kept if set(s) <= set(k)), None)
        if host is None:
            kept.append(s)
        else:
            by_scope[host] = by_scope[host] + _expand(s, by_scope[s], host, sizes)
    return [(s, by_scope[s]) for s in kept]


def elimination_order(factors: Sequence[Factor], sizes: Sequence[int]) -> list[int]:
    """Greedy order: always eliminate the variable creating the smallest table."""
    return list(_order(tuple(tuple(s) for s, _ in factors), tuple(sizes)))


@lru_cache(maxsize=256)
def _order(scope_list: tuple[tuple[int, ...], ...], sizes: tuple[int, ...]) -> tuple[int, ...]:
    # depends on scopes only, so repeated searches over the same graph reuse it
    scopes = [set(s) for s in scope_list]
    remaining = set().union(*scopes) if scopes else set()
    order = []
    while remaining:
        best, best_cost = None, None
        for v in sorted(remaining):
            union = set().union(*(s for s in scopes if v in s))
            cost = math.prod(sizes[u] for u in union)
            if best_cost is None or cost < best_cost:
                best, best_cost = v, cost
        touching = [s for s in scopes if best in s]
        union = set().union(*touching) - {best}
        scopes = [s for s in scopes if best not in s] + [union]
        remaining.discard(best)
        order.append(best)
    return tuple(order)


def max_sum(factors: Sequence[Factor], sizes: Sequence[int]) -> tuple[float, tuple[int, ...]]:
    """Exact ``max_z sum_f f(z)`` and a maximizing assignment.

    During decoding each variable takes the lowest index attaining its
    conditional maximum; variables that appear in no factor take index 0.
    """
    factors = merge(factors, sizes)
    constant = 0.0
    live = []
    for scope, table in factors:
        if scope:
            live.append((scope, table))
        else:
            constant += float(table)
    trace = []
    for v in elimination_order(live, sizes):
        touching = [f for f in live if v in f[0]]
        live = [f for f in live if v not in f[0]]
        union = tuple(sorted(set().union(*(s for s, _ in touching))))
        combined = sum(_expand(s, t, union, sizes) for s, t in touching)
        combined = np.broadcast_to(combined, tuple(sizes[u] for u in union))
        axis = union.index(v)
        rest = union[:axis] + union[axis + 1:]
        trace.append((v, rest, np.argmax(combined, axis=axis)))
        reduced = combined.max(axis=axis)
        if rest:
            live.append((rest, reduced))
        else:
            constant += float(reduced)
    for s, t in live:
        constant += float(t)
    z = [0] * len(sizes)
    for v, rest, arg in reversed(trace):
        z[v] = int(arg[tuple(z[u] for u in rest)])
    return constant, tuple(z)


def evaluate(factors: Sequence[Factor], z: Sequence[int]) -> float:
    return float(sum(t[tuple(z[u] for u in s)] for s, t in factors))


def coordinate_ascent(factors: Sequence[Factor], sizes: Sequence[int], start: Sequence[int]):
    """Local maximum reached by exact line maximization along one axis at a time."""
    touching: dict[int, list[Factor]] = {v: [] for v in range(len(sizes))}
    for f in factors:
        for v in f[0]:
            touching[v].append(f)
    z = list(start)
    improved = True
    while improved:
        improved = False
        for v in range(len(sizes)):
            if not touching[v]:
                continue
            along = np.zeros(sizes[v])
            for scope, table in touching[v]:
                along = along + table[tuple(slice(None) if u == v else z[u] for u in scope)]
            j = int(np.argmax(along))
            gain = along[j] - along[z[v]]
            if gain > 0:
                z[v] = j
                improved = True
    return evaluate(factors, z), tuple(z)


def dense_table(factors: Sequence[Factor], sizes: Sequence[int]) -> np.ndarray:
    """Materialize the full sum over the whole grid (small grids only)."""
    axes = tuple(range(len(sizes)))
    total = np.zeros(tuple(sizes))
    for scope, table in factors:
        total = total + _expand(scope, table, axes, sizes)
    return total

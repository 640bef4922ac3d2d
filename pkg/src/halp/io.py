"""JSON documents for models, basis sets and solutions.

Parsing failures raise ``ParseError`` naming the file with line and column
for malformed JSON, or a ``$.path.to[0].field`` location for documents that
are valid JSON but do not fit the schema. Writers emit sorted keys and
``repr``-exact floats, so parse then serialize is the identity.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .basis import (BasisFunction, BetaMarginal, Categorical, DiscreteFactor, MonomialFactor,
                    PiecewiseLinearFactor, StateRelevanceDensity, Uniform)
from .errors import ParseError
from .expr import Constant, GaussianMixture, PiecewiseLinear, Polynomial
from .model import (CONTINUOUS, DISCRETE, BetaCPF, DiscriminantCPF, HybridModel, MixtureBetaCPF,
                    ScopedFunction, VariableSpec)


class _Node:
    """A JSON value plus its location, for schema error messages."""

    def __init__(self, value: Any, path: str, source: str):
        self.value = value
        self.path = path
        self.source = source

    def fail(self, msg: str):
        raise ParseError(f"{self.source}: {self.path}: {msg}")

    def __getitem__(self, key) -> "_Node":
        if isinstance(key, int):
            items = self.list()
            if key >= len(items):
                self.fail(f"missing element {key}")
            return items[key]
        if not isinstance(self.value, dict):
            self.fail("expected an object")
        if key not in self.value:
            self.fail(f"missing key {key!r}")
        return _Node(self.value[key], f"{self.path}.{key}", self.source)

    def get(self, key, default=None):
        if not isinstance(self.value, dict):
            self.fail("expected an object")
        return self[key] if key in self.value else _Node(default, f"{self.path}.{key}", self.source)

    def has(self, key) -> bool:
        return isinstance(self.value, dict) and key in self.value

    def list(self) -> list["_Node"]:
        if not isinstance(self.value, list):
            self.fail("expected an array")
        return [_Node(v, f"{self.path}[{i}]", self.source) for i, v in enumerate(self.value)]

    def items(self) -> list[tuple[str, "_Node"]]:
        if not isinstance(self.value, dict):
            self.fail("expected an object")
        return [(k, _Node(v, f"{self.path}.{k}", self.source)) for k, v in self.value.items()]

    def str(self) -> str:
        if not isinstance(self.value, str):
            self.fail("expected a string")
        return self.value

    def num(self) -> float:
        if isinstance(self.value, bool) or not isinstance(self.value, (int, float)):
            self.fail("expected a number")
        return float(self.value)

    def int(self) -> int:
        if isinstance(self.value, bool) or not isinstance(self.value, int):
            self.fail("expected an integer")
        return self.value

    def nums(self) -> tuple[float, ...]:
        return tuple(n.num() for n in self.list())

    def strs(self) -> tuple[str, ...]:
        return tuple(n.str() for n in self.list())


def _load(text: str, source: str) -> _Node:
    try:
        return _Node(json.loads(text), "$", source)
    except json.JSONDecodeError as err:
        raise ParseError(f"{source}:{err.lineno}:{err.colno}: {err.msg}") from None


def _read(path) -> _Node:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ParseError(f"{path}: cannot read file: {err.strerror}") from None
    return _load(text, str(path))


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# expressions and scoped functions


def expr_to_json(e) -> dict:
    if isinstance(e, Constant):
        return {"form": "constant", "value": e.value}
    if isinstance(e, Polynomial):
        return {"form": "polynomial",
                "terms": [{"coef": c, "degrees": {v: m for v, m in degs}} for c, degs in e.terms]}
    if isinstance(e, PiecewiseLinear):
        return {"form": "piecewise_linear",
                "pieces": [{"var": v, "knots": list(k), "values": list(y)} for v, k, y in e.pieces]}
    if isinstance(e, GaussianMixture):
        return {"form": "gaussian_mixture",
                "components": [{"var": v, "weights": list(w), "means": list(m), "variances": list(s)}
                               for v, w, m, s in e.components]}
    raise TypeError(f"cannot serialize {type(e).__name__}")


def _expr(node: _Node):
    form = node["form"].str()
    if form == "constant":
        return Constant(node["value"].num())
    if form == "polynomial":
        terms = []
        for t in node["terms"].list():
            degs = tuple((v, d.int()) for v, d in t["degrees"].items())
            terms.append((t["coef"].num(), degs))
        return Polynomial(tuple(terms))
    if form == "piecewise_linear":
        return PiecewiseLinear(tuple((p["var"].str(), p["knots"].nums(), p["values"].nums())
                                     for p in node["pieces"].list()))
    if form == "gaussian_mixture":
        return GaussianMixture(tuple((c["var"].str(), c["weights"].nums(), c["means"].nums(), c["variances"].nums())
                                     for c in node["components"].list()))
    node["form"].fail(f"unknown expression form {form!r}")


def scoped_to_json(f: ScopedFunction) -> dict:
    return {"discrete_scope": list(f.discrete_scope), "shape": list(f.shape),
            "continuous_scope": list(f.continuous_scope), "table": [expr_to_json(e) for e in f.table]}


def _scoped(node: _Node) -> ScopedFunction:
    if isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return ScopedFunction.const(node.num())
    if node.has("form"):
        return ScopedFunction.of(_expr(node))
    return ScopedFunction(node.get("discrete_scope", []).strs(), node.get("continuous_scope", []).strs(),
                          tuple(_expr(e) for e in node["table"].list()),
                          tuple(n.int() for n in node.get("shape", []).list()))


# ---------------------------------------------------------------------------
# models


def _var_to_json(v: VariableSpec) -> dict:
    out = {"name": v.name, "kind": v.kind}
    if v.domain_size is not None:
        out["domain_size"] = v.domain_size
    return out


def _var(node: _Node) -> VariableSpec:
    kind = node["kind"].str()
    if kind not in (CONTINUOUS, DISCRETE):
        node["kind"].fail(f"unknown variable kind {kind!r}")
    size = node["domain_size"].int() if node.has("domain_size") else None
    return VariableSpec(node["name"].str(), kind, size)


def _beta_to_json(c: BetaCPF) -> dict:
    return {"h1": scoped_to_json(c.h1), "h2": scoped_to_json(c.h2), "floor": c.floor}


def cpf_to_json(c) -> dict:
    if isinstance(c, BetaCPF):
        return {"type": "beta", "child": c.child, **_beta_to_json(c)}
    if isinstance(c, MixtureBetaCPF):
        return {"type": "mixture_beta", "child": c.child,
                "components": [{"weight": w, **_beta_to_json(b)} for w, b in c.components]}
    if isinstance(c, DiscriminantCPF):
        return {"type": "discriminant", "child": c.child, "floor": c.floor,
                "discriminants": [scoped_to_json(d) for d in c.discriminants]}
    raise TypeError(f"cannot serialize {type(c).__name__}")


def _beta(node: _Node, child: str) -> BetaCPF:
    floor = node["floor"].num() if node.has("floor") else 1e-3
    return BetaCPF(child, _scoped(node["h1"]), _scoped(node["h2"]), floor)


def _cpf(node: _Node):
    kind = node["type"].str()
    child = node["child"].str()
    if kind == "beta":
        return _beta(node, child)
    if kind == "mixture_beta":
        return MixtureBetaCPF(child, tuple((c["weight"].num(), _beta(c, child)) for c in node["components"].list()))
    if kind == "discriminant":
        floor = node["floor"].num() if node.has("floor") else 1e-3
        return DiscriminantCPF(child, tuple(_scoped(d) for d in node["discriminants"].list()), floor)
    node["type"].fail(f"unknown CPF type {kind!r}")


def model_to_json(model: HybridModel) -> dict:
    return {"state_vars": [_var_to_json(v) for v in model.state_vars],
            "action_vars": [_var_to_json(v) for v in model.action_vars],
            "cpfs": [cpf_to_json(c) for c in model.cpfs],
            "rewards": [scoped_to_json(r) for r in model.rewards],
            "discount": model.discount}


def _model(node: _Node) -> HybridModel:
    return HybridModel(tuple(_var(v) for v in node["state_vars"].list()),
                       tuple(_var(v) for v in node.get("action_vars", []).list()),
                       tuple(_cpf(c) for c in node["cpfs"].list()),
                       tuple(_scoped(r) for r in node["rewards"].list()),
                       node["discount"].num())


def parse_model(text: str, source: str = "<model>") -> HybridModel:
    return _model(_load(text, source))


def load_model(path) -> HybridModel:
    return _model(_read(path))


def dump_model(model: HybridModel) -> str:
    return dumps(model_to_json(model))


# ---------------------------------------------------------------------------
# basis sets


def basis_function_to_json(f: BasisFunction) -> dict:
    d = f.discrete
    out: dict = {"name": f.name,
                 "discrete_factor": {"scope": list(d.scope), "shape": list(d.shape), "table": list(d.table)}}
    if isinstance(f.continuous, MonomialFactor):
        out["continuous_factor"] = {"form": "monomial", "degrees": {v: m for v, m in f.continuous.degrees}}
    else:
        out["continuous_factor"] = {"form": "piecewise_linear",
                                    "pieces": [{"var": v, "knots": list(k), "values": list(y)}
                                               for v, k, y in f.continuous.pieces]}
    return out


def _basis_function(node: _Node) -> BasisFunction:
    if node.has("discrete_factor"):
        d = node["discrete_factor"]
        discrete = DiscreteFactor(d.get("scope", []).strs(), tuple(n.int() for n in d.get("shape", []).list()),
                                  d.get("table", [1.0]).nums())
    else:
        discrete = DiscreteFactor()
    if node.has("continuous_factor"):
        c = node["continuous_factor"]
        form = c["form"].str()
        if form == "monomial":
            cont = MonomialFactor(tuple((v, m.int()) for v, m in c["degrees"].items()))
        elif form == "piecewise_linear":
            cont = PiecewiseLinearFactor(tuple((p["var"].str(), p["knots"].nums(), p["values"].nums())
                                               for p in c["pieces"].list()))
        else:
            c["form"].fail(f"unknown continuous factor form {form!r}")
    else:
        cont = MonomialFactor()
    name = node["name"].str() if node.has("name") else ""
    return BasisFunction(discrete, cont, name)


def relevance_to_json(psi: StateRelevanceDensity) -> list:
    out = []
    for v, m in psi.marginals:
        if isinstance(m, Uniform):
            out.append({"var": v, "kind": "uniform"})
        elif isinstance(m, BetaMarginal):
            out.append({"var": v, "kind": "beta", "a": m.a, "b": m.b})
        else:
            out.append({"var": v, "kind": "categorical", "probs": list(m.probs)})
    return out


def _relevance(node: _Node) -> StateRelevanceDensity:
    out = []
    for m in node.list():
        kind = m["kind"].str()
        if kind == "uniform":
            marginal = Uniform()
        elif kind == "beta":
            marginal = BetaMarginal(m["a"].num(), m["b"].num())
        elif kind == "categorical":
            marginal = Categorical(m["probs"].nums())
        else:
            m["kind"].fail(f"unknown marginal kind {kind!r}")
        out.append((m["var"].str(), marginal))
    return StateRelevanceDensity(tuple(out))


def basis_to_json(basis: Sequence[BasisFunction], psi: StateRelevanceDensity | None = None) -> dict:
    out: dict = {"basis": [basis_function_to_json(f) for f in basis]}
    if psi is not None:
        out["relevance"] = relevance_to_json(psi)
    return out


def _basis(node: _Node):
    basis = [_basis_function(f) for f in node["basis"].list()]
    psi = _relevance(node["relevance"]) if node.has("relevance") else None
    return basis, psi


def parse_basis(text: str, source: str = "<basis>"):
    """Return ``(basis functions, relevance density or None)``."""
    return _basis(_load(text, source))


def load_basis(path):
    return _basis(_read(path))


def dump_basis(basis: Sequence[BasisFunction], psi: StateRelevanceDensity | None = None) -> str:
    return dumps(basis_to_json(basis, psi))


def basis_ref(basis: Sequence[BasisFunction]) -> str:
    """Content hash of a basis set, stored in solutions to catch mismatches."""
    canonical = json.dumps([basis_function_to_json(f) for f in basis], sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# solutions


def solution_to_json(solution, basis: Sequence[BasisFunction]) -> dict:
    """Solution document; wall-clock times are left out so output is reproducible."""
    diag = {k: v for k, v in solution.diagnostics.items() if k != "wall_time"}
    return {"weights": [float(x) for x in np.asarray(solution.w)], "objective": float(solution.objective),
            "eps": float(solution.eps), "measured_delta": float(solution.measured_delta),
            "delta_kind": solution.delta_kind, "basis_ref": basis_ref(basis), "diagnostics": diag}


def parse_solution(text: str, source: str = "<solution>") -> dict:
    node = _load(text, source)
    return {"weights": np.asarray(node["weights"].nums()), "objective": node["objective"].num(),
            "eps": node["eps"].num(), "measured_delta": node["measured_delta"].num(),
            "delta_kind": node.get("delta_kind", "grid").str(), "basis_ref": node["basis_ref"].str(),
            "diagnostics": node.get("diagnostics", {}).value}


def load_solution(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ParseError(f"{path}: cannot read file: {err.strerror}") from None
    return parse_solution(text, str(path))

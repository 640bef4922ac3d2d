"""Factored basis functions, their backprojections and relevance weights.

A basis function is the product of a table over a few discrete state
variables and a continuous factor (a monomial or a product of 1-D
piecewise-linear pieces). Under beta transition models both continuous
factors have closed-form conditional expectations: Gamma-function ratios for
monomials and incomplete-beta sums for piecewise-linear pieces.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from string import ascii_letters
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.special import betainc, betaln, gammaln

from .errors import MisuseError
from .expr import Constant, GaussianMixture, PiecewiseLinear, Polynomial
from .model import (BetaCPF, DiscriminantCPF, HybridModel, MixtureBetaCPF,
                    ScopedFunction)

GL_NODES = 96


# ---------------------------------------------------------------------------
# beta expectations


def beta_moment(a, b, m: int) -> np.ndarray:
    """E[X**m] for X ~ Beta(a, b), via log-gamma to stay finite for large a + b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if m == 0:
        return np.ones(np.broadcast_shapes(a.shape, b.shape))
    return np.exp(gammaln(a + b) + gammaln(a + m) - gammaln(a + b + m) - gammaln(a))


def beta_pwl_expectation(a, b, knots: Sequence[float], values: Sequence[float]) -> np.ndarray:
    """E[p(X)] for X ~ Beta(a, b) and p the piecewise-linear interpolant of (knots, values)."""
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    t = np.asarray(knots, dtype=float)
    v = np.asarray(values, dtype=float)
    slope = np.diff(v) / np.diff(t)
    intercept = v[:-1] - slope * t[:-1]
    cdf = betainc(a, b, t)
    # E[X; X < t] = a / (a + b) * I_t(a + 1, b)
    partial = a / (a + b) * betainc(a + 1.0, b, t)
    return (intercept * np.diff(cdf, axis=-1) + slope * np.diff(partial, axis=-1)).sum(axis=-1)


@lru_cache(maxsize=4)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def beta_quadrature(fn, a, b, nodes: int = GL_NODES) -> np.ndarray:
    """E[fn(X)] for X ~ Beta(a, b) by fixed Gauss-Legendre quadrature on [0, 1]."""
    t, w = _gauss_legendre(nodes)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    logpdf = (a - 1.0) * np.log(t) + (b - 1.0) * np.log1p(-t) - betaln(a, b)
    return (w * np.exp(logpdf) * fn(t)).sum(axis=-1)


def mixture_expectation(params, one) -> np.ndarray:
    """Weighted sum of ``one(a, b)`` over ``params = [(w, a, b), ...]``."""
    total = 0.0
    for w, a, b in params:
        total = total + w * one(a, b)
    return np.asarray(total)


def expected_expr(expr, random: Mapping[str, list], fixed: Mapping[str, np.ndarray]) -> np.ndarray:
    """Expectation of a continuous expression whose variables in ``random`` are
    independent (mixtures of) betas given by ``[(w, a, b), ...]``; the rest are
    read from ``fixed``."""
    if isinstance(expr, Constant):
        return np.asarray(expr.value, dtype=float)
    if isinstance(expr, Polynomial):
        out = 0.0
        for coef, degrees in expr.terms:
            term = np.asarray(coef, dtype=float)
            for v, m in degrees:
                if not m:
                    continue
                if v in random:
                    term = term * mixture_expectation(random[v], lambda a, b, m=m: beta_moment(a, b, m))
                else:
                    term = term * np.asarray(fixed[v], dtype=float) ** m
            out = out + term
        return np.asarray(out)
    if isinstance(expr, PiecewiseLinear):
        out = 0.0
        for v, knots, vals in expr.pieces:
            if v in random:
                out = out + mixture_expectation(
                    random[v], lambda a, b, k=knots, y=vals: beta_pwl_expectation(a, b, k, y))
            else:
                out = out + np.interp(np.asarray(fixed[v], dtype=float), knots, vals)
        return np.asarray(out)
    if isinstance(expr, GaussianMixture):
        out = 0.0
        for comp in expr.components:
            v = comp[0]
            single = GaussianMixture((comp,))
            if v in random:
                fn = lambda t, s=single, v=v: s.evaluate({v: t})  # noqa: E731
                out = out + mixture_expectation(random[v], lambda a, b, f=fn: beta_quadrature(f, a, b))
            else:
                out = out + single.evaluate(fixed)
        return np.asarray(out)
    raise MisuseError(f"cannot take expectation of {type(expr).__name__}")


# ---------------------------------------------------------------------------
# basis functions


@dataclass(frozen=True)
class DiscreteFactor:
    scope: tuple[str, ...] = ()
    shape: tuple[int, ...] = ()
    table: tuple[float, ...] = (1.0,)

    def array(self) -> np.ndarray:
        return np.asarray(self.table, dtype=float).reshape(self.shape)

    def evaluate(self, values) -> np.ndarray:
        if not self.scope:
            return np.asarray(self.table[0], dtype=float)
        idx = tuple(np.asarray(values[v]).astype(np.intp) for v in self.scope)
        return self.array()[idx]

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.table)))


@dataclass(frozen=True)
class MonomialFactor:
    degrees: tuple[tuple[str, int], ...] = ()

    form = "monomial"

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, m in self.degrees if m > 0)

    def evaluate(self, values) -> np.ndarray:
        out = np.float64(1.0)
        for v, m in self.degrees:
            if m:
                out = out * np.asarray(values[v], dtype=float) ** m
        return np.asarray(out)

    def max_abs(self) -> float:
        return 1.0


@dataclass(frozen=True)
class PiecewiseLinearFactor:
    """Product of 1-D piecewise-linear pieces ``(var, knots, values)``."""

    pieces: tuple[tuple[str, tuple[float, ...], tuple[float, ...]], ...]

    form = "piecewise_linear"

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _, _ in self.pieces)

    def evaluate(self, values) -> np.ndarray:
        out = np.float64(1.0)
        for v, knots, vals in self.pieces:
            out = out * np.interp(np.asarray(values[v], dtype=float), knots, vals)
        return np.asarray(out)

    def max_abs(self) -> float:
        return float(np.prod([max(abs(x) for x in vals) for _, _, vals in self.pieces]))


ContinuousFactor = Union[MonomialFactor, PiecewiseLinearFactor]


@dataclass(frozen=True)
class BasisFunction:
    discrete: DiscreteFactor = DiscreteFactor()
    continuous: ContinuousFactor = MonomialFactor()
    name: str = ""

    @property
    def scope(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(self.discrete.scope + self.continuous.variables))

    def evaluate(self, values) -> np.ndarray:
        return np.asarray(self.discrete.evaluate(values) * self.continuous.evaluate(values), dtype=float)

    def max_abs(self) -> float:
        return self.discrete.max_abs() * self.continuous.max_abs()

    @classmethod
    def constant(cls, name: str = "const") -> "BasisFunction":
        return cls(name=name)

    @classmethod
    def monomial(cls, degrees: Mapping[str, int], name: str = "") -> "BasisFunction":
        return cls(continuous=MonomialFactor(tuple((v, int(m)) for v, m in degrees.items())), name=name)

    @classmethod
    def piecewise(cls, var: str, knots, values, name: str = "") -> "BasisFunction":
        piece = (var, tuple(float(k) for k in knots), tuple(float(x) for x in values))
        return cls(continuous=PiecewiseLinearFactor((piece,)), name=name)

    @classmethod
    def indicator(cls, var: str, value: int, size: int, name: str = "") -> "BasisFunction":
        table = tuple(1.0 if j == value else 0.0 for j in range(size))
        return cls(discrete=DiscreteFactor((var,), (size,), table), name=name)


def basis_problems(model: HybridModel, basis: Sequence[BasisFunction]) -> list[str]:
    """Check every basis scope against the model's state variables."""
    issues = []
    states = {v.name: v for v in model.state_vars}
    for i, f in enumerate(basis):
        where = f"basis[{i}]"
        for v, size in zip(f.discrete.scope, f.discrete.shape):
            spec = states.get(v)
            if spec is None:
                issues.append(f"{where}: {v!r} is not a state variable")
            elif spec.is_continuous:
                issues.append(f"{where}: discrete factor uses continuous variable {v!r}")
            elif spec.domain_size != size:
                issues.append(f"{where}: discrete factor size {size} for {v!r}, domain is {spec.domain_size}")
        if len(f.discrete.table) != int(np.prod(f.discrete.shape)):
            issues.append(f"{where}: discrete table has {len(f.discrete.table)} entries")
        for v in f.continuous.variables:
            spec = states.get(v)
            if spec is None:
                issues.append(f"{where}: {v!r} is not a state variable")
            elif not spec.is_continuous:
                issues.append(f"{where}: continuous factor uses discrete variable {v!r}")
        if isinstance(f.continuous, MonomialFactor):
            if any(not isinstance(m, (int, np.integer)) or m < 0 for _, m in f.continuous.degrees):
                issues.append(f"{where}: monomial degrees must be non-negative integers")
        else:
            issues += [f"{where}: {p}" for p in PiecewiseLinear(f.continuous.pieces).problems()]
    return issues


# ---------------------------------------------------------------------------
# state relevance density


@dataclass(frozen=True)
class Uniform:
    kind = "uniform"

    def moment(self, m: int) -> float:
        return 1.0 / (m + 1)

    def pwl(self, knots, values) -> float:
        return float(beta_pwl_expectation(1.0, 1.0, knots, values))

    def sample(self, rng, n):
        return rng.random(n)


@dataclass(frozen=True)
class BetaMarginal:
    a: float
    b: float

    kind = "beta"

    def moment(self, m: int) -> float:
        out = 1.0
        for k in range(m):
            out *= (self.a + k) / (self.a + self.b + k)
        return out

    def pwl(self, knots, values) -> float:
        return float(beta_pwl_expectation(self.a, self.b, knots, values))

    def sample(self, rng, n):
        return rng.beta(self.a, self.b, n)


@dataclass(frozen=True)
class Categorical:
    probs: tuple[float, ...]

    kind = "categorical"

    def sample(self, rng, n):
        return rng.choice(len(self.probs), size=n, p=np.asarray(self.probs))


@dataclass(frozen=True)
class StateRelevanceDensity:
    """Product-form density over the state space, one marginal per variable."""

    marginals: tuple[tuple[str, Union[Uniform, BetaMarginal, Categorical]], ...]

    def get(self, var: str):
        for v, m in self.marginals:
            if v == var:
                return m
        raise MisuseError(f"relevance density has no marginal for {var!r}")

    @classmethod
    def uniform(cls, model: HybridModel, **overrides) -> "StateRelevanceDensity":
        out = []
        for v in model.state_vars:
            if v.name in overrides:
                out.append((v.name, overrides[v.name]))
            elif v.is_continuous:
                out.append((v.name, Uniform()))
            else:
                out.append((v.name, Categorical(tuple([1.0 / v.domain_size] * v.domain_size))))
        return cls(tuple(out))

    def sample(self, rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
        return {v: m.sample(rng, n) for v, m in self.marginals}


def relevance_weight(psi: StateRelevanceDensity, f: BasisFunction) -> float:
    """Expectation of ``f`` under ``psi``: discrete enumeration times continuous moments."""
    if f.discrete.scope:
        table = f.discrete.array()
        operands = []
        letters = ascii_letters[:len(f.discrete.scope)]
        for v in f.discrete.scope:
            marginal = psi.get(v)
            if not isinstance(marginal, Categorical):
                raise MisuseError(f"discrete variable {v!r} needs a categorical marginal")
            operands.append(np.asarray(marginal.probs, dtype=float))
        alpha_d = float(np.einsum(",".join(letters) + "," + letters + "->", *operands, table))
    else:
        alpha_d = float(f.discrete.table[0])

    alpha_c = 1.0
    if isinstance(f.continuous, MonomialFactor):
        for v, m in f.continuous.degrees:
            if m:
                alpha_c *= _continuous_marginal(psi, v).moment(m)
    else:
        for v, knots, vals in f.continuous.pieces:
            alpha_c *= _continuous_marginal(psi, v).pwl(knots, vals)
    return alpha_d * alpha_c


def _continuous_marginal(psi, v):
    marginal = psi.get(v)
    if isinstance(marginal, Categorical):
        raise MisuseError(f"continuous variable {v!r} needs a uniform or beta marginal")
    return marginal


# ---------------------------------------------------------------------------
# backprojections


def _beta_cpf(model: HybridModel, var: str):
    cpf = model.cpf(var)
    if not isinstance(cpf, (BetaCPF, MixtureBetaCPF)):
        raise MisuseError(f"{var!r} has no beta CPF; continuous basis factors need continuous children")
    return cpf


class DiscreteBackprojection:
    """g_D(x, a) = sum over x'_D of P(x'_D | x, a) f_D(x'_D)."""

    def __init__(self, model: HybridModel, factor: DiscreteFactor):
        self.factor = factor
        self.cpfs = []
        for v in factor.scope:
            cpf = model.cpf(v)
            if not isinstance(cpf, DiscriminantCPF):
                raise MisuseError(f"discrete basis factor includes {v!r}, which is not a discrete child")
            self.cpfs.append(cpf)
        self.scope = model.order(p for c in self.cpfs for p in c.parents)
        self._model = model

    def evaluate(self, values) -> np.ndarray:
        if not self.cpfs:
            return np.asarray(self.factor.table[0], dtype=float)
        probs = [c.probabilities(values) for c in self.cpfs]
        letters = ascii_letters[:len(probs)]
        spec = ",".join("..." + l for l in letters) + "," + letters + "->..."
        return np.einsum(spec, *probs, self.factor.array())

    def as_scoped(self) -> ScopedFunction:
        """Tabulate over the (all-discrete) parent scope."""
        specs = [self._model.spec(v) for v in self.scope]
        if any(s.is_continuous for s in specs):
            raise MisuseError("backprojection depends on continuous parents; no finite table exists")
        shape = tuple(s.domain_size for s in specs)
        grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
        vals = self.evaluate(dict(zip(self.scope, grids)))
        return ScopedFunction.tabular(self.scope, shape, np.broadcast_to(vals, shape).ravel().tolist())


class MonomialBackprojection:
    """g_C(x, a) = prod_j E[X'_j ** m_j | x, a] in Gamma-ratio form."""

    def __init__(self, model: HybridModel, degrees: Mapping[str, int]):
        self.degrees = tuple((v, int(m)) for v, m in dict(degrees).items() if int(m) > 0)
        for v, m in dict(degrees).items():
            if int(m) < 0 or int(m) != m:
                raise MisuseError(f"degree of {v!r} must be a non-negative integer")
        self.cpfs = [_beta_cpf(model, v) for v, _ in self.degrees]
        self.scope = model.order(p for c in self.cpfs for p in c.parents)

    def evaluate(self, values) -> np.ndarray:
        out = np.float64(1.0)
        for (v, m), cpf in zip(self.degrees, self.cpfs):
            out = out * mixture_expectation(cpf.beta_params(values), lambda a, b, m=m: beta_moment(a, b, m))
        return np.asarray(out)


class PiecewiseBackprojection:
    """g_C(x, a) = prod_j E[p_j(X'_j) | x, a] via incomplete-beta segment sums."""

    def __init__(self, model: HybridModel, factor: PiecewiseLinearFactor):
        self.pieces = factor.pieces
        self.cpfs = [_beta_cpf(model, v) for v, _, _ in self.pieces]
        self.scope = model.order(p for c in self.cpfs for p in c.parents)

    def evaluate(self, values) -> np.ndarray:
        out = np.float64(1.0)
        for (_, knots, vals), cpf in zip(self.pieces, self.cpfs):
            out = out * mixture_expectation(
                cpf.beta_params(values), lambda a, b, k=knots, y=vals: beta_pwl_expectation(a, b, k, y))
        return np.asarray(out)


def backproject_discrete(model: HybridModel, factor: DiscreteFactor) -> DiscreteBackprojection:
    return DiscreteBackprojection(model, factor)


def backproject_monomial(model: HybridModel, degrees: Mapping[str, int]) -> MonomialBackprojection:
    return MonomialBackprojection(model, degrees)


def backproject_piecewise_linear(model: HybridModel, factor: PiecewiseLinearFactor) -> PiecewiseBackprojection:
    return PiecewiseBackprojection(model, factor)


class Backprojection:
    """g(x, a) = g_D(x, a) * g_C(x, a) for one basis function."""

    def __init__(self, model: HybridModel, f: BasisFunction):
        self.basis = f
        self.discrete = backproject_discrete(model, f.discrete)
        if isinstance(f.continuous, MonomialFactor):
            self.continuous = backproject_monomial(model, dict(f.continuous.degrees))
        else:
            self.continuous = backproject_piecewise_linear(model, f.continuous)
        self.scope = model.order(self.discrete.scope + self.continuous.scope)

    def evaluate(self, values) -> np.ndarray:
        return np.asarray(self.discrete.evaluate(values) * self.continuous.evaluate(values), dtype=float)


def backproject(model: HybridModel, f: BasisFunction) -> Backprojection:
    return Backprojection(model, f)


class ConstraintFunction:
    """F(x, a) = f(x) - discount * g(x, a)."""

    def __init__(self, model: HybridModel, f: BasisFunction):
        self.basis = f
        self.backprojection = backproject(model, f)
        self.discount = model.discount
        self.scope = model.order(f.scope + self.backprojection.scope)

    def evaluate(self, values) -> np.ndarray:
        return np.asarray(self.basis.evaluate(values) - self.discount * self.backprojection.evaluate(values),
                          dtype=float)


def constraint_function(model: HybridModel, f: BasisFunction) -> ConstraintFunction:
    return ConstraintFunction(model, f)

"""Expressions over continuous variables living on the unit interval.

Four forms are supported: constants, sparse multivariate polynomials,
additive piecewise-linear functions and additive Gaussian mixtures. Every
form can be evaluated on numpy arrays and reports interval bounds and
per-axis Lipschitz bounds over the unit hypercube.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_SQRT_2PIE = math.sqrt(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class Constant:
    value: float

    form = "constant"

    @property
    def variables(self) -> tuple[str, ...]:
        return ()

    def evaluate(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.float64(self.value)

    def bounds(self) -> tuple[float, float]:
        return (float(self.value), float(self.value))

    def lipschitz(self) -> dict[str, float]:
        return {}

    def problems(self) -> list[str]:
        return [] if math.isfinite(self.value) else ["constant is not finite"]


@dataclass(frozen=True)
class Polynomial:
    """Sum of ``coef * prod(x_v ** m_v)`` terms.

    ``terms`` is a tuple of ``(coef, ((var, degree), ...))`` pairs.
    """

    terms: tuple[tuple[float, tuple[tuple[str, int], ...]], ...]

    form = "polynomial"

    @property
    def variables(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for _, degrees in self.terms:
            for v, _m in degrees:
                seen.setdefault(v)
        return tuple(seen)

    def evaluate(self, values):
        out = np.float64(0.0)
        for coef, degrees in self.terms:
            term = np.float64(coef)
            for v, m in degrees:
                if m:
                    term = term * np.asarray(values[v], dtype=float) ** m
            out = out + term
        return out

    def bounds(self):
        lo = hi = 0.0
        for coef, degrees in self.terms:
            if any(m > 0 for _, m in degrees):
                lo += min(0.0, coef)
                hi += max(0.0, coef)
            else:
                lo += coef
                hi += coef
        return (lo, hi)

    def lipschitz(self):
        out: dict[str, float] = {}
        for coef, degrees in self.terms:
            for v, m in degrees:
                if m > 0:
                    out[v] = out.get(v, 0.0) + abs(coef) * m
        return out

    def problems(self):
        issues = []
        for coef, degrees in self.terms:
            if not math.isfinite(coef):
                issues.append("polynomial coefficient is not finite")
            for v, m in degrees:
                if not isinstance(m, (int, np.integer)) or m < 0:
                    issues.append(f"polynomial degree of {v!r} must be a non-negative integer, got {m!r}")
        return issues


@dataclass(frozen=True)
class PiecewiseLinear:
    """Additive sum of one-dimensional piecewise-linear functions.

    ``pieces`` is a tuple of ``(var, knots, values)``; knots must be strictly
    increasing and run from 0 to 1.
    """

    pieces: tuple[tuple[str, tuple[float, ...], tuple[float, ...]], ...]

    form = "piecewise_linear"

    @property
    def variables(self):
        return tuple(dict.fromkeys(v for v, _, _ in self.pieces))

    def evaluate(self, values):
        out = np.float64(0.0)
        for v, knots, vals in self.pieces:
            out = out + np.interp(np.asarray(values[v], dtype=float), knots, vals)
        return out

    def bounds(self):
        return (sum(min(vals) for _, _, vals in self.pieces),
                sum(max(vals) for _, _, vals in self.pieces))

    def lipschitz(self):
        out: dict[str, float] = {}
        for v, knots, vals in self.pieces:
            slopes = np.abs(np.diff(vals) / np.diff(knots))
            out[v] = out.get(v, 0.0) + float(slopes.max(initial=0.0))
        return out

    def problems(self):
        issues = []
        for v, knots, vals in self.pieces:
            if len(knots) != len(vals) or len(knots) < 2:
                issues.append(f"piecewise-linear piece for {v!r} needs matching knot/value lists of length >= 2")
                continue
            if any(b <= a for a, b in zip(knots, knots[1:])):
                issues.append(f"piecewise-linear knots for {v!r} are not strictly increasing")
            if knots[0] != 0.0 or knots[-1] != 1.0:
                issues.append(f"piecewise-linear knots for {v!r} must span [0, 1]")
            if not all(math.isfinite(x) for x in vals):
                issues.append(f"piecewise-linear values for {v!r} are not finite")
        return issues


@dataclass(frozen=True)
class GaussianMixture:
    """Additive sum of weighted Gaussian densities, one mixture per variable.

    ``components`` is a tuple of ``(var, weights, means, variances)``. Each
    term is ``w * N(x; mean, variance)`` with the normalized density, so a
    unit-weight component peaks at ``1 / sqrt(2 pi variance)``.
    """

    components: tuple[tuple[str, tuple[float, ...], tuple[float, ...], tuple[float, ...]], ...]

    form = "gaussian_mixture"

    @property
    def variables(self):
        return tuple(dict.fromkeys(v for v, *_ in self.components))

    def evaluate(self, values):
        out = np.float64(0.0)
        for v, weights, means, variances in self.components:
            x = np.asarray(values[v], dtype=float)
            for w, mu, var in zip(weights, means, variances):
                out = out + w * np.exp(-0.5 * (x - mu) ** 2 / var) / (_SQRT_2PI * math.sqrt(var))
        return out

    def bounds(self):
        lo = hi = 0.0
        for _, weights, _, variances in self.components:
            for w, var in zip(weights, variances):
                peak = w / (_SQRT_2PI * math.sqrt(var))
                lo += min(0.0, peak)
                hi += max(0.0, peak)
        return (lo, hi)

    def lipschitz(self):
        # |d/dx N(x; mu, s^2)| peaks at |x - mu| = s with value 1 / (s^2 sqrt(2 pi e))
        out: dict[str, float] = {}
        for v, weights, _, variances in self.components:
            out[v] = out.get(v, 0.0) + sum(abs(w) / (var * _SQRT_2PIE) for w, var in zip(weights, variances))
        return out

    def problems(self):
        issues = []
        for v, weights, means, variances in self.components:
            if not (len(weights) == len(means) == len(variances)) or not weights:
                issues.append(f"gaussian mixture for {v!r} needs equal-length, non-empty weight/mean/variance lists")
            if any(not var > 0 for var in variances):
                issues.append(f"gaussian mixture variances for {v!r} must be strictly positive")
        return issues


ContinuousExpr = Union[Constant, Polynomial, PiecewiseLinear, GaussianMixture]


def linear(var: str, slope: float = 1.0, intercept: float = 0.0) -> Polynomial:
    terms = [(float(slope), ((var, 1),))]
    if intercept:
        terms.append((float(intercept), ()))
    return Polynomial(tuple(terms))


def monomial(degrees: Mapping[str, int], coef: float = 1.0) -> Polynomial:
    return Polynomial(((float(coef), tuple((v, int(m)) for v, m in degrees.items())),))


def piecewise(var: str, knots, values) -> PiecewiseLinear:
    return PiecewiseLinear(((var, tuple(float(k) for k in knots), tuple(float(x) for x in values)),))


def gaussian(var: str, mean: float, variance: float, weight: float = 1.0) -> GaussianMixture:
    return GaussianMixture(((var, (float(weight),), (float(mean),), (float(variance),)),))

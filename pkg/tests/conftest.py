import numpy as np
import pytest

from halp.basis import BasisFunction
from halp.expr import Polynomial, linear
from halp.model import BetaCPF, DiscriminantCPF, HybridModel, ScopedFunction, VariableSpec


def toy_model(discount=0.9):
    """One water level x, one binary pump a; pumping raises the level."""
    h1 = ScopedFunction.tabular(("a",), (2,), [linear("x", 2.0, 1.0), linear("x", 4.0, 2.0)])
    return HybridModel(
        (VariableSpec.continuous("x"),),
        (VariableSpec.discrete("a", 2),),
        (BetaCPF("x", h1, ScopedFunction.const(2.0)),),
        (ScopedFunction.of(linear("x")),),
        discount,
    )


def two_var_model(discount=0.9):
    """Two continuous levels coupled through one binary action."""
    hx = ScopedFunction.tabular(("a",), (2,), [linear("x", 3.0, 1.0), linear("y", 3.0, 2.0)])
    hy = ScopedFunction.tabular(("a",), (2,), [linear("y", 2.0, 2.0), linear("x", 1.0, 1.0)])
    reward_y = ScopedFunction.tabular(("a",), (2,), [Polynomial(((0.5, (("y", 1),)),)),
                                                    Polynomial(((0.5, (("y", 1),)), (-0.1, ())))])
    return HybridModel(
        (VariableSpec.continuous("x"), VariableSpec.continuous("y")),
        (VariableSpec.discrete("a", 2),),
        (BetaCPF("x", hx, ScopedFunction.const(2.0)), BetaCPF("y", hy, ScopedFunction.const(1.5))),
        (ScopedFunction.of(linear("x")), reward_y),
        discount,
    )


def hybrid_model(discount=0.8):
    """Continuous level x and a three-valued mode d driven by x and the action."""
    hx = ScopedFunction.tabular(("d",), (3,), [linear("x", 2.0, 1.0), 2.0, linear("x", -1.0, 3.0)])
    d_cpf = DiscriminantCPF("d", (
        ScopedFunction.tabular(("a",), (2,), [linear("x", 1.0, 0.5), 0.2]),
        ScopedFunction.const(1.0),
        ScopedFunction.tabular(("a",), (2,), [0.3, linear("x", 2.0, 0.5)]),
    ))
    reward = ScopedFunction.tabular(("d",), (3,), [linear("x"), 0.5, linear("x", -1.0, 1.0)])
    return HybridModel(
        (VariableSpec.continuous("x"), VariableSpec.discrete("d", 3)),
        (VariableSpec.discrete("a", 2),),
        (BetaCPF("x", hx, ScopedFunction.const(2.0)), d_cpf),
        (reward,),
        discount,
    )


def poly_basis(var="x", degree=3):
    return [BasisFunction.constant()] + [BasisFunction.monomial({var: m}) for m in range(1, degree + 1)]


@pytest.fixture
def toy():
    return toy_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

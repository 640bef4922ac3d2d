"""eps-HALP: grid-relaxed approximate linear programming for hybrid factored MDPs."""
from .basis import (BasisFunction, StateRelevanceDensity, backproject, constraint_function,
                    relevance_weight)
from .errors import (BudgetExceededError, DomainError, HalpError, MisuseError, ParseError,
                     SolverError, ValidationError)
from .halp import (EpsGrid, GridProbe, HalpProgram, HalpSolution, SampleProbe, build_halp,
                   measure_infeasibility, resolution_for_delta, solve_halp)
from .model import BetaCPF, DiscriminantCPF, HybridModel, MixtureBetaCPF, ScopedFunction, VariableSpec
from .policy import GreedyPolicy, greedy_action, q_value, rollout

__all__ = [
    "BasisFunction", "StateRelevanceDensity", "backproject", "constraint_function", "relevance_weight",
    "BudgetExceededError", "DomainError", "HalpError", "MisuseError", "ParseError", "SolverError",
    "ValidationError", "EpsGrid", "GridProbe", "HalpProgram", "HalpSolution", "SampleProbe", "build_halp",
    "measure_infeasibility", "resolution_for_delta", "solve_halp", "BetaCPF", "DiscriminantCPF",
    "HybridModel", "MixtureBetaCPF", "ScopedFunction", "VariableSpec", "GreedyPolicy", "greedy_action",
    "q_value", "rollout",
]

"""Ordered (chronological) exponentials of matrix-valued generators."""

from .dyson import QuadratureBudgetError, dyson_partial_sum, dyson_term, simplex_nodes
from .expm import expm, expm_batch
from .matfun import (CallableMatrixFunction, ChebyshevMatrixFunction, ConstantMatrixFunction,
                     ExprMatrixFunction, MatrixFunction, PiecewiseConstantMatrixFunction,
                     as_matrix_function)
from .product import (DenseOrderedExp, EngineStats, OrderedExpTask, RefinementBudgetError,
                      StepControl, collect_stats, ordered_exp, product_integral)
from .quadrature import ChebyshevAntiderivative, QuadratureError, gauss_legendre, integrate
from .solvers import (LinearSolution, SylvesterSolution, parameter_derivative,
                      solve_linear_inhomogeneous, solve_operator_sylvester)

__all__ = [
    "QuadratureBudgetError", "dyson_partial_sum", "dyson_term", "simplex_nodes",
    "expm", "expm_batch",
    "CallableMatrixFunction", "ChebyshevMatrixFunction", "ConstantMatrixFunction",
    "ExprMatrixFunction", "MatrixFunction", "PiecewiseConstantMatrixFunction",
    "as_matrix_function",
    "DenseOrderedExp", "EngineStats", "OrderedExpTask", "RefinementBudgetError", "StepControl",
    "collect_stats", "ordered_exp", "product_integral",
    "ChebyshevAntiderivative", "QuadratureError", "gauss_legendre", "integrate",
    "LinearSolution", "SylvesterSolution", "parameter_derivative",
    "solve_linear_inhomogeneous", "solve_operator_sylvester",
]

"""Linear operators acting on exact polynomial and sampled-grid functions."""

from .grid import BOUNDARY_BAND, Grid
from .homomorphism import (DegreeBudgetError, PushforwardReport, chronological_series,
                           pushforward_check, pushforward_report)
from .operators import (Commutator, Compose, Identity, MulByFunction, OperatorExpr,
                        PartialDeriv, Scale, Sum, VariableMismatchError, Zero, apply_operator,
                        derivative_form, is_derivative, operator_from_json, operator_to_json,
                        operator_variables, vector_field)
from .polyseries import DegreeOverflowError, NonPolynomialError, PolySeries
from .shifts import (NonMonotoneError, ShiftSpec, conjugation_coefficient, shift_apply,
                     shift_conjugation, shift_map)

FunctionRep = (PolySeries, Grid)

__all__ = [
    "BOUNDARY_BAND", "Grid", "PolySeries", "FunctionRep",
    "DegreeOverflowError", "NonPolynomialError", "DegreeBudgetError", "VariableMismatchError",
    "NonMonotoneError",
    "OperatorExpr", "MulByFunction", "PartialDeriv", "Sum", "Compose", "Commutator", "Scale",
    "Identity", "Zero",
    "apply_operator", "derivative_form", "is_derivative", "vector_field",
    "operator_from_json", "operator_to_json", "operator_variables",
    "ShiftSpec", "shift_apply", "shift_map", "shift_conjugation", "conjugation_coefficient",
    "PushforwardReport", "chronological_series", "pushforward_check", "pushforward_report",
]

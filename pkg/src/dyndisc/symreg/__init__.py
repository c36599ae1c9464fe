"""Genetic-programming symbolic regression over trajectory data."""

from .expr import (
    Binary,
    Const,
    Expr,
    Unary,
    Var,
    complexity,
    evaluate,
    fold_constants,
    parse_expression,
    structure_match,
    to_infix,
)
from .targets import RegressionTarget, derivative_targets, reference_equations
from .search import FrontRow, ParetoFront, SrConfig, fit_constants, pareto_scores, search

__all__ = [
    "Binary",
    "Const",
    "Expr",
    "FrontRow",
    "ParetoFront",
    "RegressionTarget",
    "SrConfig",
    "Unary",
    "Var",
    "complexity",
    "derivative_targets",
    "evaluate",
    "fit_constants",
    "fold_constants",
    "parse_expression",
    "pareto_scores",
    "reference_equations",
    "search",
    "structure_match",
    "to_infix",
]

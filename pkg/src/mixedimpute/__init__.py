"""Mixed-type missing-value imputation toolkit.

Provides an iterative random-forest imputer for arbitrary mixes of
continuous and categorical columns, a cross-validated KNN baseline, and a
benchmarking harness with error metrics and significance tests.
"""

from .data import MixedMatrix, Variable, VariableKind, parse_csv, write_csv

__all__ = ["MixedMatrix", "Variable", "VariableKind", "parse_csv", "write_csv"]

__version__ = "0.1.0"

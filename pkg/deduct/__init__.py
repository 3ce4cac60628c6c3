"""Deductive estimation of survival probability in double-sampling designs."""
from deduct.baselines import km_complete_case, km_stratified
from deduct.data_model import ColumnSpec, Dataset, ObservedRecord, parse_csv, write_csv
from deduct.engine import DeductiveEstimator, estimate, gateaux, solve_alpha, sum_gateaux
from deduct.errors import DeductError
from deduct.simulation import GenerativeModel, apply_gamma_restriction, exact_tau, generate
from deduct.support import build_support
from deduct.working_models import Variant, fit_working_models

__all__ = [
    "ColumnSpec",
    "Dataset",
    "DeductError",
    "DeductiveEstimator",
    "GenerativeModel",
    "ObservedRecord",
    "Variant",
    "apply_gamma_restriction",
    "build_support",
    "estimate",
    "exact_tau",
    "fit_working_models",
    "gateaux",
    "generate",
    "km_complete_case",
    "km_stratified",
    "parse_csv",
    "solve_alpha",
    "sum_gateaux",
    "write_csv",
]

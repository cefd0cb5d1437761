"""Constrained extremals of smooth cost functionals along affine control
systems: solving, certification, and local inversion of the endpoint map.
"""

from .analysis import (BoundReport, GramReport, LipschitzCertificate,
                       SingularityScan, assumption4_check, costate_bound_check,
                       lipschitz_certificate, singularity_report)
from .controls import ControlPath, l2_distance, random_smooth_controls
from .dynamics import (DifferentialKernel, FundamentalSolution, Trajectory,
                       adjoint_dE, apply_dE, endpoint, fine_grid,
                       fundamental_solution, gram_matrix, integrate,
                       integrate_batch, trapezoid_weights)
from .errors import (BasisDeficiencyError, CertificateFailure,
                     ChartConstructionError, ChartIntegrityError,
                     DiffeomorphismViolationError, DimensionError,
                     DivergenceError, EvaluationError, ExpressionGrowthError,
                     ExtremalsError, GridMismatchError, NonConvergenceError,
                     ParseError, ScenarioError)
from .expr import Expr, compile_vector, parse_components, parse_scalar
from .fields import FieldSet, LieRankResult, lie_bracket, lie_rank, parse_field_set
from .inversion import (Dictionary, DictionaryDirection, InversionChart,
                        SelectedBasis, build_chart, chart_eval,
                        chart_eval_full, chart_from_dict,
                        chart_lipschitz_estimate, default_dictionary,
                        select_basis)
from .lagrangian import (GrowthProfile, GrowthReport, Lagrangian,
                         growth_spot_check, hamiltonian, legendre_inverse,
                         maximizing_control, momentum_map, parse_growth_profile,
                         parse_lagrangian, phi_from_samples, phi_functional)
from .scenario import (Scenario, builtin_scenario, load_scenario,
                       parse_scenario, resolve_scenario, scenario_control,
                       scenario_fields, scenario_lagrangian)
from .shooting import (CostatePath, ExtremalSolution, costate_from_lambda,
                       extremality_residual, make_seeds, multi_start,
                       shoot_extremal)

__version__ = "0.1.0"

__all__ = [
    "BasisDeficiencyError", "BoundReport", "CertificateFailure",
    "ChartConstructionError", "ChartIntegrityError", "ControlPath",
    "CostatePath", "Dictionary", "DictionaryDirection",
    "DifferentialKernel", "DiffeomorphismViolationError", "DimensionError",
    "DivergenceError", "EvaluationError", "Expr", "ExpressionGrowthError",
    "ExtremalSolution", "ExtremalsError", "FieldSet",
    "FundamentalSolution", "GramReport", "GridMismatchError",
    "GrowthProfile", "GrowthReport", "InversionChart", "Lagrangian",
    "LieRankResult", "LipschitzCertificate", "NonConvergenceError",
    "ParseError", "Scenario", "ScenarioError", "SelectedBasis",
    "SingularityScan", "Trajectory", "adjoint_dE", "apply_dE",
    "assumption4_check", "build_chart", "builtin_scenario", "chart_eval",
    "chart_eval_full", "chart_from_dict", "chart_lipschitz_estimate",
    "compile_vector", "costate_bound_check", "costate_from_lambda",
    "default_dictionary", "endpoint", "extremality_residual",
    "fine_grid", "fundamental_solution", "gram_matrix", "growth_spot_check",
    "hamiltonian", "integrate", "integrate_batch", "l2_distance",
    "legendre_inverse", "lie_bracket", "lie_rank", "lipschitz_certificate",
    "load_scenario", "make_seeds", "maximizing_control", "momentum_map",
    "multi_start", "parse_components", "parse_field_set",
    "parse_growth_profile", "parse_lagrangian", "parse_scalar",
    "parse_scenario", "phi_from_samples", "phi_functional",
    "random_smooth_controls", "resolve_scenario", "scenario_control",
    "scenario_fields", "scenario_lagrangian", "select_basis",
    "shoot_extremal", "singularity_report", "trapezoid_weights",
]

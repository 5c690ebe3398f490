"""Numerical solver and certification toolkit for stochastic target games.

Workflow: declare a :class:`GameModel` (or load a registered one), validate
its standing conditions by sampling, solve the dynamic-programming PDE with
the monotone explicit scheme, synthesize the gradient feedback strategy from
the solved surface, and certify the target / dynamic-programming properties
by seeded Monte-Carlo simulation.
"""

from .model import (AssumptionReport, Box, ConfigError, EvaluationError, GameModel,
                    Inversion, InversionError, PreconditionError,
                    SingularJacobianError, MODEL_REGISTRY, constant_coefficients,
                    controlled_drift, invert_sigma_y, load_model, model_from_dict,
                    uncertain_volatility, validate_assumptions, zero_model)
from .hamiltonian import (HamiltonianEval, Rescaling, ScalingError, h, h_tilde,
                          h_ua, select_scaling)
from .pde import (CflError, ComparisonReport, Grid, GridFn, JetReport,
                  ResidualReport, SolveError, classical_supersolution,
                  comparison_check, constant_subsolution, jet_check, lattice_kink_mask,
                  lattice_max, lattice_min, make_grid, residual, solve_hjb,
                  step_once, trusted_mask)
from .strategy import (ConcatStrategy, ConstantStrategy, StopFamily, Strategy,
                       concat, synthesize)
from .sim import (AdversaryPolicy, CertReport, SimPath, SimulationError,
                  certify_target, check_dpp1, check_dpp2,
                  check_subsolution_statistically,
                  check_supersolution_statistically, default_slack_tol, simulate,
                  wilson_interval)

__version__ = "0.1.0"

__all__ = [
    "AdversaryPolicy", "AssumptionReport", "Box", "CertReport", "CflError",
    "ComparisonReport", "ConcatStrategy", "ConfigError", "ConstantStrategy",
    "EvaluationError", "GameModel", "Grid", "GridFn", "HamiltonianEval",
    "Inversion", "InversionError", "JetReport", "MODEL_REGISTRY",
    "PreconditionError", "Rescaling", "ResidualReport", "ScalingError", "SimPath",
    "SimulationError", "SingularJacobianError", "SolveError", "StopFamily",
    "Strategy", "certify_target", "check_dpp1", "check_dpp2",
    "check_subsolution_statistically", "check_supersolution_statistically",
    "classical_supersolution", "comparison_check", "concat",
    "constant_coefficients", "constant_subsolution", "controlled_drift",
    "default_slack_tol", "h", "h_tilde", "h_ua", "invert_sigma_y", "jet_check",
    "lattice_kink_mask", "lattice_max", "lattice_min", "load_model", "make_grid",
    "model_from_dict", "residual", "select_scaling", "simulate", "solve_hjb",
    "step_once", "synthesize", "trusted_mask", "uncertain_volatility",
    "validate_assumptions", "wilson_interval", "zero_model",
]

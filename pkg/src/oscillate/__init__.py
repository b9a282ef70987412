"""Numerical toolkit for periodic homogenization of fully nonlinear elliptic equations.

The main entry points:

* :class:`OperatorSpec` and the built-ins in :mod:`oscillate.builtins`
* :func:`solve_cell` / :func:`effective_value` for the cell problem
* :func:`solve_dirichlet` for ``F(D^2 u, x/eps) - delta u = f`` on boxes
* :func:`solve_boundary_layer` and the experiments in :mod:`oscillate.bench`
"""
from .bench import (CorrectorField, DecompositionFit, ExperimentReport, SweepConfig,
                    campanato_fit, cascade_ok, homogenization_sweep, regularity_certificate,
                    two_scale_error)
from .boundary_layer import (BoundaryLayerProblem, BoundaryLayerSolution, fit_band_constant,
                             solve_boundary_layer)
from .builtins import get_builtin, get_pair
from .cell import (CellSolution, CheckReport, EffectiveTable, TabulatedOperator,
                   audit_key_hypotheses, check_effective_ellipticity, check_key_equality,
                   check_min_monotonicity, check_scaling_identity, corrector_hessian_floor,
                   effective_value, solve_cell, tabulate_effective)
from .errors import (AuditInapplicable, ConstructionError, CrossMethodDisagreement,
                     DegeneracyError, DomainError, ExtrapolationError, MonotonicityError,
                     NonConvergenceError, OscillateError, SpecSchemaError,
                     StencilUnavailableError, TabulationError)
from .grid import BoxGrid, GridFunction, TorusGrid
from .operators import (Linear, Max, Min, OperatorSpec, Pucci, ScaledOperator, TrigPoly,
                        build_cabre_caffarelli, build_key_example, ellipticity_margin, evaluate,
                        holder_modulus, spec_from_yaml, translate_scale)
from .solver import DirichletProblem, SolveReport, comparison_audit, residual, solve_dirichlet

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

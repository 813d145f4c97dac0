"""Exact and numerical solutions of the pressureless Euler equations on curved
surfaces: geodesic characteristics, hodograph systems, explicit solution
families and independent residual checks."""
from .closed_forms import (FAMILY_IDS, SolutionFamily, asymptotic_exponents, eval_field,
                           measure_exponents, reduced_1d_potential)
from .errors import (BoundaryHit, ConfigError, CoordsOutOfRange, HodoflowError,
                     InsufficientDomain, MultiValued, NoConvergence, OutOfFamilyDomain,
                     SingularJacobian, StepUnderflow, UndefinedIntegral, Unsupported)
from .geodesics import (PhaseState, Trajectory, integrals_at, integrate_endpoints,
                        integrate_geodesic, relation_checks)
from .geometry import SurfaceChart, christoffel_at, christoffel_fd, metric_at
from .hodograph import (HodographSystem, blowup_time, make_cone_alt_system, make_cone_system,
                        make_cylinder_system, make_s2_stationary_system, make_s2_system,
                        make_s3_stationary_system, solve_velocities, trace_blowup)
from .kernels import BACKEND
from .oracle import (FieldGrid, ResidualReport, conservation_report, euler_residual,
                     evolve_characteristics)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "FAMILY_IDS", "BoundaryHit", "ConfigError", "CoordsOutOfRange", "FieldGrid",
    "HodoflowError", "HodographSystem", "InsufficientDomain", "MultiValued", "NoConvergence",
    "OutOfFamilyDomain", "PhaseState", "ResidualReport", "SingularJacobian", "SolutionFamily",
    "StepUnderflow", "SurfaceChart", "Trajectory", "UndefinedIntegral", "Unsupported",
    "asymptotic_exponents", "blowup_time", "christoffel_at", "christoffel_fd",
    "conservation_report", "euler_residual", "eval_field", "evolve_characteristics",
    "integrals_at", "integrate_endpoints", "integrate_geodesic", "make_cone_alt_system",
    "make_cone_system", "make_cylinder_system", "make_s2_stationary_system", "make_s2_system",
    "make_s3_stationary_system", "measure_exponents", "metric_at", "reduced_1d_potential",
    "relation_checks", "solve_velocities", "trace_blowup",
]

"""Numerical experiments on collapsing Kähler metrics over elliptic fibrations.

The base of the fibration is a flat torus or a disk; the limiting metric on the
base, the reduced continuity family, a small full Monge-Ampère oracle and the
metric-geometry layer (geodesics, completion, Gromov-Hausdorff bounds) are
exposed here.
"""

from .config import ConfigError, load_spec, spec_from_config, write_spec
from .continuity import (ContinuityFailure, ContinuityState, DiagnosticsRecord, collapse_diagnostics,
                         fiber_diameter, fit_estimate_envelopes, geometric_schedule, reduced_ma_step,
                         rescaled_step, ricci_diagnostics, run_schedule)
from .fibration import (CompatibilityError, FibrationSpec, FieldExpression, MarkedPoint, SemiFlatForm,
                        beta_preset, build_consistent_F, build_sigma, sigma_bounds, weil_petersson)
from .geometry import (BaseDomain, BaseForm, HermitianForm2D, ScalarField, ddbar, eigen_min_2d, integrate,
                       ricci_base, trace)
from .gke import GKESolution, solve_gke, uniqueness_probe, verify_gke_identity
from .metric import (CompletedBaseSpace, Correspondence, MetricGraph, MetricSample, bishop_gromov_ratio,
                     blowup_exponent_fit, completion_build, diameter_exponent_fit, distance_field,
                     gh_convergence_experiment, gh_upper_bound, punctured_disk_diameter)
from .newton import DiscretizationError, NewtonStagnation, damped_newton
from .oracle import TotalSpaceGrid, fiber_average, fiber_oscillation, full_ma_solve, scaling_transport_check

__version__ = "0.1.0"

__all__ = [
    "BaseDomain", "BaseForm", "ScalarField", "HermitianForm2D", "ddbar", "ricci_base", "trace",
    "integrate", "eigen_min_2d",
    "MarkedPoint", "FieldExpression", "FibrationSpec", "SemiFlatForm", "CompatibilityError",
    "beta_preset", "build_consistent_F", "build_sigma", "sigma_bounds", "weil_petersson",
    "ConfigError", "load_spec", "spec_from_config", "write_spec",
    "NewtonStagnation", "DiscretizationError", "damped_newton",
    "GKESolution", "solve_gke", "uniqueness_probe", "verify_gke_identity",
    "ContinuityFailure", "ContinuityState", "DiagnosticsRecord", "collapse_diagnostics", "fiber_diameter",
    "fit_estimate_envelopes", "geometric_schedule", "reduced_ma_step", "rescaled_step",
    "ricci_diagnostics", "run_schedule",
    "TotalSpaceGrid", "full_ma_solve", "fiber_average", "fiber_oscillation", "scaling_transport_check",
    "MetricGraph", "CompletedBaseSpace", "MetricSample", "Correspondence", "distance_field",
    "punctured_disk_diameter", "diameter_exponent_fit", "blowup_exponent_fit", "completion_build",
    "gh_upper_bound", "gh_convergence_experiment", "bishop_gromov_ratio",
]

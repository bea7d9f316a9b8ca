"""Kelvin-force tracking with fixed magnetic dipoles: field model, optimal intensities, transport."""

from .field import DipoleArray, SingularPointError, eval_dipole_field, eval_field_jacobian, eval_P, kelvin_force
from .motion import MotionLaw, build_disk_quadrature
from .objective import ControlPath, Problem1, Problem2, recover_final_time
from .optimizer import OptimizerOptions, RunReport, project_box, projected_gradient_residual, solve

__all__ = [
    "ControlPath", "DipoleArray", "MotionLaw", "OptimizerOptions", "Problem1", "Problem2",
    "RunReport", "SingularPointError", "build_disk_quadrature", "eval_P", "eval_dipole_field",
    "eval_field_jacobian", "kelvin_force", "project_box", "projected_gradient_residual",
    "recover_final_time", "solve", "FixedTimeForceDesigner", "MinimumTimeForceDesigner",
]


def __getattr__(name):
    # the estimators pull in scikit-learn; load them only when asked for
    if name in ("FixedTimeForceDesigner", "MinimumTimeForceDesigner"):
        from . import estimators

        return getattr(estimators, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

from .assembly import (
    assemble_convection,
    assemble_diffusion,
    assemble_divergence,
    assemble_gradient,
    assemble_graddiv,
    assemble_load,
    assemble_mass,
    convection_action,
    diffusion_action,
    pressure_mean_row,
)
from .quadrature import DEFAULT_RULE, QuadratureRule, collapsed_gauss, strang_fix_7
from .spaces import FeSpace, LocationError, evaluate_field

__all__ = [
    "DEFAULT_RULE",
    "FeSpace",
    "LocationError",
    "QuadratureRule",
    "assemble_convection",
    "assemble_diffusion",
    "assemble_divergence",
    "assemble_gradient",
    "assemble_graddiv",
    "assemble_load",
    "assemble_mass",
    "collapsed_gauss",
    "convection_action",
    "diffusion_action",
    "evaluate_field",
    "pressure_mean_row",
    "strang_fix_7",
]

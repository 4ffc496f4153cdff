"""Monte Carlo toolkit for singular-drift SDEs and stochastic-Lagrangian Navier-Stokes."""

from sdflow._core import (
    ArgumentError,
    NumericalError,
    bel_gradient,
    biot_savart,
    curl,
    fixed_point_solve,
    heat_decay,
    inverse_normal_cdf,
    leray_project,
    lq_lp_norm,
    max_divergence,
    point_vortex_velocity,
    simulate_terminal,
    standard_normal,
    zvonkin_corrector,
)

__all__ = [
    "ArgumentError",
    "NumericalError",
    "bel_gradient",
    "biot_savart",
    "curl",
    "fixed_point_solve",
    "heat_decay",
    "inverse_normal_cdf",
    "leray_project",
    "lq_lp_norm",
    "max_divergence",
    "point_vortex_velocity",
    "simulate_terminal",
    "standard_normal",
    "zvonkin_corrector",
]

"""Impedance-tensor Rayleigh-wave forward model and mixture-density inversion."""
from .dispersion import (
    DispersionCurve,
    DomainError,
    EarthStack,
    ImpedanceTensor,
    LayerParams,
    RootSearchConfig,
    dispersion_curve,
    dispersion_curves,
    elastic_params_from_vs,
    default_frequency_grid,
    solve_phase_velocity,
    surface_impedance,
)

__version__ = "0.1.0"

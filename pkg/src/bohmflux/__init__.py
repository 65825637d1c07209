"""Bohmian-trajectory scattering: wave packets, split-step evolution, the
guidance law, flux through spheres, exit statistics and partial waves."""

__version__ = "0.1.0"

from .errors import (BohmfluxError, BoxOverflowError, ConvergenceError, EnvelopeFailureError,
                     GeometryError, InsufficientFramesError, InvalidParameterError,
                     NodeProximityError, NumericalBreakdownError, ResolutionError,
                     StepUnderflowError)
from .evolution import (EvolutionFrames, GaussianBump, NoPotential, SquareWell,
                        continuity_residual, free_evolve_analytic, free_evolve_spectral,
                        make_potential, split_step_evolve)
from .guidance import (FrameSource, Trajectory, count_crossings, current, integrate_ensemble,
                       integrate_trajectory, velocity)
from .sampling import sample_initial_positions, sample_momenta, sample_positions
from .surfaces import (ConeBin, SphereSpec, asymptotic_current, cone, cone_probability,
                       flux_across_surface, flux_table, momentum_cone_probability,
                       polar_partition)
from .wavepacket import (GaussianPacket, GridField, Superposition, make_gaussian,
                         momentum_amplitude)

__all__ = [
    "__version__", "BohmfluxError", "BoxOverflowError", "ConvergenceError",
    "EnvelopeFailureError", "GeometryError", "InsufficientFramesError", "InvalidParameterError",
    "NodeProximityError", "NumericalBreakdownError", "ResolutionError", "StepUnderflowError",
    "EvolutionFrames", "GaussianBump", "NoPotential", "SquareWell", "continuity_residual",
    "free_evolve_analytic", "free_evolve_spectral", "make_potential", "split_step_evolve",
    "FrameSource", "Trajectory", "count_crossings", "current", "integrate_ensemble",
    "integrate_trajectory", "velocity", "sample_initial_positions", "sample_momenta", "sample_positions", "ConeBin",
    "SphereSpec", "asymptotic_current", "cone", "cone_probability", "flux_across_surface",
    "flux_table", "momentum_cone_probability", "polar_partition", "GaussianPacket", "GridField",
    "Superposition", "make_gaussian", "momentum_amplitude",
]

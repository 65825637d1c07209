"""Exception types raised by the simulator."""


class BohmfluxError(Exception):
    """Base class for all library errors."""


class InvalidParameterError(BohmfluxError, ValueError):
    pass


class ResolutionError(BohmfluxError):
    """Requested momentum lies beyond the grid Nyquist limit."""


class BoxOverflowError(BohmfluxError):
    """Probability mass reached the boundary layer of the periodic box."""


class NumericalBreakdownError(BohmfluxError):
    """NaN/inf appeared during propagation."""


class NodeProximityError(BohmfluxError):
    """Velocity requested where the density is below the node floor."""


class StepUnderflowError(BohmfluxError):
    pass


class GeometryError(BohmfluxError, ValueError):
    """Sphere/cone/grid geometry inconsistent with the requested operation."""


class ConvergenceError(BohmfluxError):
    pass


class EnvelopeFailureError(BohmfluxError):
    """Rejection sampler acceptance rate collapsed."""


class InsufficientFramesError(BohmfluxError, ValueError):
    pass

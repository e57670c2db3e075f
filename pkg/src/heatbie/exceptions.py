"""Exception types shared across the solver."""


class HeatbieError(Exception):
    """Base class for all library errors."""


class DomainError(HeatbieError):
    """Scalar argument outside the mathematical domain of a function."""


class ParameterError(HeatbieError):
    """Invalid configuration or discretization parameter."""


class GeometryError(HeatbieError):
    """Degenerate or inconsistent boundary geometry."""


class LayoutError(HeatbieError):
    """Partition layout cannot satisfy its coverage/overlap requirements."""


class SupportError(HeatbieError):
    """Grid field support touches the box frame; periodic solve invalid."""


class ConvergenceError(HeatbieError):
    """Iterative solve did not reach tolerance within the iteration budget."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class StallError(HeatbieError):
    """Adaptive time stepper drove the step size below the stall floor."""


class ConfigError(HeatbieError):
    """Malformed or incomplete run configuration."""

# Base Exception for the PASS tradeoff toolkit
class PassError(Exception):
    """Base class for all PASS tradeoff toolkit exceptions."""
    pass

# Configuration Exceptions
class ConfigurationError(PassError):
    """Raised when there is an error in the configuration."""
    pass

class ConfigParseError(ConfigurationError):
    """Raised when a system configuration file cannot be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

class ConfigValidationError(ConfigurationError):
    """Raised when a parsed configuration violates a model invariant."""
    pass

class LoggingConfigurationError(ConfigurationError):
    """Raised when there is an error in the logging configuration."""
    pass

# Geometry Exceptions
class LayoutError(PassError):
    """Raised when PA coordinates break ordering, range or spacing rules."""
    pass

class InfeasibleGeometryError(LayoutError):
    """Raised when M*N PAs at spacing delta_min cannot fit inside the region."""
    pass

# Solver Exceptions
class SolverError(PassError):
    """Base class for optimization failures."""
    pass

class InfeasibleError(SolverError):
    """Raised when the SE target or the QoS floors cannot be met within P_max."""

    def __init__(self, message, best_effort=None):
        # best_effort: the closest-to-feasible iterate the solver reached, if any
        self.best_effort = best_effort
        super().__init__(message)

class NumericalFailureError(SolverError):
    """Raised when a solver did not converge; carries the residuals it saw."""

    def __init__(self, message, residuals=None):
        self.residuals = dict(residuals or {})
        super().__init__(message)

class DegenerateBeamformerError(NumericalFailureError):
    """Raised when a relaxed beamforming matrix has (numerically) zero trace."""
    pass

"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """An impossible or inconsistent configuration (bad shapes, K > N, ...)."""


class DegenerateGraphError(ValueError):
    """A graph quantity is undefined (zero population degree, empty graph in strict mode)."""


class InfeasibleError(ValueError):
    """A request cannot be satisfied by the data (e.g. fewer points than clusters)."""


class NumericalError(RuntimeError):
    """An iterative numerical routine failed to converge."""


class IngestError(ValueError):
    """An input file could not be parsed into the expected shape."""

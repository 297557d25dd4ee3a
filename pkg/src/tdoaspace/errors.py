"""Exception types shared across the package.

ConfigError marks invalid user input (bad files, bad configuration) and maps
to CLI exit code 2; NumericalError and its subclasses mark runtime numerical
failures and map to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration or input file."""


class NumericalError(RuntimeError):
    """A numerical operation failed (singular system, infeasible input, ...)."""


class RankDeficiencyError(NumericalError):
    """A linear system does not determine its unknowns uniquely."""


class NotInImageError(NumericalError):
    """A planar TDOA pair lies outside the image of the forward map."""

"""
Backstepping Toolkit - Error Hierarchy
Every failure raised by the numerical features derives from ToolkitError.
"""

from typing import Iterable, Optional


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class InvalidProblemError(ToolkitError):
    """Goursat problem or simulation parameters out of range."""


class IterationLimitError(ToolkitError):
    """Successive approximation did not reach the tolerance."""

    def __init__(self, final_increment: float, max_iter: int):
        self.final_increment = final_increment
        self.max_iter = max_iter
        super().__init__(
            f"no convergence after {max_iter} iterations "
            f"(last increment {final_increment:.3e})")


class FamilyMismatchError(ToolkitError):
    """A kernel of the wrong family was passed to an operation."""


class SingularSystemError(ToolkitError):
    """Factorization of the implicit operator failed."""


class MissingKernelsError(ToolkitError):
    """A scenario needs kernels or gains that were not supplied."""


class IncompatibleGridsError(ToolkitError):
    """Kernel and state grids differ and interpolation is disabled."""


class GridMismatchError(ToolkitError):
    """Two kernels that must share a grid do not."""


class NonPositiveNormError(ToolkitError):
    """A decay fit met a zero or negative norm sample."""


class ComplexSpectrumError(ToolkitError):
    """The open-loop coupling matrix has complex eigenvalues."""


class WrongScenarioError(ToolkitError):
    """A trajectory from the wrong scenario was supplied."""


class ConfigError(ToolkitError):
    """Base class for configuration file problems."""


class ParseError(ConfigError):
    """A configuration line could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class UnknownKeyError(ConfigError):
    """The configuration names a key the toolkit does not know."""

    def __init__(self, key: str, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown key '{key}'{where}")


class MissingRequiredError(ConfigError):
    """Required configuration keys are absent."""

    def __init__(self, keys: Iterable[str]):
        self.keys = tuple(sorted(keys))
        super().__init__(f"missing required keys: {', '.join(self.keys)}")

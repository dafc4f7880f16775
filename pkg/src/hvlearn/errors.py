"""Exception hierarchy shared by every hvlearn module."""


class HVLearnError(Exception):
    """Base class for all hvlearn errors."""


class DomainError(HVLearnError, ValueError):
    """A reference point fails to strictly dominate the losses, or an argument
    lies outside the domain of a formula."""


class ShapeError(HVLearnError, ValueError):
    """Array dimensions are inconsistent."""


class FormatError(HVLearnError, ValueError):
    """A file does not follow the expected binary layout."""


class MismatchError(HVLearnError, ValueError):
    """Paired files disagree (e.g. image and label counts differ)."""


class ConvergenceError(HVLearnError, RuntimeError):
    """An iterative refinement did not reach its tolerance."""


class ConfigError(HVLearnError, ValueError):
    """A configuration could not be parsed or is invalid."""

"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data problems exit 2, numeric
failures exit 3.
"""


class QTraderError(Exception):
    """Base class for all package-specific errors."""


class DataError(QTraderError):
    """Problems with input market data (parsing, validation, alignment)."""


class ParseError(DataError):
    """A CSV row failed to parse; message carries file and line number."""


class ValidationError(DataError):
    """A parsed value violates a data invariant (e.g. high < low)."""


class InsufficientDataError(DataError):
    """A series or slice is too short for the requested window/episode."""


class NumericError(QTraderError):
    """Numeric failure during training or simulation (NaN loss, divergence)."""


class RuinError(NumericError):
    """Portfolio value reached zero; transition denominators vanish."""


class ContractViolation(QTraderError):
    """An internal precondition was broken (e.g. infeasible action executed).

    Signals a bug in the caller, not bad user input.
    """


class EpisodeComplete(QTraderError):
    """Raised when stepping past the last tradable period of an episode."""

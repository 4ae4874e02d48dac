"""Exception types raised across the package."""


class WamcastError(Exception):
    """Base class for all package errors."""


class DomainError(WamcastError, ValueError):
    """An input lies outside the domain an operation is defined on."""


class ParseError(WamcastError, ValueError):
    """An input file could not be parsed."""


class UnrecoverableYearError(WamcastError):
    """No pixel produced a defined onset for a year, so nothing can be filled."""

    def __init__(self, year):
        self.year = year
        super().__init__(f"no pixel has a defined onset in year {year}")


class DegenerateCorrelationError(WamcastError, ValueError):
    """A correlation is undefined because one of the series is constant."""


class RankDeficiencyError(WamcastError, ValueError):
    """A least-squares design matrix does not have full column rank."""


class FitError(WamcastError, RuntimeError):
    """Model training failed, e.g. the loss became non-finite."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")

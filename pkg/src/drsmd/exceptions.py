"""Exception types raised across the package."""


class DRSMDError(Exception):
    """Base class for all package errors."""


class SpecificationError(DRSMDError):
    """A model specification does not match the data (missing column, bad config)."""


class DataError(DRSMDError):
    """Input data violate an ingestion invariant (NaN/Inf, ragged columns)."""


class InsufficientDataError(DataError):
    """Too few observations for the requested parameter dimension."""


class IdentificationError(DRSMDError):
    """The identifying matrix is singular or too ill-conditioned to invert.

    Attributes
    ----------
    condition_number : float
    singular_values : ndarray or None
    """

    def __init__(self, message, condition_number=float("inf"), singular_values=None):
        super().__init__(message)
        self.condition_number = condition_number
        self.singular_values = singular_values

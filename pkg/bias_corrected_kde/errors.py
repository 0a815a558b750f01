from __future__ import annotations


class BiasCorrectedKdeError(Exception):
    """Base class for every error raised by this package."""


class InvalidDensityError(BiasCorrectedKdeError):
    pass


class UnknownDensityError(BiasCorrectedKdeError):
    pass


class EmptySampleError(BiasCorrectedKdeError):
    pass


class InvalidSampleError(BiasCorrectedKdeError):
    pass


class BandwidthError(BiasCorrectedKdeError):
    pass


class UnsupportedMomentError(BiasCorrectedKdeError):
    pass


class DomainError(BiasCorrectedKdeError):
    pass


class InsufficientSupportError(BiasCorrectedKdeError):
    """A tabulation grid does not reach far enough past the requested points."""


class GridError(BiasCorrectedKdeError):
    pass


class DegenerateFitError(BiasCorrectedKdeError):
    pass


class InvalidPilotError(BiasCorrectedKdeError):
    """The pilot g is non-positive or non-finite at a sample point."""


class RenormalisationError(BiasCorrectedKdeError):
    pass


class EdgeError(BiasCorrectedKdeError):
    """A finite-difference stencil would leave the tabulated domain."""


class SearchFailureError(BiasCorrectedKdeError):
    pass


class ConfigError(BiasCorrectedKdeError):
    pass


class EmptyTableError(BiasCorrectedKdeError):
    pass


class ResolutionWarning(UserWarning):
    """Tabulation spacing is coarser than a quarter bandwidth."""

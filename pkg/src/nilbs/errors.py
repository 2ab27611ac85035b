"""Exception types raised across the package."""


class NilbsError(Exception):
    """Base class for all package errors."""


class SingularTransform(NilbsError):
    """A homogeneous transform could not be inverted."""


class SingularBlend(NilbsError):
    """The blended skinning matrix at a query point is (numerically) singular."""


class NonFiniteActivation(NilbsError):
    """An MLP activation became NaN or infinite."""


class DivergedTraining(NilbsError):
    """A training loss became non-finite."""


class ConfigError(NilbsError):
    """A configuration file or a set of inputs is unparseable or inconsistent."""


class InvalidResolution(NilbsError):
    """A grid resolution below 2 nodes per axis was requested."""


class IndexOutOfRange(NilbsError):
    """A pose index outside the dataset was requested."""


class IoFailure(NilbsError):
    """Reading or writing a file failed."""

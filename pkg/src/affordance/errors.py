"""Exception hierarchy shared across the package."""


class AffordanceError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateProjection(AffordanceError):
    pass


class InsufficientCorrespondences(AffordanceError):
    pass


class DegenerateConfiguration(AffordanceError):
    pass


class EmptyInput(AffordanceError, ValueError):
    pass


class BadWindow(AffordanceError, ValueError):
    pass


class OutOfWorkspace(AffordanceError):
    pass


class UnknownObject(AffordanceError, KeyError):
    pass


# label extraction
class NoContact(AffordanceError):
    pass


class Discard(AffordanceError):
    pass


class OutOfFrame(AffordanceError):
    pass


class CropInfeasible(AffordanceError):
    pass


# model / learners
class ShapeMismatch(AffordanceError, ValueError):
    pass


class EmptyDataset(AffordanceError, ValueError):
    pass


class InsufficientData(AffordanceError, ValueError):
    pass


# file formats / cli
class SchemaError(AffordanceError):
    pass


class ConfigError(AffordanceError):
    pass


class IoError(AffordanceError, OSError):
    """A dataset or output path cannot be read or written."""

"""Exception hierarchy.

Every error carries a stable ``code`` (the class name) so the CLI can print
one machine-parsable line per failure.
"""


class BusmorphError(Exception):
    """Base class for all package errors."""

    #: CLI exit status for this family of errors.
    exit_code = 2

    @property
    def code(self) -> str:
        return type(self).__name__


class UsageError(BusmorphError):
    exit_code = 1


# dataset
class MissingRoot(BusmorphError):
    pass


class EmptyDataset(BusmorphError):
    pass


class ClassTooSmall(BusmorphError):
    pass


class DimensionMismatch(BusmorphError):
    pass


# imgproc / contour / morphometry
class DecodeError(BusmorphError):
    pass


class EmptyMask(BusmorphError):
    pass


class ContourTooShort(BusmorphError):
    pass


class DegenerateRegion(BusmorphError):
    pass


# classifier
class BatchTooSmall(BusmorphError):
    pass


class NonFiniteLoss(BusmorphError):
    pass


class CorruptModelFile(BusmorphError):
    pass


class SchemaMismatch(BusmorphError):
    pass


class EmptyInput(BusmorphError):
    pass


# metrics
class LengthMismatch(BusmorphError):
    pass


class UnknownClass(BusmorphError):
    pass


# synthkit
class SpecOutOfCanvas(BusmorphError):
    pass

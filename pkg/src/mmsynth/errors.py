"""Exception classes shared across the package.

Every malformed input is rejected with one of these specific classes so
callers (and the CLI) can tell usage mistakes, broken files, and numerical
breakdown apart.
"""


class MmsynthError(Exception):
    """Base class for all package errors."""


class ShapeError(MmsynthError):
    """Array extents do not satisfy an operation's contract."""


class DomainError(MmsynthError):
    """Scalar argument outside its mathematical domain (e.g. t outside [0, 1])."""


class ContractError(MmsynthError):
    """A precondition other than shape/domain was violated."""


class ConfigError(MmsynthError):
    """Bad configuration: unknown key, unparsable value, invalid combination."""


class FormatError(MmsynthError):
    """A file does not follow its declared format (magic, version, dtype)."""


class CorruptionError(FormatError):
    """A file follows the format but is truncated or internally inconsistent."""


class NumericalError(MmsynthError):
    """Numerical failure: singular matrix, NaN during integration, etc."""


class TrainingDiverged(NumericalError):
    """Training aborted on a non-finite loss; message carries diagnostics."""

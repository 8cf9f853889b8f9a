# Exception hierarchy shared by every module.
# Each error carries a short machine code; the CLI prints "error[CODE]: ..."
# and exits with the class' exit_code (2 = bad input, 1 = runtime failure).


class HsmmError(Exception):
    """Base class for all errors raised by the interval HSMM tools"""

    code = "HSMM"
    exit_code = 1


class InputError(HsmmError, ValueError):
    """Invalid user input: malformed files, bad flags, impossible dimensions"""

    code = "INPUT"
    exit_code = 2


class EmptySequence(InputError):
    code = "EMPTY_SEQUENCE"


class UnknownSymbol(InputError):
    code = "UNKNOWN_SYMBOL"


class SchemaError(InputError):
    """Malformed dataset or model file. `line` is 1-based when known."""

    code = "SCHEMA"

    def __init__(self, message: str, line: int = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(InputError):
    code = "VALIDATION"


class InvalidDims(InputError):
    code = "INVALID_DIMS"


class InvalidThresholds(InputError):
    code = "INVALID_THRESHOLDS"


class UnknownScaleValue(InputError):
    code = "UNKNOWN_SCALE_VALUE"


class LengthExceeded(InputError):
    code = "LENGTH_EXCEEDED"


class DegenerateLattice(HsmmError, RuntimeError):
    code = "DEGENERATE_LATTICE"


class ImpossibleSequence(HsmmError, RuntimeError):
    code = "IMPOSSIBLE_SEQUENCE"


class TooLarge(HsmmError, RuntimeError):
    code = "TOO_LARGE"

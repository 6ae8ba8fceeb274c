"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A precondition on an argument (shape, range, mode) was violated."""


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


class NonDeterministicError(InvalidArgument):
    """A gradient check was asked to differentiate through a stochastic node."""


class DependencyError(RuntimeError):
    """A patch context was requested before its neighbours were reconstructed."""


class BitstreamError(Exception):
    """Base class for stream decoding failures."""

    exit_code = 4


class IntegrityError(BitstreamError):
    """Stream and model do not belong together (digest or kind mismatch)."""

    exit_code = 3


class CorruptStreamError(BitstreamError):
    """Stream is truncated, has a bad magic or an unknown version."""

    exit_code = 4

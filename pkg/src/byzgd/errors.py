"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Arguments violate an operation's preconditions (shape, range, emptiness)."""


class InvalidSpec(ValueError):
    """A problem, compressor, attack or run specification is malformed."""


class UnsupportedOperation(TypeError):
    """The operation is not defined for this kind of problem or attack."""


class DecodeError(ValueError):
    """A compressed payload cannot be parsed."""

"""Exception hierarchy shared by every kernel."""


class SorbetError(Exception):
    pass


class DomainError(SorbetError, ValueError):
    """Input outside the mathematical domain of an operation."""


class RangeError(SorbetError, ValueError):
    """Input outside a table's declared range."""


class FixedOverflowError(SorbetError, OverflowError):
    """A mantissa no longer fits its declared bit width."""


class DegenerateInputError(DomainError):
    pass


class StateError(SorbetError, ValueError):
    pass


class EncodingCapacityError(SorbetError, ValueError):
    """A level needs more spikes than there are timesteps."""


class ShapeError(SorbetError, ValueError):
    pass


class UnsupportedError(SorbetError, RuntimeError):
    pass

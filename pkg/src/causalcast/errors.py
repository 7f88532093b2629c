"""Exception types shared across the toolkit."""


class CausalcastError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for it."""

    exit_code = 2


class ConfigurationError(CausalcastError, ValueError):
    pass


class PanelError(CausalcastError, ValueError):
    """Malformed, ragged, duplicated, degenerate or partially covered data."""


class AlignmentError(CausalcastError, ValueError):
    pass


class SampleSizeError(CausalcastError, ValueError):
    pass


class DegenerateTestError(CausalcastError, ValueError):
    pass


class SpecialTokenError(CausalcastError, ValueError):
    pass


class NotFinalizedError(CausalcastError, ValueError):
    pass


class NumericalError(CausalcastError, ArithmeticError):
    """Linear algebra failed even after jitter escalation."""

    exit_code = 3


class SingularityError(NumericalError):
    pass

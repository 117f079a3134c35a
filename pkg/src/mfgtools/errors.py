"""Exception types shared across the toolkit.

Every error raised on a user-facing contract violation is a subclass of
MfgError so callers (and the CLI) can distinguish validation failures from
genuine bugs.
"""


class MfgError(Exception):
    """Base class for all toolkit errors."""


# --- scenario / model validation ------------------------------------------

class ShapeMismatch(MfgError):
    pass


class EmptyActionSet(MfgError):
    pass


class KernelNotStochastic(MfgError):
    """A discrete-mode kernel row does not sum to one (or has negative mass)."""


class GeneratorRowSum(MfgError):
    """A continuous-mode generator row does not sum to zero."""


class ModeMismatch(MfgError):
    """A solver was handed a kernel in the wrong time semantics."""


class NegativeRate(MfgError):
    """An off-diagonal transition rate is negative."""


class UnknownProtocol(MfgError):
    pass


class ConfigParseError(MfgError):
    """Scenario/config file could not be parsed; message carries field context."""

    def __init__(self, message, *, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class UnknownSubcommand(MfgError):
    pass


class InvalidProbability(MfgError):
    pass


# --- numerical integration / solvers ---------------------------------------

class StepUnstable(MfgError):
    """Integration left the sane region (|m(x)| > 2)."""


class NoConvergence(MfgError):
    """A local search failed to reach the requested tolerance."""


class NonFiniteValue(MfgError):
    pass


class Overflow(MfgError):
    pass


class TooLarge(MfgError):
    """The instance is too big for exhaustive enumeration."""


class GridMismatch(MfgError):
    pass


class DriftGeneratorMismatch(MfgError):
    """An explicit mean-field drift disagrees with the generator-induced one."""


class StateTooLarge(MfgError):
    pass


class OffSimplexStep(MfgError):
    pass


# --- simulation -------------------------------------------------------------

class KernelProbeFailure(MfgError):
    """Kernel invalid at an empirical mean field encountered during simulation."""


class InsufficientReplications(MfgError):
    pass


class NumericalBlowup(MfgError):
    pass


class StepInvalid(MfgError):
    pass


class NonIntegrable(MfgError):
    pass

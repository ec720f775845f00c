"""Exception types raised by pilotbox."""


class PilotBoxError(Exception):
    """Base class for all library errors."""


class DomainError(PilotBoxError, ValueError):
    """A position or time lies outside the domain where a quantity is defined."""


class ConfigError(PilotBoxError, ValueError):
    """Invalid configuration. ``violations`` lists every problem found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SingularityError(PilotBoxError, ArithmeticError):
    """The wavefunction (nearly) vanishes where a ratio involving it is needed."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class IntegrationError(PilotBoxError, RuntimeError):
    """Adaptive integration could not proceed (step underflow near a node).

    ``t`` and ``x`` hold the last accepted state.
    """

    def __init__(self, message, t=None, x=None):
        super().__init__(message)
        self.t = t
        self.x = x


class ConfinementError(IntegrationError):
    """A trajectory left the box by more than the clamping tolerance."""


class EnvelopeError(PilotBoxError, RuntimeError):
    """Rejection sampling met a density value above its envelope."""

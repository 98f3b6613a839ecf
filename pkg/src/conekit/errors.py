"""Exception types shared across the conekit modules."""


class ConekitError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class DomainError(ConekitError, ValueError):
    exit_code = 2


# geometry
class NotPositiveDefinite(ConekitError):
    exit_code = 4


class OnDivisor(ConekitError, ValueError):
    exit_code = 2


# audits
class StepUnderflow(ConekitError):
    exit_code = 4


class InconsistentFields(ConekitError):
    exit_code = 4


# solver
class DegreeMismatch(ConekitError):
    exit_code = 2


class NoConvergence(ConekitError):
    exit_code = 3

    def __init__(self, msg, epsilon=None):
        super().__init__(msg)
        self.epsilon = epsilon


class PositivityLost(ConekitError):
    exit_code = 3

    def __init__(self, msg, epsilon=None):
        super().__init__(msg)
        self.epsilon = epsilon


class TooCoarse(ConekitError):
    exit_code = 3


# bochner
class AnnulusUnresolved(ConekitError):
    exit_code = 3

    def __init__(self, msg, largest_usable_epsilon=None):
        super().__init__(msg)
        self.largest_usable_epsilon = largest_usable_epsilon


class NotCompactlySupported(ConekitError):
    exit_code = 4


# config
class ParseError(ConekitError):
    exit_code = 2


class SchemaViolation(ConekitError):
    exit_code = 2

    def __init__(self, msg, key=None):
        super().__init__(msg)
        self.key = key


class UnsafeTau(ConekitError):
    exit_code = 2

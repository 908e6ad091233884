"""Exception hierarchy shared by all modules."""


class PoctrlError(Exception):
    """Base class for all package errors."""


class InvalidProblemError(PoctrlError, ValueError):
    pass


class DegenerateProblemError(PoctrlError, ValueError):
    pass


class CourantViolationError(PoctrlError, ValueError):
    """Transition probabilities left [0, 1]: h is too large for dx."""


class StepSizeError(PoctrlError, ValueError):
    """A likelihood factor 1 + p * eta became nonpositive."""


class InstanceTooLargeError(PoctrlError, ValueError):
    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class ConfigError(PoctrlError, ValueError):
    pass

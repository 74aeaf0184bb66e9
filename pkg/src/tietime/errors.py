class TieTimeError(Exception):
    """Base class for errors raised by this package."""


class InvalidParameterError(TieTimeError, ValueError):
    pass


class AlreadyTiedError(InvalidParameterError):
    """Initial scores contain a tie, so T would be 0."""


class ConvergenceError(TieTimeError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class UnsupportedAnsatzError(TieTimeError, ValueError):
    pass

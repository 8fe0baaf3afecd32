"""Exception hierarchy shared by the analytic, simulation and CLI layers."""


class LLRError(Exception):
    """Base class for every error raised by llrlink."""


class InvalidArgumentError(LLRError, ValueError):
    pass


class UnstableLinkError(LLRError):
    """Utilisation reached or exceeded one; mean delays do not exist."""


class OutOfRegionError(LLRError):
    """The DS rate (or NDS rate) lies outside the low-latency region."""


class DegenerateCurveError(LLRError):
    pass


class TraceError(LLRError):
    """Malformed or empty packet trace."""


class EndOfTrace(LLRError):
    """A non-looping trace ran out of records. Ends a run; not a failure."""


class SimulationAbort(LLRError):
    """Queue grew past the abort threshold: effectively an unstable link."""

    def __init__(self, message, queue_length=None, time=None):
        super().__init__(message)
        self.queue_length = queue_length
        self.time = time


class EmptyResultError(LLRError):
    pass


class SweepError(LLRError):
    pass

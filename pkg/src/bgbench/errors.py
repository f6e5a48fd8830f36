"""Exception types shared across the toolkit."""


class BGBenchError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(BGBenchError, ValueError):
    pass


class DegenerateInputError(BGBenchError, ValueError):
    """A ratio or statistic is undefined for the given input."""


class PoolOverlapError(BGBenchError):
    """Evaluation background pool is the one used for training."""


class FormatError(BGBenchError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset

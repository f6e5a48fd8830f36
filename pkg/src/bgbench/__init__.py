"""Background-bias benchmarking for metric-learning retrieval."""

from bgbench.errors import (
    BGBenchError,
    DegenerateInputError,
    DimensionMismatchError,
    FormatError,
    PoolOverlapError,
)

__version__ = "0.1.0"

__all__ = [
    "BGBenchError",
    "DegenerateInputError",
    "DimensionMismatchError",
    "FormatError",
    "PoolOverlapError",
    "__version__",
]

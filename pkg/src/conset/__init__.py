"""Consideration sets as categorical random sets: estimation, explanation, clustering."""

__version__ = "0.1.0"

from conset.core import (  # noqa: E402
    ConsiderationSet,
    CountStatistic,
    Dataset,
    OptionSpace,
    ReducedPowerSet,
    build_reduced_power_set,
    count_statistics,
    encode_set,
    parse_set_literal,
)
from conset.errors import ConvergenceWarning, DataError  # noqa: E402

__all__ = [
    "ConsiderationSet",
    "ConvergenceWarning",
    "CountStatistic",
    "DataError",
    "Dataset",
    "OptionSpace",
    "ReducedPowerSet",
    "build_reduced_power_set",
    "count_statistics",
    "encode_set",
    "parse_set_literal",
]

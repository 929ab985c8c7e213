"""Latency models and a simulator for hot-data downloads from simplex-coded storage."""

from .core import (
    BernoulliTwoPoint,
    Exp,
    FairnessFirst,
    FixedHot,
    HotCold,
    MixedUniform,
    Pareto,
    ReplicateToAll,
    SelectOne,
    SimplexTopology,
    build_topology,
    restrict_topology,
)
from .errors import (
    ConfigError,
    DegenerateRegimeError,
    DivergenceError,
    InfiniteMomentError,
    InstabilityError,
    NumericError,
    ParameterError,
    SimplexQError,
)

__version__ = "0.1.0"

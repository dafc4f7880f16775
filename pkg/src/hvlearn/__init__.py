"""Hypervolume maximization as a loss-aggregation strategy for gradient training."""

from hvlearn.core import (
    INFINITY,
    ReferencePoint,
    aggregate_gradient,
    gamma_for_nu,
    hypervolume_weights,
    log_hypervolume,
    nu_for_mu,
    raw_hv_gradient,
)
from hvlearn.errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    FormatError,
    MismatchError,
    ShapeError,
)
from hvlearn.schedule import Action, ScheduleState, advance_on_stall, reference_point

__all__ = [
    "INFINITY",
    "Action",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "FormatError",
    "MismatchError",
    "ReferencePoint",
    "ScheduleState",
    "ShapeError",
    "advance_on_stall",
    "aggregate_gradient",
    "gamma_for_nu",
    "hypervolume_weights",
    "log_hypervolume",
    "nu_for_mu",
    "raw_hv_gradient",
    "reference_point",
]

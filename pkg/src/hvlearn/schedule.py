"""Adaptive reference point and the stall-driven training schedule.

The reference follows the batch: ``mu = (1 + 10**xi) * max_i l_i``. When
validation error stops improving for ``patience`` epochs, ``xi`` moves to the
next entry of the schedule; once the schedule is exhausted the learning rate
decays by ``lr_decay`` until it reaches ``lr_floor``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hvlearn.core import INFINITY, MIN_GAP, ReferencePoint, Source, as_loss_vector
from hvlearn.errors import ConfigError

LOSS_FLOOR = 1e-8

# relative slack for the "lr * decay >= floor" comparison
_LR_RTOL = 1e-9


def reference_point(losses, xi: float) -> ReferencePoint:
    """Adaptive reference ``(1 + 10**xi) * max(max_loss, LOSS_FLOOR)``.

    The result always strictly dominates ``losses`` by at least the admissible
    gap of :mod:`hvlearn.core`, even when ``10**xi`` underflows relative to the
    loss scale.
    """
    if xi == INFINITY:
        return ReferencePoint.mean()
    if math.isnan(xi) or xi == -INFINITY:
        raise ConfigError(f"xi must be finite or +inf, got {xi}")
    top = max(float(as_loss_vector(losses).max()), LOSS_FLOOR)
    mu = (1.0 + 10.0**xi) * top
    mu = max(mu, top + max(2 * MIN_GAP, 4 * float(np.spacing(top))))
    return ReferencePoint(mu=mu, xi=float(xi), source=Source.ADAPTIVE)


class Action(enum.Enum):
    NONE = "none"
    XI_ADVANCED = "xi_advanced"
    LR_DECAYED = "lr_decayed"
    SATURATED = "saturated"


@dataclass(frozen=True)
class ScheduleState:
    xi_schedule: tuple[float, ...]
    learning_rate: float
    xi_index: int = 0
    lr_floor: float = 0.001
    lr_decay: float = 0.1
    patience: int = 20
    stall_counter: int = 0
    best_val_metric: float = INFINITY
    epoch: int = 0
    max_epochs: int = 200

    def __post_init__(self):
        xs = tuple(float(x) for x in self.xi_schedule)
        object.__setattr__(self, "xi_schedule", xs)
        if not xs:
            raise ConfigError("xi schedule must not be empty")
        if any(math.isnan(x) or x == -INFINITY for x in xs):
            raise ConfigError(f"invalid xi value in schedule {xs}")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ConfigError(f"xi schedule must be strictly increasing, got {xs}")
        if not 0 <= self.xi_index < len(xs):
            raise ConfigError(f"xi_index {self.xi_index} out of range")
        if not self.learning_rate > 0 or not self.lr_floor > 0:
            raise ConfigError("learning rate and floor must be positive")
        if not 0 < self.lr_decay < 1:
            raise ConfigError(f"lr_decay must lie in (0, 1), got {self.lr_decay}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0 <= self.stall_counter <= self.patience:
            raise ConfigError("stall counter out of range")

    @property
    def xi(self) -> float:
        return self.xi_schedule[self.xi_index]


def advance_on_stall(state: ScheduleState, val_metric: float) -> tuple[ScheduleState, Action]:
    """Record one validation result and apply the schedule.

    Improvement is strict (``val_metric < best``); ties count as a stall. On
    the ``patience``-th consecutive stall exactly one of the following happens,
    in priority order: advance ``xi``, decay the learning rate, or report
    saturation (training continues unchanged).
    """
    epoch = state.epoch + 1
    if val_metric < state.best_val_metric:
        return (
            dataclasses.replace(state, best_val_metric=float(val_metric), stall_counter=0, epoch=epoch),
            Action.NONE,
        )

    stall = state.stall_counter + 1
    if stall < state.patience:
        return dataclasses.replace(state, stall_counter=stall, epoch=epoch), Action.NONE

    if state.xi_index + 1 < len(state.xi_schedule):
        nxt = dataclasses.replace(state, xi_index=state.xi_index + 1, stall_counter=0, epoch=epoch)
        return nxt, Action.XI_ADVANCED

    lr = state.learning_rate * state.lr_decay
    if lr >= state.lr_floor * (1 - _LR_RTOL):
        if math.isclose(lr, state.lr_floor, rel_tol=_LR_RTOL):
            lr = state.lr_floor
        nxt = dataclasses.replace(state, learning_rate=lr, stall_counter=0, epoch=epoch)
        return nxt, Action.LR_DECAYED

    return dataclasses.replace(state, stall_counter=0, epoch=epoch), Action.SATURATED


def parse_xi_schedule(text: str | Sequence) -> tuple[float, ...]:
    """Parse ``"-3,-2,-1,0,inf"`` (or a sequence) into a schedule tuple."""
    if isinstance(text, str):
        parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
    else:
        parts = list(text)
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"cannot parse xi schedule {text!r}") from exc

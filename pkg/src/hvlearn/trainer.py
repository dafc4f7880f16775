"""Minibatch SGD with momentum over mean or hypervolume aggregation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from hvlearn import models
from hvlearn.core import INFINITY, ReferencePoint, hypervolume_weights
from hvlearn.data import Batch, SplitDataset
from hvlearn.errors import ConfigError, ShapeError
from hvlearn.models import ModelSpec
from hvlearn.schedule import Action, ScheduleState, advance_on_stall, reference_point


class Aggregator(enum.Enum):
    MEAN = "mean"
    HYPERVOLUME = "hypervolume"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    aggregator: Aggregator = Aggregator.MEAN
    xi_schedule: tuple[float, ...] = (INFINITY,)
    batch_size: int = 500
    base_lr: float = 0.1
    momentum: float = 0.9
    patience: int = 20
    lr_decay: float = 0.1
    lr_floor: float = 0.001
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "xi_schedule", tuple(float(x) for x in self.xi_schedule))
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if not self.base_lr > 0:
            raise ConfigError("base_lr must be positive")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        self.initial_schedule()  # validates schedule, patience and decay eagerly

    def initial_schedule(self) -> ScheduleState:
        schedule = (INFINITY,) if self.aggregator is Aggregator.MEAN else self.xi_schedule
        return ScheduleState(
            xi_schedule=schedule,
            learning_rate=self.base_lr,
            lr_floor=min(self.lr_floor, self.base_lr),
            lr_decay=self.lr_decay,
            patience=self.patience,
            max_epochs=self.max_epochs,
        )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    xi: float
    mu_batch_mean: float
    learning_rate: float
    train_mean_loss: float
    train_max_loss: float
    val_error: float
    test_error: float
    action: str = Action.NONE.value


@dataclass
class RunLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_error: float = math.inf
    test_error_at_best: float = math.nan
    best_params: np.ndarray | None = None
    final_params: np.ndarray | None = None


def sgd_momentum_step(params, grad, velocity, lr: float, momentum: float):
    """Classical momentum: ``v' = m v + g``; ``p' = p - lr v'``."""
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    v = np.asarray(velocity, dtype=np.float64)
    if not p.shape == g.shape == v.shape:
        raise ShapeError(f"shapes differ: params {p.shape}, grad {g.shape}, velocity {v.shape}")
    v_new = momentum * v + g
    return p - lr * v_new, v_new


def step_direction(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    aggregator: Aggregator,
    xi: float,
    seed: int | None = None,
) -> tuple[np.ndarray, ReferencePoint, np.ndarray, np.ndarray]:
    """Aggregated descent gradient for one minibatch.

    Losses are evaluated once, the reference point and weights are computed
    from those values and then held fixed for the backward pass, so nothing
    is differentiated through ``mu``.

    Returns:
        ``(direction, reference, weights, losses)``.
    """
    losses = models.per_sample_losses(spec, params, batch, seed)
    if aggregator is Aggregator.MEAN:
        ref = ReferencePoint.mean()
    else:
        ref = reference_point(losses, xi)
    weights = hypervolume_weights(losses, ref)
    _, direction = models.weighted_gradient(spec, params, batch, weights, seed)
    return direction, ref, weights, losses


def train(config: RunConfig, dataset: SplitDataset, init_params: np.ndarray | None = None) -> RunLog:
    """Run the full schedule and return per-epoch metrics.

    The run is deterministic in ``config.seed``: the same generator supplies
    initialization, per-epoch shuffles and dropout seeds. Test error is
    reported at the parameters with the best validation error.
    """
    spec = config.model
    rng = np.random.default_rng(config.seed)
    params = models.init_params(spec, rng) if init_params is None else np.array(init_params, dtype=np.float64)
    velocity = np.zeros_like(params)
    state = config.initial_schedule()
    log = RunLog(best_params=params.copy(), final_params=params.copy())
    train_set = dataset.train
    n = train_set.size

    for epoch in range(1, config.max_epochs + 1):
        xi = state.xi
        lr = state.learning_rate
        order = rng.permutation(n)
        mus = []
        for start in range(0, n, config.batch_size):
            batch = train_set.take(order[start : start + config.batch_size])
            seed = int(rng.integers(2**63 - 1))
            direction, ref, _, _ = step_direction(spec, params, batch, config.aggregator, xi, seed)
            mus.append(ref.mu)
            params, velocity = sgd_momentum_step(params, direction, velocity, lr, config.momentum)

        train_losses = models.per_sample_losses(spec, params, train_set)
        val_error = models.classification_error(spec, params, dataset.validation)
        test_error = models.classification_error(spec, params, dataset.test)
        if val_error < log.best_val_error:
            log.best_val_error = val_error
            log.best_epoch = epoch
            log.test_error_at_best = test_error
            log.best_params = params.copy()
        state, action = advance_on_stall(state, val_error)
        log.records.append(
            EpochRecord(
                epoch=epoch,
                xi=xi,
                mu_batch_mean=float(np.mean(mus)) if mus else math.nan,
                learning_rate=lr,
                train_mean_loss=float(train_losses.mean()),
                train_max_loss=float(train_losses.max()),
                val_error=val_error,
                test_error=test_error,
                action=action.value,
            )
        )

    log.final_params = params
    return log

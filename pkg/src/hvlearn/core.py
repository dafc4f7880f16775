"""Single-solution hypervolume aggregation of per-sample losses.

With a common reference value ``mu`` for every objective, the log-hypervolume
of one solution is ``H = sum_i log(mu - l_i)``. Maximizing ``H`` by gradient
ascent is equivalent, after normalization, to descending along a convex
combination of per-sample gradients whose weights grow with the loss.

Sign convention: :func:`aggregate_gradient` returns the gradient of the
*minimized* weighted loss (subtract it to descend). :func:`raw_hv_gradient`
keeps the ascent sign of ``grad H``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from hvlearn.errors import DomainError, ShapeError

INFINITY = math.inf

# smallest admissible gap mu - l_i
MIN_GAP = 1e-12


class Source(enum.Enum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class ReferencePoint:
    """Reference value shared by every objective.

    Attributes:
        mu: Reference value. Unused (and may be ``inf``) in mean-loss mode.
        xi: Exponent that generated ``mu`` under the adaptive rule, ``INFINITY``
            for mean-loss mode, or ``None`` for a fixed reference.
        source: Whether ``mu`` was fixed by the caller or computed adaptively.
    """

    mu: float
    xi: float | None = None
    source: Source = Source.FIXED

    def __post_init__(self):
        if not self.mean_mode and not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite outside mean-loss mode, got {self.mu}")

    @property
    def mean_mode(self) -> bool:
        return self.xi is not None and self.xi == INFINITY

    @classmethod
    def mean(cls) -> "ReferencePoint":
        return cls(mu=INFINITY, xi=INFINITY, source=Source.ADAPTIVE)


RefLike = Union[ReferencePoint, float]


def as_loss_vector(values) -> np.ndarray:
    """Validate per-sample losses and return them as a read-only float64 array.

    Raises:
        DomainError: if the vector is empty, or an entry is non-finite or negative.
    """
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size < 1:
        raise DomainError("loss vector must have at least one entry")
    lo, hi = arr.min(), arr.max()  # NaN propagates through both
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise DomainError("losses must be finite")
    if lo < 0:
        raise DomainError("losses must be nonnegative")
    arr.setflags(write=False)
    return arr


def _as_ref(ref: RefLike) -> ReferencePoint:
    if isinstance(ref, ReferencePoint):
        return ref
    return ReferencePoint(mu=float(ref))


def _gaps(losses: np.ndarray, ref: ReferencePoint) -> np.ndarray:
    gaps = ref.mu - losses
    if np.any(gaps < MIN_GAP):
        raise DomainError(
            f"reference mu={ref.mu!r} does not dominate max loss {losses.max()!r}"
        )
    return gaps


def log_hypervolume(losses, ref: RefLike) -> float:
    """Log-hypervolume ``sum_i log(mu - l_i)`` of a single solution."""
    ref = _as_ref(ref)
    if ref.mean_mode:
        raise DomainError("log-hypervolume is undefined in mean-loss mode")
    l = as_loss_vector(losses)
    return float(np.sum(np.log(_gaps(l, ref))))


def hypervolume_weights(losses, ref: RefLike) -> np.ndarray:
    """Simplex weights ``w_i = (1/(mu-l_i)) / sum_j 1/(mu-l_j)``.

    In mean-loss mode the weights are exactly uniform.
    """
    ref = _as_ref(ref)
    l = as_loss_vector(losses)
    if ref.mean_mode:
        return np.full(l.size, 1.0 / l.size)
    beta = 1.0 / _gaps(l, ref)
    return beta / beta.sum()


def _check_grads(grads, n_rows: int) -> np.ndarray:
    g = np.asarray(grads, dtype=np.float64)
    if g.ndim != 2:
        raise ShapeError(f"gradient matrix must be 2-D, got shape {g.shape}")
    if g.shape[0] != n_rows:
        raise ShapeError(f"gradient matrix has {g.shape[0]} rows, expected {n_rows}")
    return g


def aggregate_gradient(grads, weights: Sequence[float]) -> np.ndarray:
    """Weighted sum ``sum_i w_i grad l_i``; subtract it to take a descent step."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    g = _check_grads(grads, w.size)
    return w @ g


def raw_hv_gradient(losses, grads, ref: RefLike) -> np.ndarray:
    """Unnormalized ascent gradient ``-sum_i grad l_i / (mu - l_i)`` of H."""
    ref = _as_ref(ref)
    if ref.mean_mode:
        raise DomainError("hypervolume gradient is undefined in mean-loss mode")
    l = as_loss_vector(losses)
    g = _check_grads(grads, l.size)
    return -(1.0 / _gaps(l, ref)) @ g


def nu_for_mu(c1: float, c2: float, mu: float) -> float:
    """Bound-tightness factor obtained for reference ``mu`` when every loss
    lies in ``[c1, c2]``."""
    if c1 > c2:
        raise DomainError(f"need c1 <= c2, got c1={c1}, c2={c2}")
    if mu <= c2:
        raise DomainError(f"need mu > c2, got mu={mu}, c2={c2}")
    return max((mu - c1) / (mu - c2) - 1.0, 1.0 - (mu - c2) / (mu - c1))


def gamma_for_nu(c1: float, c2: float, nu: float) -> float:
    """Reference threshold above which the weight deviation is at most ``nu``."""
    if c1 > c2:
        raise DomainError(f"need c1 <= c2, got c1={c1}, c2={c2}")
    if not nu > 0:
        raise DomainError(f"need nu > 0, got {nu}")
    return max(c2, ((1.0 + nu) * c2 - c1) / nu, (c2 - (1.0 - nu) * c1) / nu)

"""Numerical certification of the mean-loss / hypervolume bounds.

Each certificate works on a :class:`ToyProblem` of quadratic losses. It
locates the optimum of one problem by brute-force grid search followed by
Newton refinement, estimates the loss bounds ``c1, c2`` and the gradient-norm
bound ``c3`` by dense sampling of the ``epsilon``-ball around it, and checks
the corresponding bound on the other problem at sampled perturbations. The
bounds hold for *some* radius ``epsilon' <= epsilon``; the certifier tries
``epsilon / 2**k`` for ``k = 0..10`` and accepts the first rung that works.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from hvlearn import core
from hvlearn.core import as_loss_vector, gamma_for_nu, hypervolume_weights, nu_for_mu
from hvlearn.errors import ConvergenceError, DomainError, ShapeError

TOLERANCE = 1e-9
GRAD_TOL = 1e-10
CONSTANT_SAMPLES = 10_000
CONSTANT_MARGIN = 0.01
LADDER_RUNGS = 10


@dataclass(frozen=True)
class ToyProblem:
    """Losses ``l_i(theta) = scale_i * ||theta - center_i||**2 + offset_i`` on the
    open ball ``||theta|| < radius``."""

    centers: np.ndarray
    scales: np.ndarray
    offsets: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 2:
            raise ShapeError(f"centers must have shape (N, d), got {c.shape}")
        n = c.shape[0]
        s = np.broadcast_to(np.asarray(self.scales, dtype=np.float64), (n,)).copy()
        o = np.broadcast_to(np.asarray(self.offsets, dtype=np.float64), (n,)).copy()
        if np.any(s <= 0) or np.any(o < 0):
            raise DomainError("scales must be positive and offsets nonnegative")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "offsets", o)

    @classmethod
    def one_dim(cls, centers, scales=1.0, offsets=0.0, radius=3.0) -> "ToyProblem":
        c = np.asarray(centers, dtype=np.float64).reshape(-1, 1)
        return cls(c, np.broadcast_to(scales, c.shape[0]), np.broadcast_to(offsets, c.shape[0]), radius)

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def losses(self, theta) -> np.ndarray:
        """Losses at ``theta`` of shape ``(d,)`` -> ``(N,)``, or ``(M, d)`` -> ``(M, N)``."""
        t = np.asarray(theta, dtype=np.float64)
        diff = t[..., None, :] - self.centers
        return self.scales * np.sum(diff**2, axis=-1) + self.offsets

    def grads(self, theta) -> np.ndarray:
        t = np.asarray(theta, dtype=np.float64)
        return 2.0 * self.scales[:, None] * (t[..., None, :] - self.centers)

    def sup_loss(self) -> float:
        """Supremum of every loss over the domain ball."""
        dist = np.linalg.norm(self.centers, axis=1) + self.radius
        return float(np.max(self.scales * dist**2 + self.offsets))

    def mean_loss(self, theta) -> np.ndarray:
        return self.losses(theta).mean(axis=-1)

    def hypervolume(self, theta, mu: float) -> np.ndarray:
        gaps = mu - self.losses(theta)
        if np.any(gaps <= 0):
            raise DomainError(f"mu={mu} does not dominate the losses")
        return np.sum(np.log(gaps), axis=-1)


def random_toy_problem(rng: np.random.Generator) -> ToyProblem:
    n = int(rng.integers(2, 6))
    d = int(rng.integers(1, 3))
    return ToyProblem(
        centers=rng.uniform(-1.0, 1.0, size=(n, d)),
        scales=rng.uniform(0.5, 3.0, size=n),
        offsets=rng.uniform(0.0, 1.0, size=n),
        radius=3.0,
    )


class Theorem(enum.Enum):
    MEAN_TO_H = "mean_to_h"
    H_TO_MEAN = "h_to_mean"


class Verdict(enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_APPLICABLE = "not_applicable"


@dataclass
class BoundCertificate:
    theorem: Theorem
    theta_star: np.ndarray
    epsilon: float
    epsilon_prime: float
    c1: float
    c2: float
    c3: float
    nu: float
    gamma: float | None
    mu: float
    num_samples: int
    max_violation: float
    verdict: Verdict
    grad_norm: float = 0.0
    note: str = ""

    @property
    def applicable(self) -> bool:
        return self.verdict is not Verdict.NOT_APPLICABLE

    def to_record(self) -> str:
        """``key=value`` lines, one field per line."""
        out = []
        for key, value in asdict(self).items():
            if isinstance(value, enum.Enum):
                value = value.value
            elif isinstance(value, np.ndarray):
                value = ",".join(format(v, ".17g") for v in value)
            elif isinstance(value, float):
                value = format(value, ".17g")
            out.append(f"{key}={value}")
        return "\n".join(out)


def _ball_samples(rng: np.random.Generator, dim: int, radius: float, count: int) -> np.ndarray:
    """Uniform samples in the closed ball (rejection sampling) plus the ``2*dim``
    axis-aligned boundary points."""
    pts = []
    have = 0
    while have < count:
        cand = rng.uniform(-radius, radius, size=(2 * count, dim))
        cand = cand[np.sum(cand**2, axis=1) <= radius**2]
        pts.append(cand)
        have += cand.shape[0]
    axes = np.concatenate([np.eye(dim), -np.eye(dim)]) * radius
    return np.concatenate([np.concatenate(pts)[:count], axes])


def _grid(problem: ToyProblem) -> np.ndarray:
    per_axis = 2001 if problem.dim == 1 else 201
    axis = np.linspace(-problem.radius, problem.radius, per_axis)
    mesh = np.stack(np.meshgrid(*([axis] * problem.dim), indexing="ij"), axis=-1).reshape(-1, problem.dim)
    return mesh[np.sum(mesh**2, axis=1) < problem.radius**2]


def _newton(problem: ToyProblem, theta, grad_hess, objective, maximize: bool, max_iter: int = 100):
    theta = np.array(theta, dtype=np.float64)
    sign = -1.0 if maximize else 1.0
    for _ in range(max_iter):
        g, h = grad_hess(theta)
        if np.linalg.norm(g) <= GRAD_TOL:
            return theta, float(np.linalg.norm(g))
        step = np.linalg.solve(h, g)
        t = 1.0
        base = sign * objective(theta)
        while t > 1e-12:
            cand = theta - t * step
            try:
                val = sign * objective(cand)
            except DomainError:
                val = math.inf
            if np.linalg.norm(cand) < problem.radius and val <= base + 1e-15 * (1 + abs(base)):
                break
            t *= 0.5
        else:
            break
        theta = cand
    g, _ = grad_hess(theta)
    gn = float(np.linalg.norm(g))
    if gn > GRAD_TOL:
        raise ConvergenceError(f"refinement stalled with gradient norm {gn:.3e}")
    return theta, gn


def minimize_mean_loss(problem: ToyProblem) -> tuple[np.ndarray, float]:
    """Grid search plus Newton refinement of the mean loss."""
    grid = _grid(problem)
    start = grid[np.argmin(problem.mean_loss(grid))]

    def grad_hess(t):
        g = problem.grads(t).mean(axis=0)
        h = 2.0 * problem.scales.mean() * np.eye(problem.dim)
        return g, h

    return _newton(problem, start, grad_hess, lambda t: float(problem.mean_loss(t)), maximize=False)


def maximize_hypervolume(problem: ToyProblem, mu: float) -> tuple[np.ndarray, float]:
    """Grid search plus Newton refinement of ``H(mu, .)``."""
    if mu <= problem.sup_loss():
        raise DomainError(f"mu={mu} does not dominate the losses over the domain (sup {problem.sup_loss()})")
    grid = _grid(problem)
    start = grid[np.argmax(problem.hypervolume(grid, mu))]

    def grad_hess(t):
        beta = 1.0 / (mu - problem.losses(t))
        gl = problem.grads(t)
        g = -(beta @ gl)
        h = -(np.einsum("i,ij,ik->jk", beta**2, gl, gl) + 2.0 * np.sum(beta * problem.scales) * np.eye(problem.dim))
        return g, h

    return _newton(problem, start, grad_hess, lambda t: float(problem.hypervolume(t, mu)), maximize=True)


def ball_constants(problem: ToyProblem, center, epsilon: float, rng: np.random.Generator, count: int = CONSTANT_SAMPLES):
    """Sampled ``(c1, c2, c3)`` over the epsilon-ball, widened by a 1% margin."""
    pts = center + _ball_samples(rng, problem.dim, epsilon, count)
    pts = np.concatenate([pts, center[None, :]])
    losses = problem.losses(pts)
    gnorm = np.linalg.norm(problem.grads(pts), axis=-1)
    lo, hi = float(losses.min()), float(losses.max())
    pad = CONSTANT_MARGIN * (hi - lo)
    return max(lo - pad, 0.0), hi + pad, (1.0 + CONSTANT_MARGIN) * float(gnorm.max())


def _check_ball(problem: ToyProblem, theta_star, epsilon: float) -> None:
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if np.linalg.norm(theta_star) + epsilon >= problem.radius:
        raise DomainError("epsilon-ball around the optimum leaves the domain")


def _ladder(epsilon, rng, dim, grid, violation_fn):
    best = (math.inf, epsilon)
    for k in range(LADDER_RUNGS + 1):
        eps_p = epsilon / 2**k
        deltas = _ball_samples(rng, dim, eps_p, grid)
        worst = float(np.max(violation_fn(deltas, eps_p)))
        if worst < best[0]:
            best = (worst, eps_p)
        if worst <= TOLERANCE:
            return worst, eps_p, deltas.shape[0]
    return best[0], best[1], deltas.shape[0]


def certify_theorem1(
    problem: ToyProblem,
    nu: float,
    epsilon: float,
    grid: int = 10_000,
    mu: float | None = None,
    seed: int = 0,
) -> BoundCertificate:
    """Certify that a mean-loss minimizer is nearly optimal for the hypervolume.

    Checks ``H(mu, t*+d) <= H(mu, t*) + nu*c3*eps'*N/(mu-c2)`` for sampled
    ``||d|| <= eps'``. ``mu`` defaults to ``1.01 * gamma``; a ``mu`` at or
    below ``gamma`` yields a not-applicable certificate.
    """
    rng = np.random.default_rng(seed)
    theta_star, gnorm = minimize_mean_loss(problem)
    _check_ball(problem, theta_star, epsilon)
    c1, c2, c3 = ball_constants(problem, theta_star, epsilon, rng)
    gamma = gamma_for_nu(c1, c2, nu)
    mu = 1.01 * gamma if mu is None else float(mu)
    cert = dict(
        theorem=Theorem.MEAN_TO_H, theta_star=theta_star, epsilon=epsilon, c1=c1, c2=c2, c3=c3,
        nu=nu, gamma=gamma, mu=mu, grad_norm=gnorm,
    )
    if not mu > gamma:
        return BoundCertificate(
            **cert, epsilon_prime=math.nan, num_samples=0, max_violation=math.nan,
            verdict=Verdict.NOT_APPLICABLE, note="mu <= gamma",
        )

    h_star = float(problem.hypervolume(theta_star, mu))
    n = problem.n

    def violation(deltas, eps_p):
        return problem.hypervolume(theta_star + deltas, mu) - h_star - nu * c3 * eps_p * n / (mu - c2)

    worst, eps_p, count = _ladder(epsilon, rng, problem.dim, grid, violation)
    return BoundCertificate(
        **cert, epsilon_prime=eps_p, num_samples=count, max_violation=worst,
        verdict=Verdict.PASS if worst <= TOLERANCE else Verdict.FAIL,
    )


def certify_theorem2(
    problem: ToyProblem,
    mu: float,
    epsilon: float,
    grid: int = 10_000,
    seed: int = 0,
) -> BoundCertificate:
    """Certify that a hypervolume maximizer is nearly optimal for the mean loss.

    Checks ``J(t*+d) >= J(t*) - nu*c3*eps'`` with ``nu = nu_for_mu(c1, c2, mu)``.
    """
    rng = np.random.default_rng(seed)
    theta_star, gnorm = maximize_hypervolume(problem, mu)
    _check_ball(problem, theta_star, epsilon)
    c1, c2, c3 = ball_constants(problem, theta_star, epsilon, rng)
    nu = nu_for_mu(c1, c2, mu)
    j_star = float(problem.mean_loss(theta_star))

    def violation(deltas, eps_p):
        return j_star - nu * c3 * eps_p - problem.mean_loss(theta_star + deltas)

    worst, eps_p, count = _ladder(epsilon, rng, problem.dim, grid, violation)
    return BoundCertificate(
        theorem=Theorem.H_TO_MEAN, theta_star=theta_star, epsilon=epsilon, epsilon_prime=eps_p,
        c1=c1, c2=c2, c3=c3, nu=nu, gamma=None, mu=mu, num_samples=count,
        max_violation=worst, verdict=Verdict.PASS if worst <= TOLERANCE else Verdict.FAIL,
        grad_norm=gnorm,
    )


def check_weight_deviation(losses, mu: float) -> float:
    """Largest ``|N w_i - 1|`` for the hypervolume weights at reference ``mu``."""
    l = as_loss_vector(losses)
    w = hypervolume_weights(l, mu)
    return float(np.max(np.abs(l.size * w - 1.0)))


@dataclass
class LimitReport:
    mean_direction: np.ndarray
    reference_mean: np.ndarray
    max_direction: np.ndarray
    reference_max: np.ndarray
    mean_deviation: float
    max_deviation: float
    argmax_set: list[int] = field(default_factory=list)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.linalg.norm(b)
    diff = np.linalg.norm(a - b)
    return float(diff / scale) if scale > 0 else float(diff)


def limit_checks(losses, grads, xi_large: float = 6.0, xi_small: float = -6.0) -> LimitReport:
    """Compare the normalized hypervolume direction with its two limits.

    Directions follow the descent convention of :func:`core.aggregate_gradient`.
    With ``mu = (1 + 10**xi) * max_i l_i``: at large ``xi`` the direction should
    match the mean gradient, near the lower bound it should match the average
    gradient over the samples attaining the maximum loss.
    """
    l = as_loss_vector(losses)
    g = np.asarray(grads, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != l.size:
        raise ShapeError(f"gradient matrix of shape {g.shape} for {l.size} losses")
    top = float(l.max())
    far = core.aggregate_gradient(g, hypervolume_weights(l, (1.0 + 10.0**xi_large) * top))
    near = core.aggregate_gradient(g, hypervolume_weights(l, (1.0 + 10.0**xi_small) * top))
    s = np.flatnonzero(l == top)
    mean_ref = g.mean(axis=0)
    max_ref = g[s].mean(axis=0)
    return LimitReport(
        mean_direction=far, reference_mean=mean_ref, max_direction=near, reference_max=max_ref,
        mean_deviation=_rel(far, mean_ref), max_deviation=_rel(near, max_ref), argmax_set=s.tolist(),
    )


@dataclass
class BatteryResult:
    certificates: list[BoundCertificate]
    weight_cases: int
    weight_worst_excess: float
    limit_cases: int
    limit_worst: float

    @property
    def failures(self) -> list[BoundCertificate]:
        return [c for c in self.certificates if c.verdict is Verdict.FAIL]

    @property
    def passed(self) -> bool:
        return not self.failures and self.weight_worst_excess <= 1e-12 and self.limit_worst <= 1e-4


def random_limit_case(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random batch whose maximum loss is separated from the rest by a factor 2.

    Exact ties at the maximum are included a quarter of the time.
    """
    n = int(rng.integers(2, 9))
    top = rng.uniform(0.5, 2.0)
    losses = rng.uniform(0.0, 0.5, size=n) * top
    ties = 2 if n > 2 and rng.random() < 0.25 else 1
    losses[rng.choice(n, size=ties, replace=False)] = top
    grads = rng.standard_normal((n, int(rng.integers(3, 11))))
    return losses, grads


def random_weight_case(rng: np.random.Generator, nu: float | None = None) -> tuple[np.ndarray, float, float]:
    """Random losses, a prescribed ``nu`` and a reference slightly above its ``gamma``."""
    losses = rng.uniform(0.0, 5.0, size=int(rng.integers(1, 20)))
    nu = rng.uniform(0.01, 2.0) if nu is None else nu
    gamma = gamma_for_nu(float(losses.min()), float(losses.max()), nu)
    mu = gamma * (1.0 + rng.uniform(1e-9, 1.0)) + 1e-9
    return losses, nu, mu


def run_battery(
    n_problems: int = 50,
    nu: float = 0.5,
    epsilon: float = 0.1,
    grid: int = 10_000,
    weight_cases: int = 10_000,
    limit_cases: int = 100,
    seed: int = 0,
) -> BatteryResult:
    """Full certification battery over randomized toy problems."""
    rng = np.random.default_rng(seed)
    certs = []
    for k in range(n_problems):
        problem = random_toy_problem(rng)
        certs.append(certify_theorem1(problem, nu, epsilon, grid, seed=seed + k))
        mu = 1.5 * problem.sup_loss()
        certs.append(certify_theorem2(problem, mu, epsilon, grid, seed=seed + k))

    worst_excess = -math.inf
    for _ in range(weight_cases):
        losses, case_nu, mu = random_weight_case(rng, nu)
        dev = check_weight_deviation(losses, mu)
        bound = nu_for_mu(float(losses.min()), float(losses.max()), mu)
        worst_excess = max(worst_excess, dev - min(bound, case_nu))

    limit_worst = 0.0
    for _ in range(limit_cases):
        report = limit_checks(*random_limit_case(rng))
        limit_worst = max(limit_worst, report.mean_deviation, report.max_deviation)

    return BatteryResult(certs, weight_cases, worst_excess, limit_cases, limit_worst)

"""Numerical check of the federated-SGD distance recurrence on quadratic federations.

Participant ``i`` minimizes ``Phi_i(w) = lam_i / 2 * ||w - c_i||^2`` with
data weight ``p_i``. The global objective ``Phi = sum_i p_i Phi_i`` is then
``min lam_i``-strongly convex and ``max lam_i``-smooth with a closed-form
optimum, and stochastic gradients are exact gradients plus isotropic
Gaussian noise of known size. Local SGD runs ``local_steps`` noisy steps
per participant between weighted averages, and the squared distance of the
(virtual) weighted average to the optimum is recorded after every step.

:func:`check_recurrence` tests, step by step, ::

    delta[m+1] <= (1 - mu eta_m) delta[m] + 8 eta_m^2 (E - 1)^2 G^2
                  + eta_m^2 sum_i p_i^2 dG_i^2 + 3 Gamma / (8 L)

on the repetition-averaged series, together with the three convergence
conditions (decaying step size, contraction factor in (0, 1), finite
constant terms).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import UsageError

__all__ = [
    "QuadraticFederation",
    "DeltaSeries",
    "RecurrenceReport",
    "make_quadratic_problem",
    "decaying_schedule",
    "run_fed_sgd",
    "recurrence_bound",
    "check_recurrence",
    "estimate_gradient_noise",
]


@dataclass(frozen=True)
class QuadraticFederation:
    curvatures: np.ndarray
    centers: np.ndarray
    weights: np.ndarray
    noise_sd: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.curvatures, dtype=np.float64).reshape(-1)
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim == 1:
            c = c.reshape(-1, 1)
        p = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        sd = np.broadcast_to(np.asarray(self.noise_sd, dtype=np.float64), lam.shape).copy()
        if np.any(lam <= 0) or np.any(p < 0) or np.any(sd < 0):
            raise UsageError("curvatures must be > 0, weights and noise >= 0")
        if not (lam.size == c.shape[0] == p.size):
            raise UsageError("curvatures, centers and weights disagree on n")
        object.__setattr__(self, "curvatures", lam)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", p / p.sum())
        object.__setattr__(self, "noise_sd", sd)

    @property
    def n(self) -> int:
        return self.curvatures.size

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def mu(self) -> float:
        return float(self.curvatures.min())

    @property
    def smoothness(self) -> float:
        return float(self.curvatures.max())

    @property
    def w_star(self) -> np.ndarray:
        pl = self.weights * self.curvatures
        return pl @ self.centers / pl.sum()

    def local_values(self, w: np.ndarray) -> np.ndarray:
        return 0.5 * self.curvatures * np.sum((w - self.centers) ** 2, axis=1)

    def objective(self, w: np.ndarray) -> float:
        return float(self.weights @ self.local_values(np.asarray(w, dtype=np.float64)))

    def gradients(self, w: np.ndarray) -> np.ndarray:
        """Exact local gradients; ``w`` is ``[dim]`` or ``[n, dim]``."""
        return self.curvatures[:, None] * (w - self.centers)

    @property
    def gamma(self) -> float:
        """Global optimum minus the weighted local optima (each local optimum is 0)."""
        return self.objective(self.w_star)

    @property
    def grad_variance(self) -> np.ndarray:
        """``dG_i^2``: expected squared norm of the stochastic-gradient noise."""
        return self.noise_sd**2 * self.dim


@dataclass(frozen=True)
class DeltaSeries:
    deltas: np.ndarray
    etas: np.ndarray
    grad_norm_max: float
    local_steps: int
    reps: int


@dataclass(frozen=True)
class RecurrenceReport:
    violations: int
    total: int
    delta_final: float
    delta_0: float
    conditions: dict

    def to_json(self) -> dict:
        return {
            "violations": int(self.violations),
            "total": int(self.total),
            "delta_final": float(self.delta_final),
            "delta_0": float(self.delta_0),
            "conditions": {k: bool(v) for k, v in self.conditions.items()},
        }


def make_quadratic_problem(
    n: int,
    dim: int,
    heterogeneity: float,
    seed: int,
    noise: float = 0.1,
) -> QuadraticFederation:
    """Random quadratic federation.

    ``lam_i ~ U[1, 1 + heterogeneity]``, ``c_i ~ N(0, heterogeneity^2 I)``,
    weights from random local sizes in ``[50, 150]``, per-coordinate noise
    ``noise * U[0.5, 1.5]`` per participant.
    """
    if n < 2 or dim < 1:
        raise UsageError(f"need n >= 2 and dim >= 1, got n={n}, dim={dim}")
    if heterogeneity < 0 or noise < 0:
        raise UsageError("heterogeneity and noise must be >= 0")
    rng = np.random.default_rng(seed)
    lam = rng.uniform(1.0, 1.0 + heterogeneity, size=n)
    centers = heterogeneity * rng.standard_normal((n, dim))
    sizes = rng.integers(50, 151, size=n)
    sd = noise * rng.uniform(0.5, 1.5, size=n)
    return QuadraticFederation(lam, centers, sizes, sd)


def decaying_schedule(eta0: float, decay: float) -> Callable[[int], float]:
    """``eta_m = eta0 / (1 + m / decay)``."""
    if not eta0 >= 0 or not decay > 0:
        raise UsageError("need eta0 >= 0 and decay > 0")
    return lambda m: eta0 / (1.0 + m / decay)


def _etas(schedule, steps: int) -> np.ndarray:
    if callable(schedule):
        etas = np.array([schedule(m) for m in range(steps)], dtype=np.float64)
    else:
        etas = np.asarray(schedule, dtype=np.float64).reshape(-1)
        if etas.size == 1:
            etas = np.full(steps, etas[0])
        elif etas.size < steps:
            raise UsageError(f"schedule has {etas.size} entries for {steps} steps")
        etas = etas[:steps]
    if np.any(etas < 0):
        raise UsageError("learning rates must be non-negative")
    return etas


def run_fed_sgd(
    problem: QuadraticFederation,
    eta_schedule: Union[Callable[[int], float], Sequence[float], float],
    local_steps: int,
    rounds: int,
    reps: int,
    seed: int,
    w0: Optional[np.ndarray] = None,
) -> DeltaSeries:
    """Local SGD with weighted averaging every ``local_steps`` steps.

    All participants start each round from the global model (``w0``, by
    default the all-ones vector). The returned ``deltas[m]`` is the
    repetition mean of ``||sum_i p_i w_i(m) - w*||^2`` for
    ``m = 0 .. rounds * local_steps``.
    """
    if local_steps < 1 or rounds < 1 or reps < 1:
        raise UsageError("local_steps, rounds and reps must be >= 1")
    steps = local_steps * rounds
    etas = _etas(eta_schedule, steps)
    rng = np.random.default_rng(seed)
    n, dim = problem.n, problem.dim
    p = problem.weights
    w_star = problem.w_star
    start = np.ones(dim) if w0 is None else np.asarray(w0, dtype=np.float64)
    w = np.broadcast_to(start, (reps, n, dim)).copy()
    sd = problem.noise_sd[None, :, None]
    lam = problem.curvatures[None, :, None]
    c = problem.centers[None, :, :]

    deltas = np.empty(steps + 1)
    avg = np.einsum("i,rid->rd", p, w)
    deltas[0] = np.mean(np.sum((avg - w_star) ** 2, axis=1))
    gmax = 0.0
    for m in range(steps):
        g = lam * (w - c) + sd * rng.standard_normal((reps, n, dim))
        gmax = max(gmax, float(np.sqrt(np.max(np.sum(g * g, axis=2)))))
        w -= etas[m] * g
        avg = np.einsum("i,rid->rd", p, w)
        if (m + 1) % local_steps == 0:
            w[:] = avg[:, None, :]
        deltas[m + 1] = np.mean(np.sum((avg - w_star) ** 2, axis=1))
    return DeltaSeries(deltas, etas, gmax, local_steps, reps)


def recurrence_bound(
    delta: float,
    eta: float,
    problem: QuadraticFederation,
    local_steps: int,
    grad_bound: float,
) -> float:
    """Right-hand side of the one-step distance recurrence."""
    p = problem.weights
    return (
        (1.0 - problem.mu * eta) * delta
        + 8.0 * eta**2 * (local_steps - 1) ** 2 * grad_bound**2
        + eta**2 * float(np.sum(p**2 * problem.grad_variance))
        + 3.0 * problem.gamma / (8.0 * problem.smoothness)
    )


def check_recurrence(
    series: DeltaSeries,
    problem: QuadraticFederation,
    local_steps: Optional[int] = None,
    slack: float = 1.0,
    grad_bound: Optional[float] = None,
) -> RecurrenceReport:
    """Count steps where ``delta[m+1] > slack * bound(delta[m])`` and test the
    convergence conditions.

    ``grad_bound`` defaults to the largest stochastic-gradient norm seen
    during the run.
    """
    if slack < 1.0:
        raise UsageError(f"slack must be >= 1, got {slack}")
    if local_steps is None:
        local_steps = series.local_steps
    if grad_bound is None:
        grad_bound = series.grad_norm_max
    if grad_bound is None or not np.isfinite(grad_bound):
        raise UsageError("gradient bound G is not available")
    d = series.deltas
    etas = series.etas
    violations = 0
    for m in range(etas.size):
        rhs = slack * recurrence_bound(d[m], etas[m], problem, local_steps, grad_bound)
        if d[m + 1] > rhs * (1.0 + 1e-12):
            violations += 1
    factors = 1.0 - problem.mu * etas
    terms = np.concatenate(
        [[(local_steps - 1) ** 2 * grad_bound**2], problem.grad_variance, [3.0 * problem.gamma / (8.0 * problem.smoothness)]]
    )
    conditions = {
        "eta_decays": bool(np.all(np.diff(etas) <= 0) and etas[-1] < etas[0]),
        "contraction": bool(np.all((factors > 0) & (factors < 1))),
        "bounded_terms": bool(np.all(np.isfinite(terms))),
    }
    return RecurrenceReport(violations, int(etas.size), float(d[-1]), float(d[0]), conditions)


def estimate_gradient_noise(
    problem: QuadraticFederation,
    w: np.ndarray,
    samples: int,
    seed: int,
) -> np.ndarray:
    """Monte-Carlo estimate of ``dG_i^2`` at ``w`` from ``samples`` stochastic gradients."""
    rng = np.random.default_rng(seed)
    exact = problem.gradients(np.asarray(w, dtype=np.float64))
    noisy = exact[None] + problem.noise_sd[None, :, None] * rng.standard_normal((samples, problem.n, problem.dim))
    return np.mean(np.sum((noisy - exact[None]) ** 2, axis=2), axis=0)

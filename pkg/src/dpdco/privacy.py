"""Noise calibration and budget accounting for the private descent.

Step ``k`` of a ``K``-step run releases one noisy gradient. Given the earlier
releases, the gradient's l2-sensitivity grows linearly, ``(k-1) * L * Delta``,
and the budget is split in proportion, ``eps_k = 2 (k-1) eps / (K (K-1))``, so
every step uses the same noise scale ``lam = K (K-1) L Delta / (2 eps)`` and the
parts sum back to ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import BadK, IndexOutOfRange, NonPositiveParam
from .model import AdjacencyParams


@dataclass(frozen=True)
class NoiseSchedule:
    K: int
    L: float
    delta_proj: float
    epsilon: float

    @property
    def lam(self) -> float:
        return self.K * (self.K - 1) * self.L * self.delta_proj / (2.0 * self.epsilon)

    def _eps_fraction(self, k: int) -> Fraction:
        return Fraction(2 * (k - 1), self.K * (self.K - 1)) * Fraction(self.epsilon)

    @property
    def per_step_epsilon(self) -> tuple[float, ...]:
        # Each term correctly rounded from its exact rational value.
        return tuple(float(self._eps_fraction(k)) for k in range(1, self.K + 1))

    @property
    def per_step_sensitivity(self) -> tuple[float, ...]:
        return tuple((k - 1) * self.L * self.delta_proj for k in range(1, self.K + 1))


@dataclass(frozen=True)
class NoiseDraw:
    w: np.ndarray
    norm: float
    step_index: int


def sensitivity_bound(adj: AdjacencyParams) -> float:
    """l2 bound on how far one projection moves between adjacent specs."""
    return 2.0 * adj.delta_r + adj.delta_E


def build_schedule(K: int, L: float, delta_proj: float, epsilon: float) -> NoiseSchedule:
    if isinstance(K, bool) or int(K) != K or K < 2:
        raise BadK(f"K must be an integer >= 2, got {K!r}")
    for name, value in (("L", L), ("delta_proj", delta_proj), ("epsilon", epsilon)):
        if not (np.isfinite(value) and value > 0):
            raise NonPositiveParam(f"{name} must be positive and finite, got {value}")
    return NoiseSchedule(int(K), float(L), float(delta_proj), float(epsilon))


def budget_spent(schedule: NoiseSchedule, upto_k: int) -> float:
    """Privacy spent by the first ``upto_k`` releases, ``eps * k (k-1) / (K (K-1))``.

    Computed in exact rationals and rounded once, so the value is monotone in
    ``upto_k`` and equals ``epsilon`` exactly at ``upto_k == K``.
    """
    K = schedule.K
    if not 0 <= upto_k <= K:
        raise IndexOutOfRange(f"upto_k={upto_k} outside [0, {K}]")
    if upto_k == 0:
        return 0.0
    return float(Fraction(upto_k * (upto_k - 1), K * (K - 1)) * Fraction(schedule.epsilon))


def _radial(rng: np.random.Generator, dim: int, lam: float, size=None):
    radius = rng.gamma(shape=dim, scale=lam, size=size)
    if size is None:
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
    else:
        direction = rng.standard_normal((size, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return radius, direction


def sample_noise(schedule: NoiseSchedule, k: int, T: int, rng: np.random.Generator) -> NoiseDraw:
    """Draw ``w`` with density proportional to ``exp(-||w|| / lam)`` on R^T.

    The first step releases the exact gradient (``w = 0``). Otherwise the radius
    is Gamma(T, lam) and the direction is uniform on the sphere.
    """
    if not 1 <= k <= schedule.K:
        raise IndexOutOfRange(f"step {k} outside [1, {schedule.K}]")
    if k == 1:
        return NoiseDraw(np.zeros(T), 0.0, 1)
    radius, direction = _radial(rng, T, schedule.lam)
    return NoiseDraw(radius * direction, float(radius), k)


def sample_noise_batch(schedule: NoiseSchedule, T: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` independent draws of a step ``k >= 2`` noise vector, shape (size, T)."""
    radius, direction = _radial(rng, T, schedule.lam, size=size)
    return radius[:, None] * direction


def noise_second_moment_bound(schedule: NoiseSchedule, T: int) -> float:
    """Upper bound ``2 T^2 lam^2`` on ``E||w||^2`` used in the suboptimality estimate."""
    return 2.0 * T * T * schedule.lam**2


def optimal_K_estimate(G: float, epsilon: float, T: int, L: float, delta_proj: float) -> float:
    """Iteration count minimizing the worst-case bound; usually too loose to use directly."""
    return math.sqrt(math.sqrt(2.0) * G * epsilon / (3.0 * T * L * delta_proj))

"""Distributed projected gradient descent, plain and differentially private.

The coordinator evaluates the gradient at the current aggregate load, perturbs
it (private mode), and broadcasts it. Every group then takes a projected step
and updates its polynomial-decay average. Groups share a spec and a starting
point, so one representative row per group stands in for all of its users.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import InconsistentSchedule, NoConvergence, NonPositiveParam, NonPositiveReference, ProjectionFailure
from .model import Scenario
from .privacy import NoiseSchedule, budget_spent, sample_noise
from .projection import project_rows

log = logging.getLogger(__name__)


class Objective(Protocol):
    lipschitz: float

    def value(self, agg) -> float: ...

    def gradient(self, agg) -> np.ndarray: ...


@dataclass(frozen=True)
class DescentConfig:
    K: int
    c: float = 10.0
    eta: float = 1.0
    seed: int = 0
    private: bool = True
    step_scale: float = 1.0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise NonPositiveParam(f"K must be a positive integer, got {self.K}")
        if not self.c > 0:
            raise NonPositiveParam(f"step constant c must be positive, got {self.c}")
        if not self.eta >= 1:
            raise NonPositiveParam(f"eta must be >= 1, got {self.eta}")
        if not self.step_scale > 0:
            raise NonPositiveParam(f"step_scale must be positive, got {self.step_scale}")

    def step_size(self, k: int) -> float:
        """``step_scale * c / sqrt(k)``; ``step_scale`` fixes the unit ``c`` is quoted in."""
        return self.step_scale * self.c / np.sqrt(k)

    def averaging_weight(self, k: int) -> float:
        return (self.eta + 1.0) / (self.eta + k)


@dataclass
class IterateState:
    r: np.ndarray
    r_hat: np.ndarray
    aggregate: np.ndarray
    k: int = 1


@dataclass
class TraceRow:
    k: int
    objective: float
    objective_avg: float
    noise_norm: float
    budget: float


@dataclass
class DescentResult:
    r_hat: np.ndarray
    r: np.ndarray
    aggregate_hat: np.ndarray
    value: float
    budget: float
    trace: list[TraceRow] = field(default_factory=list)


def _group_sets(scenario: Scenario):
    caps = np.ascontiguousarray(scenario.caps)
    energy = np.ascontiguousarray(scenario.energies)
    return caps, energy


def _aggregate(r: np.ndarray, weight: int) -> np.ndarray:
    # Row order is the group index; numpy reduces axis 0 sequentially.
    return weight * r.sum(axis=0)


def initial_iterate(scenario: Scenario) -> IterateState:
    """Feasible start: every group at the projection of the origin onto its set.

    This point depends on the private specs, so it must not seed a private run
    (the first gradient is released without noise). See ``public_iterate``.
    """
    caps, energy = _group_sets(scenario)
    r = project_rows(np.zeros_like(caps), caps, energy)
    return IterateState(r=r, r_hat=r.copy(), aggregate=_aggregate(r, scenario.group_size), k=1)


def public_iterate(scenario: Scenario) -> IterateState:
    """Data-independent start (all zeros). Infeasible, but the first step projects it."""
    r = np.zeros((scenario.n_groups, scenario.horizon))
    return IterateState(r=r, r_hat=r.copy(), aggregate=np.zeros(scenario.horizon), k=1)


class _Projector:
    """Row-chunked projection, optionally spread over threads.

    Rows are independent, so the output does not depend on the thread count.
    """

    def __init__(self, caps, energy, threads: int = 1):
        self.caps, self.energy = caps, energy
        self.threads = max(1, int(threads))
        n = caps.shape[0]
        bounds = np.linspace(0, n, min(self.threads, n) + 1).astype(int)
        self.chunks = [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        self.pool = ThreadPoolExecutor(self.threads) if len(self.chunks) > 1 else None

    def __call__(self, x0: np.ndarray, out: np.ndarray) -> np.ndarray:
        if self.pool is None:
            return project_rows(x0, self.caps, self.energy, out)
        futures = [
            self.pool.submit(project_rows, x0[s], self.caps[s], self.energy[s], out[s])
            for s in self.chunks
        ]
        for f in futures:
            f.result()
        return out

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def run(
    scenario: Scenario,
    objective: Objective,
    config: DescentConfig,
    schedule: NoiseSchedule | None = None,
    *,
    threads: int = 1,
    zero_noise: bool = False,
    start: str = "public",
    state: IterateState | None = None,
    debug: bool = False,
) -> DescentResult:
    """Execute ``config.K`` iterations and return the averaged profiles.

    ``start`` is ``"public"`` (zeros) or ``"projected"`` (``initial_iterate``);
    an explicit ``state`` overrides it. Private runs only accept the public
    start, since the first broadcast carries no noise.

    ``zero_noise`` keeps the private code path (schedule checks, RNG draws,
    budget accounting) but discards the noise, which must then reproduce the
    non-private trajectory exactly.
    """
    K = config.K
    if config.private:
        if schedule is None:
            raise InconsistentSchedule("private run needs a noise schedule")
        if schedule.K != K or not np.isclose(schedule.L, objective.lipschitz, rtol=1e-12, atol=0.0):
            raise InconsistentSchedule(
                f"schedule built for K={schedule.K}, L={schedule.L}; run has K={K}, L={objective.lipschitz}"
            )

    caps, energy = _group_sets(scenario)
    weight = scenario.group_size
    T = scenario.horizon
    if config.private and (state is not None or start != "public"):
        raise InconsistentSchedule("private runs must start from the public (data-independent) point")
    if state is not None:
        st = state
    elif start == "public":
        st = public_iterate(scenario)
    elif start == "projected":
        st = initial_iterate(scenario)
    else:
        raise ValueError(f"unknown start {start!r}")
    r, r_hat = st.r.copy(), st.r_hat.copy()
    agg = _aggregate(r, weight)
    rng = np.random.default_rng(config.seed)
    project = _Projector(caps, energy, threads)
    scratch = np.empty_like(r)
    trace: list[TraceRow] = []
    spent = 0.0

    try:
        for k in range(1, K + 1):
            p = objective.gradient(agg)
            noise_norm = 0.0
            if config.private:
                draw = sample_noise(schedule, k, T, rng)
                if not zero_noise:
                    p = p + draw.w
                    noise_norm = draw.norm
                spent = budget_spent(schedule, k)
            alpha = config.step_size(k)
            theta = config.averaging_weight(k)
            np.subtract(r, alpha * p, out=scratch)
            project(scratch, r)
            if not np.all(np.isfinite(r)):
                raise ProjectionFailure(f"non-finite iterate at step {k}")
            r_hat *= 1.0 - theta
            r_hat += theta * r
            agg = _aggregate(r, weight)
            if debug:
                _check_state(r, r_hat, caps, energy)
            trace.append(
                TraceRow(
                    k=k,
                    objective=objective.value(agg),
                    objective_avg=objective.value(_aggregate(r_hat, weight)),
                    noise_norm=noise_norm,
                    budget=spent,
                )
            )
    finally:
        project.close()

    agg_hat = _aggregate(r_hat, weight)
    return DescentResult(
        r_hat=r_hat,
        r=r,
        aggregate_hat=agg_hat,
        value=objective.value(agg_hat),
        budget=spent,
        trace=trace,
    )


def _check_state(r, r_hat, caps, energy, tol=1e-10):
    for name, x in (("r", r), ("r_hat", r_hat)):
        if np.any(x < -tol) or np.any(x > caps + tol):
            raise ProjectionFailure(f"{name} left its box")
        if np.any(np.abs(x.sum(axis=1) - energy) > tol * np.maximum(1.0, energy)):
            raise ProjectionFailure(f"{name} violates its energy budget")


def suboptimality(result: DescentResult, reference: float, relative: bool = False) -> float:
    gap = result.value - reference
    if not relative:
        return gap
    if not reference > 0:
        raise NonPositiveReference(f"relative suboptimality needs U* > 0, got {reference}")
    return gap / reference


def oracle_optimum(
    scenario: Scenario,
    objective: Objective,
    *,
    start: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 100_000,
    return_profiles: bool = False,
):
    """Reference optimum by fixed-step projected gradient.

    The step is ``1 / (n L)``, the inverse Lipschitz constant of the gradient in
    the stacked per-user variables. Stops once successive group profiles move
    less than ``tol`` (max-norm, kW).
    """
    caps, energy = _group_sets(scenario)
    weight = scenario.group_size
    step = 1.0 / (scenario.n_users * objective.lipschitz)
    if start is None:
        r = initial_iterate(scenario).r
    else:
        r = project_rows(np.asarray(start, dtype=np.float64), caps, energy)
    nxt = np.empty_like(r)
    resid = np.inf
    for it in range(1, max_iter + 1):
        p = objective.gradient(_aggregate(r, weight))
        project_rows(r - step * p, caps, energy, nxt)
        resid = float(np.abs(nxt - r).max())
        r, nxt = nxt, r
        if resid < tol:
            break
    else:
        if resid > 1e-9:
            raise NoConvergence(f"residual {resid:.3g} after {max_iter} iterations")
        log.warning("oracle_optimum hit the iteration cap with residual %.3g", resid)
    value = objective.value(_aggregate(r, weight))
    log.debug("oracle_optimum: %d iterations, residual %.3g, U*=%.12g", it, resid, value)
    if return_profiles:
        return value, r
    return value

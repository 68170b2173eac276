"""Domain types: charging specs, adjacency radii, scenarios and privacy parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, InfeasibleSpec, NonPositiveCount, NonPositiveParam
from .projection import BoxBudgetSet


def _frozen_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChargingSpec:
    """One user's private constraint: ``0 <= r <= rate_cap`` and ``sum(r) = energy``.

    Rates are kW per 15-minute slot; ``energy`` is pre-normalized by the slot
    length so it is directly comparable to ``sum(rate_cap)``.
    """

    rate_cap: np.ndarray
    energy: float

    def __post_init__(self):
        cap = _frozen_vector(self.rate_cap, "rate_cap")
        energy = float(self.energy)
        if np.any(cap < 0) or energy < 0 or not np.isfinite(energy):
            raise InfeasibleSpec("rate caps and energy must be nonnegative")
        if cap.sum() < energy:
            raise InfeasibleSpec(f"sum(rate_cap)={cap.sum():.6g} < energy={energy:.6g}")
        object.__setattr__(self, "rate_cap", cap)
        object.__setattr__(self, "energy", energy)

    @property
    def horizon(self) -> int:
        return self.rate_cap.shape[0]

    def as_set(self) -> BoxBudgetSet:
        return BoxBudgetSet(self.rate_cap, self.energy)


@dataclass(frozen=True)
class AdjacencyParams:
    """Neighbouring databases differ in one user by at most these radii."""

    delta_r: float = 13.2
    delta_E: float = 12.0

    def __post_init__(self):
        if not (self.delta_r >= 0 and self.delta_E >= 0):
            raise NonPositiveParam("adjacency radii must be nonnegative")

    def admits(self, spec: ChargingSpec, other: ChargingSpec, tol: float = 1e-12) -> bool:
        return (
            float(np.abs(spec.rate_cap - other.rate_cap).sum()) <= self.delta_r + tol
            and abs(spec.energy - other.energy) <= self.delta_E + tol
        )


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    adjacency: AdjacencyParams = field(default_factory=AdjacencyParams)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise NonPositiveParam(f"epsilon must be positive, got {self.epsilon}")

    @property
    def delta_proj(self) -> float:
        """Bound on the l2 change of a projection between adjacent specs."""
        return 2.0 * self.adjacency.delta_r + self.adjacency.delta_E


@dataclass(frozen=True)
class Scenario:
    """A grouped problem instance. All ``n_users / n_groups`` users in a group share a spec."""

    horizon: int
    n_users: int
    n_households: int
    n_groups: int
    group_specs: tuple[ChargingSpec, ...]
    base_load: np.ndarray

    def __post_init__(self):
        for name in ("horizon", "n_users", "n_households", "n_groups"):
            if int(getattr(self, name)) <= 0:
                raise NonPositiveCount(f"{name} must be positive")
        if self.n_users % self.n_groups:
            raise ConfigError(f"n_groups={self.n_groups} does not divide n_users={self.n_users}")
        d = _frozen_vector(self.base_load, "base_load")
        if d.shape[0] != self.horizon:
            raise DimensionMismatch(f"base_load has length {d.shape[0]}, horizon is {self.horizon}")
        specs = tuple(self.group_specs)
        if len(specs) != self.n_groups:
            raise DimensionMismatch(f"{len(specs)} group specs for {self.n_groups} groups")
        for g, spec in enumerate(specs):
            if spec.horizon != self.horizon:
                raise DimensionMismatch(f"group {g} spec has horizon {spec.horizon}")
        object.__setattr__(self, "base_load", d)
        object.__setattr__(self, "group_specs", specs)

    @property
    def gamma(self) -> Fraction:
        """EVs per household, kept exact so ``gamma * m == n`` holds identically."""
        return Fraction(self.n_users, self.n_households)

    @property
    def group_size(self) -> int:
        return self.n_users // self.n_groups

    @property
    def caps(self) -> np.ndarray:
        return np.stack([s.rate_cap for s in self.group_specs])

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.group_specs])


@dataclass
class ScenarioConfig:
    """Recipe for a scenario. ``specs`` and ``base_load`` may be explicit or generated."""

    horizon: int = 52
    n_users: int = 10_000
    n_households: int = 50_000
    n_groups: int = 100
    seed: int = 0
    specs: Any = "generated"
    base_load: Any = "synthetic"
    synthetic: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        cfg = cls(**dict(data))
        for name in ("horizon", "n_users", "n_households", "n_groups", "seed"):
            value = getattr(cfg, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"scenario.{name} must be an integer, got {value!r}")
            if name != "seed" and value <= 0:
                raise ConfigError(f"scenario.{name} must be positive, got {value}")
        return cfg


def _explicit_specs(entries: Sequence[Mapping[str, Any]]) -> list[ChargingSpec]:
    specs = []
    for i, entry in enumerate(entries):
        try:
            specs.append(ChargingSpec(entry["rate_cap"], entry["energy"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"spec {i} needs rate_cap and energy") from exc
    return specs


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Materialize and validate a scenario. Deterministic in ``config`` (incl. seed)."""
    from . import evcharging

    for name in ("horizon", "n_users", "n_households", "n_groups"):
        if getattr(config, name) <= 0:
            raise NonPositiveCount(f"{name} must be positive, got {getattr(config, name)}")
    if config.n_users % config.n_groups:
        raise ConfigError(f"n_groups={config.n_groups} does not divide n_users={config.n_users}")

    if isinstance(config.specs, str):
        if config.specs != "generated":
            raise ConfigError(f"unknown specs source {config.specs!r}")
        specs = evcharging.generate_specs(config.n_groups, config.horizon, config.seed)
    else:
        specs = _explicit_specs(config.specs)

    if isinstance(config.base_load, (list, tuple)):
        base = np.asarray(config.base_load, dtype=np.float64)
    else:
        base = evcharging.generate_base_load(config.horizon, config.base_load, **config.synthetic)

    return Scenario(
        horizon=config.horizon,
        n_users=config.n_users,
        n_households=config.n_households,
        n_groups=config.n_groups,
        group_specs=tuple(specs),
        base_load=base,
    )

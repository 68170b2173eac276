"""EV-charging instance: load-variance objective, spec generator, base load, bound constants."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadCSV, DimensionMismatch, FeasibilityResampleExhausted, UnknownSource
from .model import ChargingSpec, Scenario

RATE_LEVEL_KW = 3.3
RATE_PROB = 0.5
ENERGY_RANGE_KW = (28.0, 40.0)
MAX_RESAMPLE = 1000

SYNTHETIC_DEFAULTS = {"mid": 1.0, "amp": 0.3, "peak_slot": 10}


class EVObjective:
    """``U(s) = 0.5 * ||d + s / m||^2`` where ``s`` is the aggregate EV load."""

    def __init__(self, base_load, n_households: int):
        self.base_load = np.asarray(base_load, dtype=np.float64)
        self.m = int(n_households)
        self.lipschitz = 1.0 / self.m**2

    @classmethod
    def for_scenario(cls, scenario: Scenario) -> "EVObjective":
        return cls(scenario.base_load, scenario.n_households)

    def _check(self, agg):
        agg = np.asarray(agg, dtype=np.float64)
        if agg.shape != self.base_load.shape:
            raise DimensionMismatch(f"aggregate shape {agg.shape}, expected {self.base_load.shape}")
        return agg

    def value(self, agg) -> float:
        load = self.base_load + self._check(agg) / self.m
        return 0.5 * float(load @ load)

    def gradient(self, agg) -> np.ndarray:
        return (self.base_load + self._check(agg) / self.m) / self.m


@dataclass(frozen=True)
class SuboptimalityConstants:
    rho: float
    G: float
    r_max: float


def _group_rng(seed: int, group: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(group,)))


def generate_specs(n_groups: int, horizon: int, seed: int = 0) -> list[ChargingSpec]:
    """Random group specs: caps are 3.3 kW or 0 with equal odds, energy ~ U[28, 40].

    Group ``g`` draws from its own substream keyed by ``(seed, g)`` so any single
    spec can be regenerated without the others. Infeasible draws are redrawn.
    """
    if n_groups <= 0 or horizon <= 0:
        raise ValueError("n_groups and horizon must be positive")
    specs = []
    for g in range(n_groups):
        rng = _group_rng(seed, g)
        for _ in range(MAX_RESAMPLE):
            cap = np.where(rng.random(horizon) < RATE_PROB, RATE_LEVEL_KW, 0.0)
            energy = rng.uniform(*ENERGY_RANGE_KW)
            if cap.sum() >= energy:
                specs.append(ChargingSpec(cap, energy))
                break
        else:
            raise FeasibilityResampleExhausted(
                f"group {g}: no feasible spec in {MAX_RESAMPLE} draws at horizon {horizon}"
            )
    return specs


def synthetic_base_load(horizon: int, mid: float = 1.0, amp: float = 0.3, peak_slot: float = 10) -> np.ndarray:
    t = np.arange(horizon)
    return mid + amp * np.cos(2.0 * np.pi * (t - peak_slot) / horizon)


def read_base_load_csv(path, horizon: int) -> np.ndarray:
    values = []
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                cells = [c.strip() for c in row if c.strip()]
                if not cells:
                    continue
                if len(cells) != 1:
                    raise BadCSV(f"{path}: expected one column, got {len(cells)}")
                values.append(float(cells[0]))
    except ValueError as exc:
        raise BadCSV(f"{path}: non-numeric entry ({exc})") from exc
    if len(values) != horizon:
        raise BadCSV(f"{path}: {len(values)} values for horizon {horizon}")
    arr = np.array(values)
    if not np.all(np.isfinite(arr)):
        raise BadCSV(f"{path}: non-finite entry")
    return arr


def generate_base_load(horizon: int, source="synthetic", **params) -> np.ndarray:
    """Base load per household (kW). ``source`` is ``"synthetic"`` or a CSV path."""
    if isinstance(source, str) and source == "synthetic":
        unknown = set(params) - set(SYNTHETIC_DEFAULTS)
        if unknown:
            raise UnknownSource(f"unknown synthetic parameters {sorted(unknown)}")
        return synthetic_base_load(horizon, **{**SYNTHETIC_DEFAULTS, **params})
    if isinstance(source, dict) and set(source) == {"csv"}:
        source = source["csv"]
    if isinstance(source, (str, os.PathLike)) and Path(source).is_file():
        return read_base_load_csv(source, horizon)
    raise UnknownSource(f"base load source {source!r} is neither 'synthetic' nor a readable CSV")


def subopt_constants(scenario: Scenario) -> SuboptimalityConstants:
    """Feasible-set radius and gradient bound used by the suboptimality estimates.

    A feasible profile satisfies ``||r|| <= ||rate_cap||`` and, being
    nonnegative, ``||r|| <= ||r||_1 = energy``.
    """
    n = scenario.n_users
    gamma = float(scenario.gamma)
    r_max = max(min(float(np.linalg.norm(s.rate_cap)), s.energy) for s in scenario.group_specs)
    rho = math.sqrt(n) * r_max
    G = (gamma / n) * (float(np.linalg.norm(scenario.base_load)) + gamma * r_max)
    return SuboptimalityConstants(rho=rho, G=G, r_max=r_max)


def write_spec_dump(scenario: Scenario, path) -> None:
    """One row per (group, slot): ``group,t,rate_cap,energy``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "t", "rate_cap", "energy"])
        for g, spec in enumerate(scenario.group_specs):
            for t, cap in enumerate(spec.rate_cap):
                w.writerow([g, t, repr(float(cap)), repr(spec.energy)])

"""Experiment driver: config loading, single runs, sweeps and verification batteries.

A config is a YAML file with the sections below (every key optional)::

    scenario:   {horizon, n_users, n_households, n_groups, seed, specs, base_load, synthetic}
    privacy:    {epsilon, delta_r, delta_E}
    descent:    {K, c, eta, private, step_unit}
    sweep:      {axis: none|epsilon|K|c, grid, optimize_K, K_grid}
    seeds:      [0, 1, ...]  or  {range: [start, stop]}
    out:        results.csv

Grids are lists or ``{range: [start, stop]}`` (integers, stop exclusive) or
``{geomspace: [lo, hi, count]}``. ``step_unit: household`` (the default) quotes
``c`` per household, i.e. the engine step is ``m * c / sqrt(k)``; ``literal``
uses ``c / sqrt(k)`` as is.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import yaml

from . import descent, privacy, projection, sensitivity
from .errors import ConfigError, DPDCOError
from .evcharging import EVObjective, generate_specs
from .model import AdjacencyParams, Scenario, ScenarioConfig, build_scenario

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epsilon", "K", "c", "eta", "seed", "n", "m", "T", "U_value", "U_star", "rel_subopt", "budget", "wall_ms")
SWEEP_AXES = ("none", "epsilon", "K", "c")
STEP_UNITS = ("household", "literal")
DEFAULT_K_GRID = tuple(range(2, 61))


@dataclass
class SweepConfig:
    axis: str = "none"
    grid: tuple = ()
    optimize_K: bool = False
    K_grid: tuple = DEFAULT_K_GRID


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    epsilon: float = 0.1
    adjacency: AdjacencyParams = field(default_factory=AdjacencyParams)
    K: int = 6
    c: float = 10.0
    eta: float = 1.0
    private: bool = True
    step_unit: str = "household"
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: tuple = tuple(range(20))
    out: str = "results.csv"

    def validate(self) -> "ExperimentConfig":
        if self.sweep.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}, got {self.sweep.axis!r}")
        if self.step_unit not in STEP_UNITS:
            raise ConfigError(f"descent.step_unit must be one of {STEP_UNITS}, got {self.step_unit!r}")
        if self.sweep.axis != "none":
            _check_grid(self.sweep.grid, "sweep.grid")
        if self.sweep.optimize_K:
            _check_grid(self.sweep.K_grid, "sweep.K_grid")
            if min(self.sweep.K_grid) < 2:
                raise ConfigError("sweep.K_grid entries must be >= 2")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not (self.epsilon > 0 and self.c > 0 and self.eta >= 1):
            raise ConfigError("need epsilon > 0, c > 0 and eta >= 1")
        if isinstance(self.K, bool) or not isinstance(self.K, int) or self.K < (2 if self.private else 1):
            raise ConfigError(f"K must be an integer >= {2 if self.private else 1}, got {self.K!r}")
        return self


def _check_grid(grid, name):
    if len(grid) == 0:
        raise ConfigError(f"{name} must be nonempty")
    if any(not np.isfinite(g) for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"{name} must be finite and strictly increasing")


def _grid(spec, name, integer=False) -> tuple:
    if isinstance(spec, Mapping):
        if set(spec) == {"range"} and len(spec["range"]) == 2:
            lo, hi = spec["range"]
            return tuple(range(int(lo), int(hi)))
        if set(spec) == {"geomspace"} and len(spec["geomspace"]) == 3:
            lo, hi, num = spec["geomspace"]
            return tuple(float(v) for v in np.geomspace(float(lo), float(hi), int(num)))
        raise ConfigError(f"{name}: expected a list, {{range: [a, b]}} or {{geomspace: [lo, hi, n]}}")
    if not isinstance(spec, (list, tuple)):
        raise ConfigError(f"{name}: expected a list, got {spec!r}")
    try:
        return tuple(int(v) if integer else float(v) for v in spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: non-numeric entry") from exc


def _section(data: Mapping, key: str, allowed: set) -> dict:
    sec = data.get(key) or {}
    if not isinstance(sec, Mapping):
        raise ConfigError(f"{key} must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown {key} keys: {sorted(unknown)}")
    return dict(sec)


def config_from_mapping(data: Mapping[str, Any]) -> ExperimentConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a mapping")
    unknown = set(data) - {"scenario", "privacy", "descent", "sweep", "seeds", "out"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        scen = ScenarioConfig.from_mapping(_section(data, "scenario", set(ScenarioConfig.__dataclass_fields__)))
        priv = _section(data, "privacy", {"epsilon", "delta_r", "delta_E"})
        desc = _section(data, "descent", {"K", "c", "eta", "private", "step_unit"})
        sw = _section(data, "sweep", {"axis", "grid", "optimize_K", "K_grid"})
        axis = str(sw.get("axis", "none"))
        sweep = SweepConfig(
            axis=axis,
            grid=_grid(sw.get("grid", []), "sweep.grid", integer=axis == "K"),
            optimize_K=bool(sw.get("optimize_K", False)),
            K_grid=_grid(sw["K_grid"], "sweep.K_grid", integer=True) if "K_grid" in sw else DEFAULT_K_GRID,
        )
        seeds = _grid(data["seeds"], "seeds", integer=True) if "seeds" in data else tuple(range(20))
        cfg = ExperimentConfig(
            scenario=scen,
            epsilon=float(priv.get("epsilon", 0.1)),
            adjacency=AdjacencyParams(float(priv.get("delta_r", 13.2)), float(priv.get("delta_E", 12.0))),
            K=desc.get("K", 6),
            c=float(desc.get("c", 10.0)),
            eta=float(desc.get("eta", 1.0)),
            private=bool(desc.get("private", True)),
            step_unit=str(desc.get("step_unit", "household")),
            sweep=sweep,
            seeds=seeds,
            out=str(data.get("out", "results.csv")),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, DPDCOError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return config_from_mapping(data if data is not None else {})


@dataclass
class RunRecord:
    epsilon: float
    K: int
    c: float
    eta: float
    seed: int
    n: int
    m: int
    T: int
    U_value: float
    U_star: float
    rel_subopt: float
    budget: float
    wall_ms: float
    trace: list = field(default_factory=list, repr=False)

    def csv_row(self) -> list[str]:
        # repr() round-trips floats exactly, so identical runs give identical bytes.
        return [repr(getattr(self, col)) for col in CSV_COLUMNS]


def format_csv(records, header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow(rec.csv_row())
    return buf.getvalue()


def write_csv(records, path) -> None:
    Path(path).write_text(format_csv(records))


def write_trace(record: RunRecord, path) -> None:
    Path(path).write_text(json.dumps([asdict(row) for row in record.trace], indent=1))


class Experiment:
    """A scenario with its objective and reference optimum, built once and reused."""

    def __init__(self, config: ExperimentConfig, scenario: Scenario | None = None, u_star: float | None = None):
        self.config = config
        self.scenario = scenario if scenario is not None else build_scenario(config.scenario)
        self.objective = EVObjective.for_scenario(self.scenario)
        self.u_star = u_star if u_star is not None else descent.oracle_optimum(self.scenario, self.objective)
        self.delta = config.adjacency.delta_r * 2.0 + config.adjacency.delta_E

    @property
    def step_scale(self) -> float:
        return float(self.scenario.n_households) if self.config.step_unit == "household" else 1.0

    def run(self, *, epsilon=None, K=None, c=None, seed=None, private=None, threads=1, wall_time=True) -> RunRecord:
        cfg = self.config
        epsilon = cfg.epsilon if epsilon is None else epsilon
        K = cfg.K if K is None else K
        c = cfg.c if c is None else c
        seed = cfg.seeds[0] if seed is None else seed
        private = cfg.private if private is None else private
        dcfg = descent.DescentConfig(K=K, c=c, eta=cfg.eta, seed=seed, private=private, step_scale=self.step_scale)
        schedule = privacy.build_schedule(K, self.objective.lipschitz, self.delta, epsilon) if private else None
        start = time.perf_counter()
        res = descent.run(self.scenario, self.objective, dcfg, schedule, threads=threads)
        wall = (time.perf_counter() - start) * 1e3 if wall_time else 0.0
        sc = self.scenario
        return RunRecord(
            epsilon=float(epsilon) if private else math.inf,
            K=K, c=float(c), eta=float(cfg.eta), seed=int(seed),
            n=sc.n_users, m=sc.n_households, T=sc.horizon,
            U_value=res.value, U_star=self.u_star,
            rel_subopt=descent.suboptimality(res, self.u_star, relative=True),
            budget=res.budget, wall_ms=wall, trace=res.trace,
        )


@dataclass
class SweepResult:
    axis: str
    records: list[RunRecord]
    means: dict  # grid value -> mean rel_subopt (at the chosen K for epsilon sweeps)
    best_K: dict = field(default_factory=dict)
    slope: float | None = None

    def summary(self) -> dict:
        return {
            "axis": self.axis,
            "means": {repr(k): v for k, v in self.means.items()},
            "best_K": {repr(k): v for k, v in self.best_K.items()},
            "slope": self.slope,
        }


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def interior_minimizer(means: Mapping) -> tuple[bool, Any]:
    """Whether the smallest mean sits strictly inside the grid and beats both endpoints."""
    keys = sorted(means)
    best = min(keys, key=lambda k: means[k])
    ok = keys[0] != best != keys[-1] and means[best] < means[keys[0]] and means[best] < means[keys[-1]]
    return bool(ok), best


_WORKER: Experiment | None = None


def _init_worker(config, scenario, u_star):
    global _WORKER
    _WORKER = Experiment(config, scenario, u_star)


def _work(kwargs):
    return _WORKER.run(**kwargs)


def _run_many(exp: Experiment, jobs: list[dict], workers: int) -> list[RunRecord]:
    if workers <= 1 or len(jobs) <= 1:
        return [exp.run(**job) for job in jobs]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(exp.config, exp.scenario, exp.u_star)) as pool:
        return list(pool.map(_work, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def sweep(exp: Experiment, *, workers: int = 1, threads: int = 1, wall_time: bool = True,
          progress: Callable[[str], None] | None = None) -> SweepResult:
    """Run every grid point for every seed. Records come back ordered by (grid point, K, seed)."""
    cfg = exp.config
    axis = cfg.sweep.axis
    if axis == "none":
        raise ConfigError("sweep needs sweep.axis set to epsilon, K or c")
    common = {"threads": threads, "wall_time": wall_time}
    grid = cfg.sweep.grid
    if axis == "epsilon" and cfg.sweep.optimize_K:
        records, means, best_K = [], {}, {}
        for eps in grid:
            jobs = [dict(epsilon=eps, K=K, seed=s, **common) for K in cfg.sweep.K_grid for s in cfg.seeds]
            recs = _run_many(exp, jobs, workers)
            by_K = {K: float(np.mean([r.rel_subopt for r in recs if r.K == K])) for K in cfg.sweep.K_grid}
            K_best = min(by_K, key=by_K.get)
            best_K[eps], means[eps] = K_best, by_K[K_best]
            records.extend(recs)
            if progress:
                progress(f"epsilon={eps:.6g} best K={K_best} mean rel_subopt={by_K[K_best]:.6g}")
        return SweepResult(axis, records, means, best_K, loglog_slope(list(means), list(means.values())))

    key = {"epsilon": "epsilon", "K": "K", "c": "c"}[axis]
    jobs = [{key: v, "seed": s, **common} for v in grid for s in cfg.seeds]
    records = _run_many(exp, jobs, workers)
    means = {}
    for v in grid:
        vals = [r.rel_subopt for r in records if getattr(r, key) == v]
        means[v] = float(np.mean(vals))
        if progress:
            progress(f"{axis}={v:.6g} mean rel_subopt={means[v]:.6g}")
    slope = loglog_slope(list(means), list(means.values())) if axis == "epsilon" and len(grid) > 1 else None
    return SweepResult(axis, records, means, {}, slope)


# Verification batteries. Each returns a list of (name, passed, detail) lines.


Check = tuple  # (name, passed, detail)


def verify_projection(n: int = 1000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst_oracle = worst_idem = worst_kkt = worst_exp = 0.0
    for _ in range(n):
        T = int(rng.integers(2, 9))
        x0, a, b = sensitivity.random_instance(rng, T)
        box = projection.BoxBudgetSet(a, b)
        x = projection.project(x0, box)
        worst_oracle = max(worst_oracle, float(np.abs(x - projection.project_oracle(x0, box)).max()))
        worst_idem = max(worst_idem, float(np.abs(projection.project(x, box) - x).max()))
        worst_kkt = max(worst_kkt, projection.kkt_residual(x0, x, box))
        y0 = x0 + rng.normal(0.0, 1.0, T)
        gap = np.linalg.norm(projection.project(y0, box) - x) - np.linalg.norm(y0 - x0)
        worst_exp = max(worst_exp, float(gap))
    return [
        ("projection matches oracle (linf < 1e-8)", worst_oracle < 1e-8, f"worst {worst_oracle:.3g} over {n}"),
        ("projection idempotent (< 1e-12)", worst_idem < 1e-12, f"worst {worst_idem:.3g}"),
        ("KKT residual < 1e-10", worst_kkt < 1e-10, f"worst {worst_kkt:.3g}"),
        ("nonexpansive", worst_exp <= 1e-12, f"worst excess {worst_exp:.3g}"),
    ]


def verify_sensitivity(seed: int = 0, probe_trials: int = 10_000) -> list[Check]:
    out = []
    r = sensitivity.global_b_battery(500, seed)
    out.append(("l1 move in b equals |db| (1e-9)", r.passed, f"worst {r.worst:.3g}"))
    r = sensitivity.global_a_battery(500, seed)
    out.append(("l1 move in a <= 2|da|_1 with a tight case", r.passed,
                f"worst excess {r.worst:.3g}, max ratio {r.notes['max_ratio']:.4f}"))
    r = sensitivity.local_battery(2000, seed)
    out.append(("local db >= 0, sum 1 (1e-4)", r.notes["worst_db"] <= 1e-4 and r.skip_rate < 0.01,
                f"worst {r.notes['worst_db']:.3g}, skipped {r.skipped}/{r.instances}"))
    out.append(("local per-column |d x/d a_j|_1 <= 2", r.notes["worst_column_l1"] <= 2.0 + 1e-3,
                f"worst {r.notes['worst_column_l1']:.6g}"))
    out.append(("local summed sum_j |d x/d a_j|_1 <= 2 + 1e-3", r.worst <= 2.0 + 1e-3,
                f"worst {r.worst:.6g}; fails on {r.notes['summed_bound_failures']}/{r.checked} "
                f"({r.notes['instances_with_2plus_caps']} have >= 2 binding caps)"))
    spec = generate_specs(1, 52, seed)[0]
    rep = sensitivity.adjacency_probe(spec, AdjacencyParams(), probe_trials, seed)
    out.append(("adjacent-spec l2 gap <= 2 dr + dE", rep.ok, f"max {rep.joint_l2:.6g} vs {rep.joint_l2_bound}"))
    return out


def verify_privacy(seed: int = 0, draws: int = 100_000) -> list[Check]:
    from scipy import stats

    worst = 0.0
    first_zero = True
    for K in range(2, 201):
        sch = privacy.build_schedule(K, 1.0, 1.0, 0.1)
        eps = sch.per_step_epsilon
        worst = max(worst, abs(math.fsum(eps) - 0.1) / 0.1)
        first_zero &= eps[0] == 0.0 and privacy.budget_spent(sch, K) == 0.1
    T = 52
    sch = privacy.build_schedule(6, 1.0 / 500_000**2, 38.4, 0.1)
    lam = sch.lam
    w = privacy.sample_noise_batch(sch, T, draws, np.random.default_rng(seed))
    norms = np.linalg.norm(w, axis=1)
    m1 = norms.mean() / (T * lam)
    m2 = (norms**2).mean() / (T * (T + 1) * lam**2)
    bound = privacy.noise_second_moment_bound(sch, T)
    ks = stats.kstest(norms, stats.gamma(a=T, scale=lam).cdf).pvalue
    u = w / norms[:, None]
    mean_dev = float(np.abs(u.mean(axis=0)).max())
    # Max over T(T-1)/2 sample correlations, so allow a wider band than for the means.
    corr_dev = float(np.abs(np.corrcoef(u.T) - np.eye(T)).max())
    return [
        ("sum eps_k = eps (1e-15 rel), K in 2..200", worst <= 1e-15, f"worst {worst:.3g}"),
        ("eps_1 = 0, budget_spent(K) = eps", bool(first_zero), ""),
        ("mean |w| within 2% of T lam", abs(m1 - 1) < 0.02, f"ratio {m1:.5f}"),
        ("mean |w|^2 within 5% of T(T+1) lam^2", abs(m2 - 1) < 0.05, f"ratio {m2:.5f}"),
        ("mean |w|^2 below 2 T^2 lam^2", (norms**2).mean() < bound, f"{(norms**2).mean():.4g} vs {bound:.4g}"),
        ("radius KS vs Gamma(T, lam) at 1e-3", ks > 1e-3, f"p = {ks:.3g}"),
        ("direction means ~ 0 (< 4/sqrt(n))", mean_dev < 4 / math.sqrt(draws), f"max |mean| = {mean_dev:.3g}"),
        ("direction correlations ~ 0 (< 6/sqrt(n))", corr_dev < 6 / math.sqrt(draws), f"max |corr| = {corr_dev:.3g}"),
    ]


def verify_gradient(seed: int = 0, trials: int = 100) -> list[Check]:
    rng = np.random.default_rng(seed)
    T, m = 52, 50_000
    obj = EVObjective(rng.uniform(0.5, 1.5, T), m)
    worst_fd = worst_lip = 0.0
    for _ in range(trials):
        s = rng.uniform(0, 3.3 * 10_000, T)
        h = 1e-4 * m
        g = obj.gradient(s)
        fd = np.array([(obj.value(s + h * e) - obj.value(s - h * e)) / (2 * h) for e in np.eye(T)])
        worst_fd = max(worst_fd, float(np.abs(fd - g).max() / np.abs(g).max()))
        y = rng.uniform(0, 3.3 * 10_000, T)
        ratio = np.linalg.norm(obj.gradient(s) - obj.gradient(y)) / np.linalg.norm(s - y)
        worst_lip = max(worst_lip, abs(ratio / obj.lipschitz - 1.0))
    return [
        ("gradient matches central differences (1e-6 rel)", worst_fd < 1e-6, f"worst {worst_fd:.3g}"),
        ("Lipschitz ratio equals 1/m^2", worst_lip < 1e-9, f"worst rel {worst_lip:.3g}"),
    ]


BATTERIES = {
    "projection": verify_projection,
    "sensitivity": verify_sensitivity,
    "privacy": verify_privacy,
    "gradient": verify_gradient,
}


def verify(which: str, seed: int = 0) -> list[Check]:
    if which == "all":
        return [c for name in BATTERIES for c in BATTERIES[name](seed=seed)]
    if which not in BATTERIES:
        raise ConfigError(f"unknown battery {which!r}; choose from {sorted(BATTERIES)} or 'all'")
    return BATTERIES[which](seed=seed)


def with_seed(config: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    return config if seed is None else replace(config, seeds=(int(seed),))

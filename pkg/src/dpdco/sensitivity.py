"""Numerical checks of how the box-budget projection responds to its data.

Everything here is measured with the production projection and compared with
closed-form bounds: finite-difference derivatives in the budget ``b`` and the
caps ``a``, global l1 moves under finite changes of either, and a Monte Carlo
probe over adjacent charging specs that backs the noise calibration.

Local derivatives only exist where strict complementarity holds. A point is
flagged degenerate when perturbing ``b`` or any ``a_j`` by ``h`` changes the
active set; those instances are skipped rather than failed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BoundViolation, DegenerateInstance, InfeasibleSet, NonFiniteInput
from .model import AdjacencyParams, ChargingSpec
from .projection import AT_CAP, AT_ZERO, INTERIOR, project_rows

REL_STEP = 1e-5


def _solve(x0, a, b) -> np.ndarray:
    return project_rows(x0[None, :], a[None, :], np.array([float(b)]))[0]


def _pattern(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    # The kernel returns bounds exactly (clip), so no tolerance is needed.
    pat = np.full(x.shape, INTERIOR, dtype=np.int8)
    pat[x <= 0.0] = AT_ZERO
    pat[x >= a] = AT_CAP
    return pat


def _instance(x0, a, b):
    x0 = np.asarray(x0, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = float(b)
    if x0.ndim != 1 or a.shape != x0.shape:
        raise InfeasibleSet(f"shape mismatch: x0 {x0.shape}, a {a.shape}")
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(a)) and np.isfinite(b)):
        raise NonFiniteInput("instance has non-finite entries")
    if np.any(a < 0) or not 0 <= b <= a.sum():
        raise InfeasibleSet(f"budget {b} outside [0, {a.sum()}] or negative caps")
    return x0, a, b


def default_step(a) -> float:
    return REL_STEP * max(1.0, float(np.max(a, initial=0.0)))


def is_degenerate(x0, a, b, h: float | None = None) -> bool:
    """True when the active set at ``(a, b)`` changes under a +-h move of ``b`` or any ``a_j``."""
    x0, a, b = _instance(x0, a, b)
    h = default_step(a) if h is None else h
    base = _pattern(_solve(x0, a, b), a)
    for db in (-h, h):
        if not np.array_equal(_pattern(_solve(x0, a, b + db), a), base):
            return True
    for j in range(a.shape[0]):
        for da in (-h, h):
            a2 = a.copy()
            a2[j] += da
            if not np.array_equal(_pattern(_solve(x0, a2, b), a2), base):
                return True
    return False


def _check_margins(a, b, h, need_cap_margin: bool):
    if not h < b < a.sum() - h:
        raise InfeasibleSet(f"budget {b} within h={h} of the feasible range [0, {a.sum()}]")
    if need_cap_margin and np.any(a <= h):
        raise InfeasibleSet(f"every cap must exceed h={h}")


def local_sensitivity_b(x0, a, b, h: float | None = None) -> np.ndarray:
    """Central difference of the projection in ``b``.

    On a non-degenerate instance the derivative spreads ``1`` evenly over the
    interior coordinates, so it is nonnegative and sums to one.
    """
    x0, a, b = _instance(x0, a, b)
    h = default_step(a) if h is None else h
    _check_margins(a, b, h, need_cap_margin=False)
    if is_degenerate(x0, a, b, h):
        raise DegenerateInstance(f"active set changes within h={h} of b={b}")
    d = (_solve(x0, a, b + h) - _solve(x0, a, b - h)) / (2.0 * h)
    if d.min() < -10 * h or abs(d.sum() - 1.0) > 10 * h:
        raise BoundViolation(f"d x*/db = {d} is not a nonnegative unit-sum vector")
    return d


def local_sensitivity_a(x0, a, b, h: float | None = None) -> np.ndarray:
    """Central differences in each cap; column ``j`` is ``d x* / d a_j``.

    Raising a binding cap moves that coordinate up by one and takes the same
    amount evenly from the interior coordinates, so each column has l1 norm
    0 or 2. Columns add up when several caps bind; only the per-column bound is
    enforced here (see ``local_battery`` for the summed norm).
    """
    x0, a, b = _instance(x0, a, b)
    h = default_step(a) if h is None else h
    _check_margins(a, b, h, need_cap_margin=True)
    if is_degenerate(x0, a, b, h):
        raise DegenerateInstance(f"active set changes within h={h} of a={a}")
    T = a.shape[0]
    jac = np.empty((T, T))
    for j in range(T):
        up, dn = a.copy(), a.copy()
        up[j] += h
        dn[j] -= h
        jac[:, j] = (_solve(x0, up, b) - _solve(x0, dn, b)) / (2.0 * h)
    cols = np.abs(jac).sum(axis=0)
    if cols.max(initial=0.0) > 2.0 + 100 * h:
        raise BoundViolation(f"column l1 norms {cols} exceed 2")
    return jac


def global_sensitivity_b(x0, a, b, b2, tol: float = 1e-9) -> float:
    """l1 move of the projection when the budget changes from ``b`` to ``b2``; equals ``|b2 - b|``."""
    x0, a, b = _instance(x0, a, b)
    _, _, b2 = _instance(x0, a, b2)
    dist = float(np.abs(_solve(x0, a, b2) - _solve(x0, a, b)).sum())
    if abs(dist - abs(b2 - b)) > tol:
        raise BoundViolation(f"l1 move {dist!r} differs from |b2 - b| = {abs(b2 - b)!r}")
    return dist


def global_sensitivity_a(x0, a, a2, b, tol: float = 1e-9) -> float:
    """l1 move of the projection when the caps change from ``a`` to ``a2``; at most ``2 ||a2 - a||_1``."""
    x0, a, b = _instance(x0, a, b)
    _, a2, _ = _instance(x0, a2, b)
    dist = float(np.abs(_solve(x0, a2, b) - _solve(x0, a, b)).sum())
    bound = 2.0 * float(np.abs(a2 - a).sum())
    if dist > bound + tol:
        raise BoundViolation(f"l1 move {dist!r} exceeds 2||a2 - a||_1 = {bound!r}")
    return dist


def degenerate_budgets(x0, a) -> np.ndarray:
    """Budgets in ``(0, sum(a))`` at which some coordinate sits on a bound with a zero multiplier.

    These are the values of ``sum(clip(x0 + nu, 0, a))`` at the kinks
    ``nu in {-x0_i, a_i - x0_i}``; there are at most ``2T`` of them.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    kinks = np.concatenate([-x0, a - x0])
    g = np.clip(x0[None, :] + kinks[:, None], 0.0, a[None, :]).sum(axis=1)
    g = np.unique(g)
    return g[(g > 0) & (g < a.sum())]


@dataclass
class SensitivityReport:
    """Measured sensitivities next to their bounds. Serializes to JSON."""

    x0: list
    a: list
    b: float
    degenerate: bool = False
    local_db: list | None = None
    local_da: list | None = None
    global_l1_b: float | None = None
    global_l1_b_bound: float | None = None
    global_l1_a: float | None = None
    global_l1_a_bound: float | None = None
    joint_l2: float | None = None
    joint_l2_bound: float | None = None
    trials: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {**asdict(self), "ok": self.ok}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _adjacent_caps(a: np.ndarray, delta_r: float, rng) -> np.ndarray:
    if delta_r == 0:
        return a.copy()
    if rng.random() < 0.5:
        # Charger-style change: toggle a few slots between zero and the peak rate.
        level = float(a.max()) if a.max() > 0 else 1.0
        k = min(int(delta_r // level), a.shape[0]) if level > 0 else 0
        a2 = a.copy()
        if k:
            idx = rng.choice(a.shape[0], size=rng.integers(1, k + 1), replace=False)
            a2[idx] = np.where(a2[idx] > 0, 0.0, level)
        return a2
    # Dense change with l1 norm up to delta_r; clipping at zero only shrinks it.
    d = rng.laplace(size=a.shape[0])
    d *= rng.uniform(0.5, 1.0) * delta_r / np.abs(d).sum()
    return np.maximum(a + d, 0.0)


def sample_adjacent(spec: ChargingSpec, adj: AdjacencyParams, rng, max_tries: int = 100):
    """Random feasible ``(a2, b2)`` with ``||a2 - a||_1 <= delta_r`` and ``|b2 - b| <= delta_E``."""
    a, b = spec.rate_cap, spec.energy
    for _ in range(max_tries):
        a2 = _adjacent_caps(a, adj.delta_r, rng)
        b2 = b + rng.uniform(-1.0, 1.0) * adj.delta_E
        if 0.0 <= b2 <= a2.sum():
            return a2, b2
    return a.copy(), b


def _probe_points(rng, T: int, scale: float) -> np.ndarray:
    if rng.random() < 0.5:
        return scale * rng.standard_normal(T)
    return scale * rng.standard_cauchy(T)


def adjacency_probe(
    spec: ChargingSpec, adj: AdjacencyParams, trials: int, seed: int = 0
) -> SensitivityReport:
    """Largest l2 gap between projections onto a spec's set and an adjacent one.

    Each trial draws a point and an adjacent spec from its own substream of
    ``seed``. Per trial the chain ``l2 <= l1 <= 2||da||_1 + |db|`` is checked,
    and the maximum l2 gap is compared with ``2 delta_r + delta_E``.
    """
    a, b = spec.rate_cap, spec.energy
    T = a.shape[0]
    scale = max(float(a.max()), 1.0)
    x = np.empty((trials, T))
    a2 = np.empty((trials, T))
    b2 = np.empty(trials)
    for i in range(trials):
        rng = _trial_rng(seed, i)
        x[i] = _probe_points(rng, T, scale)
        a2[i], b2[i] = sample_adjacent(spec, adj, rng)
    p = project_rows(x, np.broadcast_to(a, x.shape), np.full(trials, b))
    q = project_rows(x, a2, b2)
    diff = q - p
    l2 = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    l1 = np.abs(diff).sum(axis=1)
    joint = 2.0 * np.abs(a2 - a).sum(axis=1) + np.abs(b2 - b)
    bound = 2.0 * adj.delta_r + adj.delta_E
    report = SensitivityReport(
        x0=[], a=a.tolist(), b=float(b), trials=trials,
        joint_l2=float(l2.max(initial=0.0)), joint_l2_bound=bound,
    )
    slack = 1e-9 * max(1.0, bound)
    bad_chain = np.flatnonzero((l2 > l1 + slack) | (l1 > joint + slack))
    if bad_chain.size:
        report.violations.append(f"l2 <= l1 <= 2|da| + |db| fails on {bad_chain.size} trials, first {bad_chain[0]}")
    if report.joint_l2 > bound + slack:
        report.violations.append(f"max l2 gap {report.joint_l2} exceeds {bound}")
    return report


# Batteries: random-instance sweeps shared by the CLI and the tests.


@dataclass
class BatteryResult:
    name: str
    instances: int
    checked: int
    worst: float
    threshold: float
    passed: bool
    skipped: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def skip_rate(self) -> float:
        return self.skipped / self.instances if self.instances else 0.0


def random_instance(rng, T: int):
    """``x0`` around the box, caps in ``[0.5, 2]``, budget strictly inside the feasible range."""
    a = rng.uniform(0.5, 2.0, T)
    x0 = rng.normal(0.5, 1.5, T)
    b = rng.uniform(0.05, 0.95) * a.sum()
    return x0, a, b


def global_b_battery(n: int = 500, seed: int = 0, tol: float = 1e-9) -> BatteryResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        x0, a, b = random_instance(rng, int(rng.integers(2, 9)))
        b2 = rng.uniform(0.0, a.sum())
        dist = float(np.abs(_solve(x0, a, b2) - _solve(x0, a, b)).sum())
        worst = max(worst, abs(dist - abs(b2 - b)))
    return BatteryResult("global-b", n, n, float(worst), tol, bool(worst < tol))


def tight_a_case():
    """An instance where the cap bound is attained: the l1 move is exactly ``2 ||a2 - a||_1``."""
    return np.array([2.0, 0.0]), np.array([1.0, 1.0]), np.array([0.5, 1.0]), 1.0


def global_a_battery(n: int = 500, seed: int = 0, tol: float = 1e-9) -> BatteryResult:
    rng = np.random.default_rng(seed)
    x0, a, a2, b = tight_a_case()
    moved = float(np.abs(_solve(x0, a2, b) - _solve(x0, a, b)).sum())
    best_ratio = moved / (2.0 * np.abs(a2 - a).sum())
    worst = moved - 2.0 * float(np.abs(a2 - a).sum())
    for _ in range(n - 1):
        x0, a, b = random_instance(rng, int(rng.integers(2, 9)))
        a2 = np.maximum(a + rng.normal(0.0, 0.3, a.shape), 0.0)
        if a2.sum() < b:
            a2 *= b / a2.sum()
        bound = 2.0 * float(np.abs(a2 - a).sum())
        moved = float(np.abs(_solve(x0, a2, b) - _solve(x0, a, b)).sum())
        worst = max(worst, moved - bound)
        if bound > 0:
            best_ratio = max(best_ratio, moved / bound)
    return BatteryResult(
        "global-a", n, n, float(worst), tol, bool(worst <= tol and best_ratio > 0.99),
        notes={"max_ratio": float(best_ratio)},
    )


def local_battery(n: int = 2000, seed: int = 0, T_range=(2, 8), tol_b: float = 1e-4, tol_a: float = 1e-3) -> BatteryResult:
    """Finite-difference derivatives on random instances.

    Checks, on every non-degenerate instance, that ``d x*/db`` is nonnegative
    with unit sum, and that the summed l1 norm of the cap columns is at most 2.
    The summed bound fails once two or more caps bind (each binding cap
    contributes a column of norm 2); ``notes`` records how often and the worst
    case so the failure is visible rather than hidden.
    """
    rng = np.random.default_rng(seed)
    skipped = 0
    worst_b = 0.0
    worst_sum = 0.0
    worst_col = 0.0
    sum_fail = 0
    multi_cap = 0
    example = None
    for _ in range(n):
        x0, a, b = random_instance(rng, int(rng.integers(T_range[0], T_range[1] + 1)))
        h = default_step(a)
        try:
            db = local_sensitivity_b(x0, a, b, h)
            da = local_sensitivity_a(x0, a, b, h)
        except DegenerateInstance:
            skipped += 1
            continue
        worst_b = max(worst_b, -float(db.min()), abs(float(db.sum()) - 1.0))
        cols = np.abs(da).sum(axis=0)
        worst_col = max(worst_col, float(cols.max()))
        total = float(cols.sum())
        caps = int(np.sum(_pattern(_solve(x0, a, b), a) == AT_CAP))
        multi_cap += caps >= 2
        if total > 2.0 + tol_a:
            sum_fail += 1
            if example is None or total > worst_sum:
                example = {"x0": x0.tolist(), "a": a.tolist(), "b": float(b), "column_l1": cols.tolist()}
        worst_sum = max(worst_sum, total)
    checked = n - skipped
    notes = {
        "worst_db": worst_b,
        "worst_column_l1": worst_col,
        "worst_summed_l1": worst_sum,
        "summed_bound_failures": sum_fail,
        "instances_with_2plus_caps": int(multi_cap),
        "worst_example": example,
    }
    passed = bool(skipped / n < 0.01 and worst_b <= tol_b and worst_sum <= 2.0 + tol_a)
    return BatteryResult("local", n, checked, worst_sum, 2.0 + tol_a, passed, skipped=skipped, notes=notes)

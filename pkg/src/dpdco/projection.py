"""Euclidean projection onto box-budget sets ``{x : 0 <= x <= a, sum(x) = b}``.

The production path solves the dual water-filling problem exactly: the
minimizer is ``clip(x0 + nu, 0, a)`` where ``nu`` is located by scanning the
sorted kinks of the piecewise-linear map ``nu -> sum(clip(x0 + nu, 0, a))``.
The heavy lifting lives in ``_kernels`` (Cython) with a numpy fallback in
``_kernels_py``; ``BACKEND`` reports which one was imported.

``project_oracle`` is an independent brute-force solver that enumerates every
activity pattern and checks the KKT conditions. It is only meant for tests.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatch, InfeasibleSet, NonFiniteInput, TooLarge

if os.environ.get("DPDCO_FORCE_PYTHON") == "1":
    from . import _kernels_py as _kernels
else:
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        from . import _kernels_py as _kernels

BACKEND: str = _kernels.BACKEND
project_rows = _kernels.project_rows

ORACLE_MAX_T = 10

# Activity labels used by the oracle and by KKT reconstruction.
AT_ZERO, AT_CAP, INTERIOR = 0, 1, 2


@dataclass(frozen=True)
class BoxBudgetSet:
    """The set ``{x : 0 <= x <= a, 1'x = b}``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim != 1:
            raise DimensionMismatch(f"caps must be a vector, got shape {a.shape}")
        if not (np.all(np.isfinite(a)) and np.isfinite(self.b)):
            raise NonFiniteInput("caps and budget must be finite")
        if np.any(a < 0):
            raise InfeasibleSet("caps must be nonnegative")
        b = float(self.b)
        if b < 0 or b > a.sum():
            raise InfeasibleSet(f"budget {b} outside [0, {a.sum()}]")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def contains(self, x, tol: float = 1e-10) -> bool:
        x = np.asarray(x, dtype=np.float64)
        scale = max(1.0, self.b)
        return bool(
            np.all(x >= -tol)
            and np.all(x <= self.a + tol)
            and abs(x.sum() - self.b) <= tol * scale
        )


def _check_point(x0, dim: int) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (dim,):
        raise DimensionMismatch(f"point has shape {x0.shape}, set has dimension {dim}")
    if not np.all(np.isfinite(x0)):
        raise NonFiniteInput("point has non-finite entries")
    return x0


def project(x0, box: BoxBudgetSet) -> np.ndarray:
    """Return the unique minimizer of ``0.5 * ||x - x0||^2`` over ``box``."""
    x0 = _check_point(x0, box.dim)
    out = project_rows(x0[None, :], box.a[None, :], np.array([box.b]))
    return out[0]


def project_batch(x0, a, b) -> np.ndarray:
    """Row-wise projection; validates shapes and feasibility once for the batch."""
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if x0.ndim != 2 or a.shape != x0.shape or b.shape != (x0.shape[0],):
        raise DimensionMismatch(f"shapes x0={x0.shape}, a={a.shape}, b={b.shape}")
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFiniteInput("non-finite entries in batch projection input")
    if np.any(a < 0) or np.any(b < 0) or np.any(b > a.sum(axis=1)):
        raise InfeasibleSet("batch contains an infeasible (a, b) row")
    return project_rows(x0, a, b)


@lru_cache(maxsize=None)
def _patterns(dim: int) -> np.ndarray:
    return np.array(list(itertools.product((AT_ZERO, AT_CAP, INTERIOR), repeat=dim)), dtype=np.int8)


def project_oracle(x0, box: BoxBudgetSet, tol: float = 1e-12) -> np.ndarray:
    """Brute-force projection by enumerating all ``3**T`` activity patterns.

    For each pattern the interior coordinates share the multiplier ``nu`` of the
    budget row, which is fixed by the budget equation. A pattern is accepted when
    the resulting point is primal feasible and the bound multipliers have the
    right sign. Exponential in ``T``; refuses ``T > 10``.
    """
    dim = box.dim
    if dim > ORACLE_MAX_T:
        raise TooLarge(f"oracle enumerates 3**T patterns; T={dim} > {ORACLE_MAX_T}")
    x0 = _check_point(x0, dim)
    a, b = box.a, box.b
    scale = max(1.0, b, float(np.abs(x0).max(initial=0.0)), float(a.max(initial=0.0)))
    eps = tol * scale

    pats = _patterns(dim)
    zero = pats == AT_ZERO
    cap = pats == AT_CAP
    inner = pats == INTERIOR
    nint = inner.sum(axis=1)
    fixed = cap @ a
    free = inner @ x0

    # Patterns with at least one interior coordinate pin nu through the budget.
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.where(nint > 0, (b - fixed - free) / np.maximum(nint, 1), np.nan)
    x = np.where(cap, a, 0.0) + np.where(inner, x0 + nu[:, None], 0.0)
    lam = np.where(zero, -(x0 + nu[:, None]), 0.0)
    mu = np.where(cap, x0 + nu[:, None] - a, 0.0)
    ok = (
        (nint > 0)
        & np.all((x >= -eps) & (x <= a + eps), axis=1)
        & np.all(lam >= -eps, axis=1)
        & np.all(mu >= -eps, axis=1)
        & (np.abs(x.sum(axis=1) - b) <= eps * dim)
    )
    hits = np.flatnonzero(ok)
    if hits.size:
        return x[hits[0]].copy()

    # All coordinates at a bound: nu is free in [max over capped, min over zeros].
    for k in np.flatnonzero(nint == 0):
        if abs(fixed[k] - b) > eps * dim:
            continue
        lo = np.max(a[cap[k]] - x0[cap[k]], initial=-np.inf)
        hi = np.min(-x0[zero[k]], initial=np.inf)
        if lo <= hi + eps:
            return np.where(cap[k], a, 0.0)
    raise InfeasibleSet("no KKT point found; set is infeasible or tolerance too tight")


def active_pattern(x, box: BoxBudgetSet, tol: float = 0.0) -> np.ndarray:
    """Label each coordinate of a feasible ``x`` as at zero, at cap, or interior."""
    x = np.asarray(x, dtype=np.float64)
    pat = np.full(x.shape, INTERIOR, dtype=np.int8)
    pat[x <= tol] = AT_ZERO
    pat[(x >= box.a - tol) & (box.a > tol)] = AT_CAP
    return pat


def kkt_multipliers(x0, x, box: BoxBudgetSet, tol: float = 1e-12):
    """Reconstruct ``(lam, mu, nu)`` for a candidate projection ``x``.

    Stationarity reads ``x - lam + mu - nu = x0``. ``nu`` comes from the interior
    coordinates when there are any, else from the midpoint of its admissible
    interval.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    a = box.a
    scale = max(1.0, box.b, float(np.abs(x0).max(initial=0.0)))
    pat = active_pattern(x, box, tol * scale)
    inner = pat == INTERIOR
    if inner.any():
        nu = float(np.mean(x[inner] - x0[inner]))
    else:
        lo = np.max(a[pat == AT_CAP] - x0[pat == AT_CAP], initial=-np.inf)
        hi = np.min(-x0[pat == AT_ZERO], initial=np.inf)
        if np.isfinite(lo) and np.isfinite(hi):
            nu = 0.5 * (lo + hi)
        else:
            nu = float(lo if np.isfinite(lo) else hi)
    lam = np.where(pat == AT_ZERO, x - x0 - nu, 0.0)
    mu = np.where(pat == AT_CAP, x0 + nu - x, 0.0)
    # Zero-width box: both bounds active, split the stationarity gap by sign.
    pinned = a <= tol * scale
    lam = np.where(pinned, np.maximum(0.0, -(x0 + nu)), lam)
    mu = np.where(pinned, np.maximum(0.0, x0 + nu), mu)
    return lam, mu, nu


def kkt_residual(x0, x, box: BoxBudgetSet) -> float:
    """Max violation over stationarity, feasibility, sign and complementarity."""
    x0 = np.asarray(x0, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    lam, mu, nu = kkt_multipliers(x0, x, box)
    a = box.a
    parts = [
        np.abs(x - lam + mu - nu - x0).max(initial=0.0),
        abs(x.sum() - box.b),
        np.maximum(-x, 0.0).max(initial=0.0),
        np.maximum(x - a, 0.0).max(initial=0.0),
        np.maximum(-lam, 0.0).max(initial=0.0),
        np.maximum(-mu, 0.0).max(initial=0.0),
        np.abs(lam * x).max(initial=0.0),
        np.abs(mu * (x - a)).max(initial=0.0),
    ]
    return float(max(parts))

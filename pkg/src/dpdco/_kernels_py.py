"""Pure numpy kernels. Used when the compiled ``_kernels`` extension is absent.

Both backends expose the same functions with the same signatures so callers
never branch on which one is loaded.
"""

import numpy as np

BACKEND = "numpy"

_MAX_REFINE = 4


def project_rows(x0, a, b, out=None):
    """Project every row of ``x0`` onto ``{x : 0 <= x <= a_row, sum(x) = b_row}``.

    ``x0`` and ``a`` are float64 arrays of shape (N, T), ``b`` has shape (N,).
    Inputs are assumed validated (finite, ``0 <= b <= a.sum(1)``).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, t = x0.shape
    if out is None:
        out = np.empty_like(x0)

    cap_sum = a.sum(axis=1)
    at_zero = b <= 0.0
    at_cap = (b >= cap_sum) & ~at_zero
    inner = ~(at_zero | at_cap)
    out[at_zero] = 0.0
    out[at_cap] = a[at_cap]
    if not inner.any():
        return out

    x0i, ai, bi = x0[inner], a[inner], b[inner]
    m = x0i.shape[0]
    rows = np.arange(m)

    # g(nu) = sum(clip(x0 + nu, 0, a)) is piecewise linear with kinks at -x0 and a - x0.
    bp = np.concatenate([-x0i, ai - x0i], axis=1)
    step = np.concatenate([np.ones((m, t)), -np.ones((m, t))], axis=1)
    order = np.argsort(bp, axis=1, kind="stable")
    bps = np.take_along_axis(bp, order, axis=1)
    slope = np.cumsum(np.take_along_axis(step, order, axis=1), axis=1)[:, :-1]
    g = np.zeros_like(bps)
    np.cumsum(slope * np.diff(bps, axis=1), axis=1, out=g[:, 1:])

    hit = np.argmax(g >= bi[:, None], axis=1)
    hit = np.maximum(hit, 1)
    nu = 0.5 * (bps[rows, hit - 1] + bps[rows, hit])

    # Re-derive nu exactly from the active pattern on the crossing segment.
    for _ in range(_MAX_REFINE):
        z = x0i + nu[:, None]
        interior = (z > 0.0) & (z < ai)
        capped = z >= ai
        nint = interior.sum(axis=1)
        fixed = np.where(capped, ai, 0.0).sum(axis=1)
        free = np.where(interior, x0i, 0.0).sum(axis=1)
        ok = nint > 0
        nu = np.where(ok, (bi - fixed - free) / np.where(ok, nint, 1), nu)
        x = np.clip(x0i + nu[:, None], 0.0, ai)
        resid = bi - x.sum(axis=1)
        if np.all(np.abs(resid) <= 1e-13 * np.maximum(1.0, bi)):
            break
        # Segment was mislocated by rounding; step nu toward the crossing.
        nu = nu + resid / np.maximum(nint, 1)
    out[inner] = x
    return out

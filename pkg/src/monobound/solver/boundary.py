"""Boundary location from a discrete obstacle defect."""

from __future__ import annotations

import numpy as np


def refine_crossing(y, d, n: int, step: int) -> float:
    """Sub-cell free-boundary location next to the stop node ``n``.

    Near a smooth-fit boundary the defect d = W - psi behaves like
    -C (y - y*)^2, so sqrt(-d) is linear in y.  The node right next to the
    contact set is distorted by the discrete obstacle, so the line is drawn
    through the continuation nodes n + 2 step and n + 3 step and extrapolated
    to zero.  The result is clamped to [y[n] - step h, y[n + 2 step]].
    """
    y = np.asarray(y, dtype=float)
    y0 = y[n]
    m = len(y)
    i1, i2 = n + 2 * step, n + 3 * step
    if not (0 <= i2 < m):
        i1, i2 = n + step, n + 2 * step
    if not (0 <= i1 < m and 0 <= i2 < m) or d[i1] >= 0 or d[n + step] >= 0:
        return float(y0)
    q1, q2 = np.sqrt(-d[i1]), np.sqrt(-d[i2])
    if q2 <= q1:
        return float(y0)
    ys = y[i1] - q1 * (y[i2] - y[i1]) / (q2 - q1)
    far = y0 - (y[n + step] - y0)
    lo, hi = min(far, y[i1]), max(far, y[i1])
    return float(np.clip(ys, lo, hi))

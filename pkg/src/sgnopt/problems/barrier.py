"""Log-barrier helper for problems that fold bound handling into f.

Adds f_b = -mu * sum(log(p - lower) + log(upper - p)) to an objective, which
keeps iterates strictly inside their box without direction filtering.  The
benchmark problems do not use it; it exists for authoring new problems whose
bounds should be smooth rather than projected.
"""
from __future__ import annotations

import numpy as np

from ..errors import InfeasiblePoint


def log_barrier_terms(p: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                      mu: float = 1e-4):
    """Barrier value, gradient, and Hessian diagonal for box bounds.

    Raises :class:`InfeasiblePoint` when any component sits on or outside its
    bounds (the barrier is only defined strictly inside the box).
    """
    p = np.asarray(p, dtype=np.float64)
    lo = np.asarray(lower, dtype=np.float64)
    hi = np.asarray(upper, dtype=np.float64)
    dl = p - lo
    du = hi - p
    if np.any(dl <= 0) or np.any(du <= 0):
        bad = int(np.flatnonzero((dl <= 0) | (du <= 0))[0])
        raise InfeasiblePoint(f"parameter {bad} is not strictly inside its bounds")
    value = -mu * float(np.sum(np.log(dl)) + np.sum(np.log(du)))
    grad = -mu / dl + mu / du
    hess_diag = mu / dl ** 2 + mu / du ** 2
    return value, grad, hess_diag

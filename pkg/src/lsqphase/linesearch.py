"""Weak Wolfe line search for real functions of complex variables.

The two tests are applied exactly as written for complex iterates, with the
real part of the Hermitian product standing in for the dot product:

    f(z + a d) <= f(z) + c1 * a * Re(d^* g)         (sufficient decrease)
    Re(d^* g(z + a d)) >= c2 * Re(d^* g)            (curvature)
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .signals import real_inner


class NotDescentDirection(ValueError):
    pass


class LineSearchWarning(RuntimeWarning):
    pass


@dataclass
class LineSearchResult:
    alpha: float
    point: Any
    evaluations: int
    converged: bool


def wolfe_line_search(
    evaluate: Callable[[np.ndarray], Any],
    z: np.ndarray,
    d: np.ndarray,
    f0: float,
    g0: np.ndarray,
    c1: float = 1e-4,
    c2: float = 0.9,
    alpha0: float = 1.0,
    max_evals: int = 40,
    start: Any = None,
) -> LineSearchResult:
    """Bracket-then-bisect search for a step satisfying both Wolfe conditions.

    ``evaluate(z)`` must return an object exposing ``.f`` and ``.g``; both may
    be lazy, and ``.g`` is only touched once sufficient decrease holds. The
    bracket starts at ``alpha0``, doubles while the step is too short and
    bisects once an upper end is known.

    When the budget runs out the best sufficient-decrease step seen so far is
    returned with ``converged=False`` (``alpha = 0`` and ``start`` if there was
    none).
    """
    if not 0 < c1 < c2 < 1:
        raise ValueError("need 0 < c1 < c2 < 1")
    slope0 = real_inner(d, g0)
    if not slope0 < 0:
        raise NotDescentDirection(f"Re(d^* g) = {slope0:g} is not negative")

    lo, hi = 0.0, math.inf
    alpha = alpha0
    best = None
    for count in range(1, max_evals + 1):
        point = evaluate(z + alpha * d)
        f = point.f
        if not np.isfinite(f) or f > f0 + c1 * alpha * slope0:
            hi = alpha
        else:
            if best is None or f < best[1].f:
                best = (alpha, point)
            slope = real_inner(d, point.g)
            if slope >= c2 * slope0:
                return LineSearchResult(alpha, point, count, True)
            lo = alpha
        alpha = 2 * alpha if math.isinf(hi) else 0.5 * (lo + hi)

    warnings.warn("Wolfe conditions not met within the evaluation budget", LineSearchWarning)
    if best is None:
        return LineSearchResult(0.0, start, max_evals, False)
    return LineSearchResult(best[0], best[1], max_evals, False)

"""Levenberg-Marquardt for small dense least-squares problems."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class TrialPointFailure(Exception):
    """Raised by a residual function that cannot be evaluated at a point.

    The optimizer treats it like a step with infinite cost and shrinks the
    trust region.
    """


@dataclass
class LMResult:
    x: np.ndarray
    cost: float            # 0.5 * ||r||^2
    grad_scaled: float     # ||J^T r|| / ||r||^2
    iterations: int
    converged: bool
    reason: str


def _scaled_grad(J, r):
    rr = float(r @ r)
    g = float(np.linalg.norm(J.T @ r))
    if g == 0.0:
        return 0.0
    return g / max(rr, np.finfo(float).tiny)


def levenberg_marquardt(
    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    x0,
    *,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
    gtol: float = 1e-8,
    xtol: float = 1e-10,
    max_iter: int = 200,
) -> LMResult:
    """Minimise ``0.5 * ||r(x)||^2`` given ``fun(x) -> (r, J)``.

    Marquardt's diagonal scaling with Nielsen's damping update. With box
    bounds the trial point is projected onto the box. Convergence is
    declared when ``||J^T r|| / ||r||^2 <= gtol`` (for a Gaussian model this
    is the norm of the mean score) or when an accepted step is shorter than
    ``xtol * (xtol + ||x||)``.
    """
    x = np.array(x0, dtype=float)
    lo = None if lower is None else np.asarray(lower, float)
    hi = None if upper is None else np.asarray(upper, float)

    def project(v):
        if lo is not None:
            v = np.maximum(v, lo)
        if hi is not None:
            v = np.minimum(v, hi)
        return v

    x = project(x)
    try:
        r, J = fun(x)
    except TrialPointFailure:
        return LMResult(x, np.inf, np.inf, 0, False, "residuals not computable at start")
    cost = 0.5 * float(r @ r)
    if not np.isfinite(cost):
        return LMResult(x, np.inf, np.inf, 0, False, "non-finite residuals at start")

    JtJ = J.T @ J
    diag = np.maximum(np.diag(JtJ), 1e-300)
    lam = 1e-3 * float(np.max(diag))
    nu = 2.0
    eps = np.finfo(float).eps

    for it in range(1, max_iter + 1):
        g = J.T @ r
        gs = _scaled_grad(J, r)
        if gs <= gtol:
            return LMResult(x, cost, gs, it - 1, True, "gradient tolerance")
        diag = np.maximum(diag, np.diag(JtJ))

        A = JtJ + lam * np.diag(diag)
        try:
            step = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(A, -g, rcond=None)[0]
        x_new = project(x + step)
        step = x_new - x
        pred = -(g @ step) - 0.5 * step @ JtJ @ step

        step_small = np.linalg.norm(step) <= xtol * (xtol + np.linalg.norm(x))
        try:
            r_new, J_new = fun(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
        except TrialPointFailure:
            cost_new = np.inf
        if not np.isfinite(cost_new):
            lam *= nu
            nu *= 2.0
            if step_small:
                return LMResult(x, cost, gs, it, False, "step rejected at minimum step length")
            continue

        actual = cost - cost_new
        # below rounding of the cost the ratio is noise; accept non-increasing steps
        negligible = pred <= 10 * eps * cost
        rho = actual / pred if pred > 0 else -1.0
        if rho > 1e-4 or (negligible and actual >= -10 * eps * cost):
            x, r, J, cost = x_new, r_new, J_new, cost_new
            JtJ = J.T @ J
            lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3) if rho > 0 else 1.0
            nu = 2.0
            if step_small:
                return LMResult(x, cost, _scaled_grad(J, r), it, True, "step tolerance")
        else:
            lam *= nu
            nu *= 2.0
            if step_small:
                return LMResult(x, cost, gs, it, True, "step tolerance (no further decrease)")
            if lam > 1e20 * float(np.max(diag)):
                return LMResult(x, cost, gs, it, False, "damping overflow")

    return LMResult(x, cost, _scaled_grad(J, r), max_iter, False, "max iterations")

"""Gaussian likelihood for ODE models: fitting, per-observation
log-densities, score vectors, Hessians and sandwich matrices.

Parameter layout is ``theta = (sigma2, xi, psi)`` with one noise variance
per state. Fitting follows the two-stage recipe: unweighted least squares
for ``eta = (xi, psi)``, then ``sigma2_j = mean squared residual of state
j``. When variances differ across states this is not the joint MLE; the
least-squares stage is deliberately left unweighted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .integrator import (
    IntegrationError,
    IntegratorOptions,
    SensitivityTrajectory,
    VariationalTrajectory,
    integrate,
    integrate_with_sensitivities,
    integrate_with_variations,
)
from .optimize import LMResult, TrialPointFailure, levenberg_marquardt

LOG_2PI = math.log(2.0 * math.pi)


class DegenerateFitError(ValueError):
    """A fitted noise variance collapsed to zero (perfect fit)."""

    def __init__(self, message, eta_hat=None):
        super().__init__(message)
        self.eta_hat = eta_hat


class FitFailure(RuntimeError):
    """No start point produced a usable least-squares fit."""


@dataclass(frozen=True)
class Dataset:
    times: np.ndarray
    obs: np.ndarray
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        obs = np.asarray(self.obs, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.shape[0] != times.shape[0]:
            raise ValueError("times and observations disagree on n")
        if times.shape[0] < 2:
            raise ValueError("a dataset needs at least 2 observations")
        if np.any(np.diff(times) < 0):
            raise ValueError("times must be ascending")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(obs))):
            raise ValueError("times and observations must be finite")
        names = None if self.names is None else tuple(self.names)
        if names is not None and len(names) != obs.shape[1]:
            raise ValueError("one column name per observed state is required")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def d(self) -> int:
        return self.obs.shape[1]

    def for_model(self, model) -> np.ndarray:
        """Observation matrix with columns in the model's state order."""
        if self.names is None:
            if self.d != model.d:
                raise ValueError(f"dataset has {self.d} columns, model {model.name!r} has {model.d} states")
            return self.obs
        missing = [s for s in model.states if s not in self.names]
        if missing:
            raise ValueError(
                f"model {model.name!r} states {missing} not found among data columns {list(self.names)}"
            )
        if self.d != model.d:
            raise ValueError(f"dataset has {self.d} columns, model {model.name!r} has {model.d} states")
        return self.obs[:, [self.names.index(s) for s in model.states]]


@dataclass(frozen=True)
class ThetaVector:
    sigma2: np.ndarray
    xi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        for name in ("sigma2", "xi", "psi"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.sigma2.shape != self.xi.shape:
            raise ValueError("sigma2 and xi must both have one entry per state")
        if np.any(self.sigma2 <= 0):
            raise ValueError("noise variances must be positive")

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate([self.xi, self.psi])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.sigma2, self.xi, self.psi])

    @classmethod
    def from_array(cls, arr, d: int) -> "ThetaVector":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:d], arr[d : 2 * d], arr[2 * d :])


# --------------------------------------------------------------------------
# log-density and derivatives
# --------------------------------------------------------------------------


def _logdens(obs, x, sigma2):
    g = obs - x
    d = obs.shape[1]
    return -0.5 * d * LOG_2PI - 0.5 * np.sum(np.log(sigma2)) - np.sum(g * g / (2.0 * sigma2), axis=1)


def gaussian_loglik(model, theta: ThetaVector, data: Dataset, opts: Optional[IntegratorOptions] = None) -> np.ndarray:
    """Per-observation Gaussian log-density ``log p(Y_i | t_i; theta)``."""
    obs = data.for_model(model)
    traj = integrate(model, theta.eta, data.times, opts)
    return _logdens(obs, traj.states, theta.sigma2)


def score_per_obs(model, theta: ThetaVector, data: Dataset, sens: SensitivityTrajectory) -> np.ndarray:
    """Rows ``grad_theta log p(Y_i | t_i; theta)``, shape ``(n, 2d+p)``."""
    obs = data.for_model(model)
    d = model.d
    if sens.sens.shape[0] != obs.shape[0] or sens.sens.shape[1] != d:
        raise ValueError("sensitivities do not match the dataset")
    inv = 1.0 / theta.sigma2
    g = obs - sens.states
    out = np.empty((obs.shape[0], 2 * d + model.p))
    out[:, :d] = 0.5 * (g * g * inv - 1.0) * inv
    out[:, d:] = np.einsum("ijk,ij->ik", sens.sens, g * inv)
    return out


def hessian_per_obs(model, theta: ThetaVector, data: Dataset, var: VariationalTrajectory) -> np.ndarray:
    """Per-observation Hessians of the log-density, shape ``(n, 2d+p, 2d+p)``.

    Blocks: a diagonal variance block, variance/eta cross terms
    ``-s_jk g_j / sigma_j^4``, and the eta block
    ``sum_j (g_j/sigma_j^2) z_jab - sum_j s_ja s_jb / sigma_j^2``.
    """
    obs = data.for_model(model)
    d = model.d
    n = obs.shape[0]
    if var.var2.shape[0] != n:
        raise ValueError("variational solution does not match the dataset")
    inv = 1.0 / theta.sigma2
    g = obs - var.states
    s = var.sens
    m = s.shape[2]
    H = np.zeros((n, 2 * d + model.p, 2 * d + model.p))
    idx = np.arange(d)
    H[:, idx, idx] = 0.5 * inv**2 - g * g * inv**3
    cross = -s * (g * inv**2)[:, :, None]  # (n, d, m)
    H[:, :d, d:] = cross
    H[:, d:, :d] = np.transpose(cross, (0, 2, 1))
    H[:, d:, d:] = np.einsum("ijab,ij->iab", var.var2, g * inv) - np.einsum("ija,ijb,j->iab", s, s, inv)
    assert H.shape[1] == d + m
    return H


def sandwich_matrices(scores, hessians) -> tuple[np.ndarray, np.ndarray]:
    """``H = mean Hessian``, ``V = mean outer product of scores``."""
    scores = np.asarray(scores, dtype=float)
    hessians = np.asarray(hessians, dtype=float)
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise ValueError("scores must be a non-empty (n, k) matrix")
    n = scores.shape[0]
    H = hessians.mean(axis=0)
    V = scores.T @ scores / n
    return 0.5 * (H + H.T), V


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 8
    gtol: float = 1e-8
    xtol: float = 1e-10
    max_iter: int = 200
    fixed: Mapping[str, float] = field(default_factory=dict)
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    seed: int = 0
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)

    def __post_init__(self):
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class LeastSquaresResult:
    eta: np.ndarray
    free: np.ndarray       # boolean mask over eta
    rss: float
    grad_scaled: float
    iterations: int
    converged: bool
    message: str
    starts: int            # start points tried
    starts_failed: int


@dataclass(frozen=True)
class FitResult:
    model_name: str
    theta_names: tuple[str, ...]
    theta_hat: ThetaVector
    free: np.ndarray              # boolean mask over theta
    loglik_per_obs: np.ndarray
    total_loglik: float
    scores: np.ndarray            # (n, 2d+p)
    hessians: np.ndarray          # (n, 2d+p, 2d+p)
    H_hat: np.ndarray
    V_hat: np.ndarray
    residuals: np.ndarray         # (n, d), Y - x(t; eta_hat)
    ls: LeastSquaresResult

    @property
    def converged(self) -> bool:
        return self.ls.converged

    @property
    def n(self) -> int:
        return self.loglik_per_obs.shape[0]

    def free_sandwich(self) -> tuple[np.ndarray, np.ndarray]:
        """``H_hat`` and ``V_hat`` restricted to the estimated coordinates."""
        f = self.free
        return self.H_hat[np.ix_(f, f)], self.V_hat[np.ix_(f, f)]

    def summary(self) -> dict:
        th = self.theta_hat
        return {
            "model": self.model_name,
            "theta": dict(zip(self.theta_names, th.as_array().tolist())),
            "free": [nm for nm, f in zip(self.theta_names, self.free) if f],
            "total_loglik": self.total_loglik,
            "rss": self.ls.rss,
            "converged": self.ls.converged,
            "iterations": self.ls.iterations,
            "grad_norm": self.ls.grad_scaled,
            "starts": self.ls.starts,
            "starts_failed": self.ls.starts_failed,
            "message": self.ls.message,
        }


def initial_eta(model, data: Dataset, init=None, fixed: Optional[Mapping[str, float]] = None) -> np.ndarray:
    """Resolve a full ``eta`` guess.

    Precedence: ``fixed`` values, then ``init`` (mapping or full vector),
    then the model file's ``init:`` defaults. Missing initial values fall
    back to the first observation; missing rate parameters are an error.
    """
    names = model.eta_names
    if init is not None and not isinstance(init, Mapping):
        eta = np.asarray(init, dtype=float).ravel()
        if eta.shape[0] != len(names):
            raise ValueError(f"initial guess has length {eta.shape[0]}, expected {len(names)}")
        guess = dict(zip(names, eta))
    else:
        guess = dict(model.init)
        guess.update(init or {})
    unknown = set(guess) - set(names)
    if unknown:
        raise ValueError(f"initial guess for unknown name(s) {sorted(unknown)} in model {model.name!r}")
    guess.update(model.fixed)
    guess.update(fixed or {})
    obs = data.for_model(model)
    eta = np.empty(len(names))
    for k, nm in enumerate(names):
        if nm in guess:
            eta[k] = guess[nm]
        elif k < model.d:
            eta[k] = obs[0, k]
        else:
            raise ValueError(f"no initial guess for parameter {nm!r} of model {model.name!r}")
    return eta


def _perturb(eta, free, lower, rng):
    out = eta.copy()
    for k in np.flatnonzero(free):
        if lower[k] >= 0 and eta[k] > 0:
            out[k] = eta[k] * math.exp(rng.uniform(math.log(0.25), math.log(4.0)))
        else:
            scale = abs(eta[k]) if eta[k] != 0 else 1.0
            out[k] = eta[k] + rng.uniform(-0.5, 0.5) * scale
    return out


def fit_least_squares(model, data: Dataset, init=None, opts: Optional[FitOptions] = None) -> LeastSquaresResult:
    """Unweighted least squares over the free entries of ``eta``.

    Levenberg-Marquardt with the Jacobian from the sensitivity equations,
    started from the guess and from ``opts.restarts`` random perturbations
    of it; the lowest residual sum of squares wins.
    """
    opts = opts or FitOptions()
    obs = data.for_model(model)
    fixed = {**model.fixed, **opts.fixed}
    eta0 = initial_eta(model, data, init, fixed)
    names = model.eta_names
    free = np.array([nm not in fixed for nm in names])
    lower = np.full(len(names), -np.inf)
    upper = np.full(len(names), np.inf)
    for nm, (lo, hi) in opts.bounds.items():
        if nm not in names:
            raise ValueError(f"bounds for unknown name {nm!r}")
        k = names.index(nm)
        lower[k], upper[k] = lo, hi

    if not free.any():
        traj = integrate(model, eta0, data.times, opts.integrator)
        g = obs - traj.states
        return LeastSquaresResult(eta0, free, float(np.sum(g * g)), 0.0, 0, True, "no free parameters", 1, 0)

    def residuals(eta_free):
        eta = eta0.copy()
        eta[free] = eta_free
        try:
            sol = integrate_with_sensitivities(model, eta, data.times, opts.integrator)
        except IntegrationError as exc:
            raise TrialPointFailure(str(exc)) from exc
        r = (sol.states - obs).ravel()
        J = sol.sens[:, :, free].reshape(r.shape[0], -1)
        return r, J

    rng = np.random.default_rng(opts.seed)
    starts = [eta0] + [_perturb(eta0, free, lower, rng) for _ in range(opts.restarts)]
    best: Optional[LMResult] = None
    failed = 0
    for start in starts:
        start = np.clip(start, lower, upper)
        res = levenberg_marquardt(
            residuals, start[free],
            lower=lower[free], upper=upper[free],
            gtol=opts.gtol, xtol=opts.xtol, max_iter=opts.max_iter,
        )
        if not np.isfinite(res.cost):
            failed += 1
            continue
        if best is None or res.cost < best.cost or (res.cost == best.cost and res.converged and not best.converged):
            best = res
    if best is None:
        raise FitFailure(f"model {model.name!r}: residuals could not be computed from any start point")
    eta = eta0.copy()
    eta[free] = best.x
    return LeastSquaresResult(
        eta, free, 2.0 * best.cost, best.grad_scaled, best.iterations,
        best.converged, best.reason, len(starts), failed,
    )


def fit_mle(model, data: Dataset, init=None, opts: Optional[FitOptions] = None) -> FitResult:
    """Fit ``model`` to ``data`` and assemble everything the S-W test needs."""
    opts = opts or FitOptions()
    ls = fit_least_squares(model, data, init, opts)
    obs = data.for_model(model)
    var = integrate_with_variations(model, ls.eta, data.times, opts.integrator)
    g = obs - var.states
    sigma2 = np.mean(g * g, axis=0)
    floor = 1e-12 * (1.0 + np.mean(obs * obs, axis=0))
    bad = [s for s, v, f in zip(model.states, sigma2, floor) if v < f]
    if bad:
        raise DegenerateFitError(
            f"model {model.name!r}: fitted noise variance is zero for {bad} (perfect fit)", ls.eta
        )
    d = model.d
    theta = ThetaVector(sigma2, ls.eta[:d], ls.eta[d:])
    logp = _logdens(obs, var.states, sigma2)
    scores = score_per_obs(model, theta, data, var.base)
    hess = hessian_per_obs(model, theta, data, var)
    H, V = sandwich_matrices(scores, hess)
    free = np.concatenate([np.ones(d, dtype=bool), ls.free])
    return FitResult(
        model.name, model.theta_names, theta, free, logp, float(np.sum(logp)),
        scores, hess, H, V, g, ls,
    )

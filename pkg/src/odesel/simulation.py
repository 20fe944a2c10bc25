"""Synthetic data and Monte Carlo size/power studies.

Random streams: replication ``r`` of grid cell ``c`` under master seed
``s`` draws from ``Philox(SeedSequence((s, c, r)))``. The stream depends
only on its coordinates, so results do not change with evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate as spi

from .integrator import IntegrationError, integrate
from .likelihood import Dataset, DegenerateFitError, FitFailure, FitOptions, ThetaVector, fit_mle
from .model_dsl import OdeModel, bundled_model
from .swtest import Decision, DegenerateVarianceError, sw_test

SAMPLING_MODES = ("uniform", "equispaced")

# size-study data-generating process
SIZE_XI = 100.0
SIZE_PSI1 = -0.05
SIZE_PSI2 = 1.0
SIZE_SIGMA = 7.0

# power-study data-generating process
POWER_XI = (1.0, 2.0)
POWER_PSI = (1.0, 1.0, 1.0, 1.0)


def stream(seed: int, cell: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, cell, rep))))


@dataclass(frozen=True)
class DgpSpec:
    model: OdeModel
    theta_true: ThetaVector
    n: int
    tau: float
    sampling: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.sampling not in SAMPLING_MODES:
            raise ValueError(f"sampling must be one of {SAMPLING_MODES}")
        if self.theta_true.xi.shape[0] != self.model.d or self.theta_true.psi.shape[0] != self.model.p:
            raise ValueError("theta_true does not match the model dimensions")


def sample_times(n: int, tau: float, sampling: str, rng: np.random.Generator) -> np.ndarray:
    if sampling == "equispaced":
        return np.linspace(0.0, tau, n)
    if sampling == "uniform":
        return np.sort(rng.uniform(0.0, tau, n))
    raise ValueError(f"unknown sampling mode {sampling!r}")


def simulate_dataset(spec: DgpSpec, rng: Optional[np.random.Generator] = None, noiseless: bool = False) -> Dataset:
    """Draw times, solve the DGP and add independent Gaussian noise.

    ``noiseless=True`` returns the trajectory itself (noise variance 0).
    """
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(spec.seed))
    times = sample_times(spec.n, spec.tau, spec.sampling, rng)
    x = integrate(spec.model, spec.theta_true.eta, times).states
    if noiseless:
        return Dataset(times, x, spec.model.states)
    noise = rng.standard_normal(x.shape) * np.sqrt(spec.theta_true.sigma2)
    return Dataset(times, x + noise, spec.model.states)


@dataclass(frozen=True)
class StudyResult:
    kind: str                     # "size" or "power"
    grid_name: str
    grid: tuple[float, ...]
    reps: int
    alpha: float
    replications: tuple[int, ...]  # completed replications per cell
    rejections: tuple[int, ...]    # the counted event per cell
    favor_a: tuple[int, ...]
    favor_b: tuple[int, ...]
    failures: tuple[int, ...]
    settings: dict = field(default_factory=dict)

    @property
    def rates(self) -> np.ndarray:
        reps = np.maximum(np.asarray(self.replications), 1)
        return np.asarray(self.rejections) / reps

    @property
    def mc_se(self) -> np.ndarray:
        r = self.rates
        return np.sqrt(r * (1 - r) / np.maximum(np.asarray(self.replications), 1))

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "grid_name": self.grid_name,
            "alpha": self.alpha,
            "reps": self.reps,
            "settings": self.settings,
            "cells": [
                {
                    self.grid_name: g,
                    "replications": n,
                    "rejections": k,
                    "favor_a": fa,
                    "favor_b": fb,
                    "failures": f,
                    "rate": float(rate),
                    "mc_se": float(se),
                }
                for g, n, k, fa, fb, f, rate, se in zip(
                    self.grid, self.replications, self.rejections, self.favor_a,
                    self.favor_b, self.failures, self.rates, self.mc_se,
                )
            ],
        }


_FAILURES = (IntegrationError, DegenerateFitError, FitFailure, DegenerateVarianceError)


def _check_study_args(reps, alpha):
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")


def _pair_decision(model_a, model_b, data, fit_a_opts, fit_b_opts, alpha, init_a=None, init_b=None):
    fa = fit_mle(model_a, data, init_a, fit_a_opts)
    fb = fit_mle(model_b, data, init_b, fit_b_opts)
    return sw_test(fa, fb, alpha).decision


def size_study(
    delta_grid: Sequence[float],
    reps: int = 1000,
    n: int = 300,
    tau: float = 150.0,
    alpha: float = 0.05,
    seed: int = 0,
    sampling: str = "uniform",
) -> StudyResult:
    """Rejection rate of the null when both candidates are equally wrong.

    Data come from ``x' = -0.05 x + 1, x(0) = 100`` with noise s.d. 7.
    Candidate A uses inflow ``1 - delta``, B uses ``1 + delta``; only the
    initial value is estimated.
    """
    _check_study_args(reps, alpha)
    deltas = tuple(float(d) for d in delta_grid)
    if any(not d > 0 for d in deltas):
        raise ValueError("deltas must be positive")
    model = bundled_model("linear_inflow")
    truth = ThetaVector([SIZE_SIGMA**2], [SIZE_XI], [SIZE_PSI1, SIZE_PSI2])
    spec = DgpSpec(model, truth, n, tau, sampling, seed)
    counts = np.zeros((len(deltas), 5), dtype=int)  # done, reject, A, B, fail
    for c, delta in enumerate(deltas):
        opts_a = FitOptions(restarts=0, fixed={"psi1": SIZE_PSI1, "psi2": SIZE_PSI2 - delta})
        opts_b = FitOptions(restarts=0, fixed={"psi1": SIZE_PSI1, "psi2": SIZE_PSI2 + delta})
        for r in range(reps):
            try:
                data = simulate_dataset(spec, stream(seed, c, r))
                dec = _pair_decision(model, model, data, opts_a, opts_b, alpha)
            except _FAILURES:
                counts[c, 4] += 1
                continue
            counts[c, 0] += 1
            counts[c, 1] += dec is not Decision.RETAIN
            counts[c, 2] += dec is Decision.FAVOR_A
            counts[c, 3] += dec is Decision.FAVOR_B
    settings = {
        "dgp": {"xi": SIZE_XI, "psi1": SIZE_PSI1, "psi2": SIZE_PSI2, "sigma": SIZE_SIGMA},
        "n": n, "tau": tau, "sampling": sampling, "seed": seed,
        "free_parameters": ["x"],
        "event": "null rejected (either direction)",
    }
    return StudyResult(
        "size", "delta", deltas, reps, alpha,
        *(tuple(int(v) for v in counts[:, k]) for k in (0, 1, 2, 3, 4)),
        settings=settings,
    )


def power_study(
    psi5_grid: Optional[Sequence[float]] = None,
    n_grid: Optional[Sequence[int]] = None,
    reps: int = 100,
    n: int = 20,
    psi5: float = 0.1,
    sigma: float = 0.1,
    tau: float = 40.0,
    alpha: float = 0.05,
    seed: int = 0,
    restarts: int = 2,
    sampling: str = "equispaced",
) -> StudyResult:
    """Rate at which the logistic-prey model is favoured over Lotka-Volterra.

    Give exactly one of ``psi5_grid`` (``n`` fixed) or ``n_grid`` (``psi5``
    fixed). Data come from the logistic-prey system with
    ``xi = (1, 2)``, ``psi = (1, 1, 1, 1, psi5)`` and equal noise on both
    states. Both candidates estimate all initial values and rates, started
    from the truth and from ``restarts`` perturbations of it.
    """
    _check_study_args(reps, alpha)
    if (psi5_grid is None) == (n_grid is None):
        raise ValueError("give exactly one of psi5_grid and n_grid")
    dgp = bundled_model("logistic_prey")
    lv = bundled_model("lotka_volterra")
    if psi5_grid is not None:
        grid_name, grid = "psi5", tuple(float(v) for v in psi5_grid)
        cells = [(v, n) for v in grid]
    else:
        grid_name, grid = "n", tuple(int(v) for v in n_grid)
        cells = [(psi5, v) for v in grid]
    if any(v < 0 for v, _ in cells):
        raise ValueError("psi5 must be non-negative")
    counts = np.zeros((len(cells), 5), dtype=int)
    for c, (p5, nn) in enumerate(cells):
        truth = ThetaVector([sigma**2] * 2, POWER_XI, [*POWER_PSI, p5])
        spec = DgpSpec(dgp, truth, nn, tau, sampling, seed)
        init_a = np.array([*POWER_XI, *POWER_PSI])
        init_b = truth.eta
        for r in range(reps):
            rng = stream(seed, c, r)
            opts = FitOptions(restarts=restarts, seed=int(rng.integers(2**32)))
            try:
                data = simulate_dataset(spec, rng)
                dec = _pair_decision(lv, dgp, data, opts, opts, alpha, init_a, init_b)
            except _FAILURES:
                counts[c, 4] += 1
                continue
            counts[c, 0] += 1
            counts[c, 1] += dec is Decision.FAVOR_B
            counts[c, 2] += dec is Decision.FAVOR_A
            counts[c, 3] += dec is Decision.FAVOR_B
    settings = {
        "dgp": {"xi": list(POWER_XI), "psi": list(POWER_PSI), "sigma": sigma},
        "n": n if grid_name == "psi5" else None,
        "psi5": psi5 if grid_name == "n" else None,
        "tau": tau, "sampling": sampling, "seed": seed, "restarts": restarts,
        "noise": "equal standard deviation on both states",
        "event": "logistic prey model favoured",
    }
    return StudyResult(
        "power", grid_name, grid, reps, alpha,
        *(tuple(int(v) for v in counts[:, k]) for k in (0, 1, 2, 3, 4)),
        settings=settings,
    )


def kl_linear(delta: float, sigma: float, psi1: float, T: float, density: str = "uniform") -> float:
    """KL divergence between the linear DGP and a model whose inflow is
    shifted by ``delta``, with observation times uniform on ``[0, T]``.
    """
    if psi1 == 0:
        raise ValueError("psi1 must be non-zero")
    if not T > 0:
        raise ValueError("T must be positive")
    if density != "uniform":
        raise ValueError("only the uniform time density is supported")
    val, err = spi.quad(lambda t: (1.0 - math.exp(psi1 * t)) ** 2 / T, 0.0, T, epsabs=0.0, epsrel=1e-13, limit=200)
    if not math.isfinite(val) or err > 1e-9 * max(abs(val), 1e-300):
        raise ArithmeticError(f"quadrature did not converge (estimate {val}, error {err})")
    return delta**2 / (2.0 * sigma**2 * psi1**2) * val

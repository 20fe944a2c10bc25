"""Schennach-Wilhelm likelihood-ratio test for non-nested, overlapping or
nested model pairs.

The ordinary log-likelihood ratio has a degenerate limit when the two
models coincide. Reweighting alternate observations by ``1 + h`` keeps the
statistic asymptotically standard normal in every case, at the price of a
small power loss controlled by the regularisation ``h``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import norm

COND_LIMIT = 1e12


class DegenerateVarianceError(ValueError):
    """The regularised variance of the reweighted ratio is not positive."""


class Decision(str, enum.Enum):
    RETAIN = "Retain"
    FAVOR_A = "FavorA"
    FAVOR_B = "FavorB"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class VarianceComponents:
    sigma_p2: float
    sigma_pq: float
    sigma_q2: float

    @property
    def sigma2(self) -> float:
        return self.sigma_p2 - 2.0 * self.sigma_pq + self.sigma_q2


def _pair(logp, logq):
    logp = np.asarray(logp, dtype=float).ravel()
    logq = np.asarray(logq, dtype=float).ravel()
    if logp.shape != logq.shape:
        raise ValueError("log-density vectors must have equal length")
    return logp, logq


def variance_components(logp, logq) -> VarianceComponents:
    """Centred second moments (divide by ``n``) of the two log-densities."""
    logp, logq = _pair(logp, logq)
    if logp.size < 2:
        raise ValueError("need at least 2 observations")
    cp = logp - logp.mean()
    cq = logq - logq.mean()
    return VarianceComponents(float(np.mean(cp * cp)), float(np.mean(cp * cq)), float(np.mean(cq * cq)))


def weights(n: int, h: float) -> np.ndarray:
    """``w_k`` for ``k = 1..n+1``: 1 at odd ``k``, ``1 + h`` at even ``k``."""
    w = np.ones(n + 1)
    w[1::2] = 1.0 + h
    return w


def reweighted_lr(logp, logq, h: float) -> float:
    """``(1/n) sum_i (w_i log p_i - w_{i+1} log q_i)``.

    Odd ``n`` uses the weight sequence as is, so the last ``log q`` term
    carries ``w_{n+1} = 1 + h``.
    """
    logp, logq = _pair(logp, logq)
    if h < 0:
        raise ValueError("h must be non-negative")
    n = logp.size
    w = weights(n, h)
    return float(np.sum(w[:n] * logp - w[1:] * logq) / n)


def regularized_variance(vc: VarianceComponents, h: float) -> float:
    if h < 0:
        raise ValueError("h must be non-negative")
    v = (1.0 + h) * vc.sigma2 + 0.5 * h * h * (vc.sigma_p2 + vc.sigma_q2)
    if not v > 0:
        raise DegenerateVarianceError(
            f"regularised variance {v:.3g} is not positive (both log-density sequences constant?)"
        )
    return v


def _trace_hinv_v(H, V):
    """``tr(H^-1 V)`` and whether the pseudo-inverse had to be used."""
    H = np.asarray(H, dtype=float)
    V = np.asarray(V, dtype=float)
    if H.size == 0:
        return 0.0, False
    if np.linalg.cond(H) > COND_LIMIT:
        Hp = np.linalg.pinv(H, rcond=1e-10, hermitian=True)
        return float(np.trace(Hp @ V)), True
    return float(np.trace(linalg.solve(H, V, assume_a="sym"))), False


def _sandwich(fit):
    if hasattr(fit, "free_sandwich"):
        return fit.free_sandwich()
    return fit  # an (H, V) pair


@dataclass(frozen=True)
class HDiagnostics:
    z: float
    delta: float
    c_sd: float
    c_pl: float
    trace_a: float
    trace_b: float
    pinv_a: bool = False
    pinv_b: bool = False
    fallbacks: tuple[str, ...] = ()


def optimal_h(vc: VarianceComponents, fitA, fitB, alpha: float, n: int) -> tuple[float, HDiagnostics]:
    """Regularisation that balances size distortion against power loss.

    ``fitA``/``fitB`` are fit results (their free-parameter sandwich
    matrices are used) or explicit ``(H, V)`` pairs. The cube root is taken
    of ``|C_SD / C_PL|``; a zero constant falls back to a unit ratio and is
    recorded in ``fallbacks``.
    """
    if n < 3:
        raise ValueError("n must be >= 3 so that log log n > 0")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    spq = vc.sigma_p2 + vc.sigma_q2
    if not spq > 0:
        raise DegenerateVarianceError("sigma_p^2 + sigma_q^2 = 0")
    z = float(norm.ppf(1.0 - alpha / 2.0))
    s2 = max(vc.sigma2, 0.0)
    s = math.sqrt(s2)
    delta = 0.5 * s * (z - math.sqrt(4.0 + z * z))
    if s > 0:
        c_sd = norm.pdf(z - delta / s) * delta * (s2 - 2.0 * spq) / (4.0 * s**3)
    else:
        c_sd = 0.0

    Ha, Va = _sandwich(fitA)
    Hb, Vb = _sandwich(fitB)
    try:
        ta, pa = _trace_hinv_v(Ha, Va)
        tb, pb = _trace_hinv_v(Hb, Vb)
    except (np.linalg.LinAlgError, linalg.LinAlgError) as exc:
        raise np.linalg.LinAlgError(f"sandwich matrix could not be inverted: {exc}") from exc
    c_pl = 2.0 * norm.pdf(z) * max(abs(ta), abs(tb)) / math.sqrt(spq / 2.0)

    fallbacks = []
    if vc.sigma2 <= 1e-12 * spq:
        fallbacks.append("sigma2~0: nested or overlapping fits")
    if pa:
        fallbacks.append("pinv_A")
    if pb:
        fallbacks.append("pinv_B")
    if c_sd == 0.0 or not math.isfinite(c_sd):
        ratio = 1.0
        fallbacks.append("C_SD=0: unit ratio")
    elif c_pl == 0.0 or not math.isfinite(c_pl):
        ratio = 1.0
        fallbacks.append("C_PL=0: unit ratio")
    else:
        ratio = abs(c_sd / c_pl)
        if c_sd / c_pl < 0:
            fallbacks.append("negative C_SD/C_PL: absolute value used")
    h = ratio ** (1.0 / 3.0) * n ** (-1.0 / 6.0) * math.log(math.log(n)) ** (1.0 / 3.0)
    diag = HDiagnostics(z, delta, float(c_sd), float(c_pl), ta, tb, pa, pb, tuple(fallbacks))
    return h, diag


def sw_statistic(logp, logq, vc: VarianceComponents, h: float, n: int | None = None) -> float:
    """``T = sqrt(n) * LR~ / sigma~``."""
    logp, logq = _pair(logp, logq)
    n = logp.size if n is None else n
    return math.sqrt(n) * reweighted_lr(logp, logq, h) / math.sqrt(regularized_variance(vc, h))


def decide(t_stat: float, alpha: float) -> Decision:
    """Two-sided decision; ``|T| = z`` exactly retains the null."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    z = norm.ppf(1.0 - alpha / 2.0)
    if abs(t_stat) <= z:
        return Decision.RETAIN
    return Decision.FAVOR_A if t_stat > 0 else Decision.FAVOR_B


@dataclass(frozen=True)
class SwTestResult:
    model_a: str
    model_b: str
    lr_tilde: float
    h_n: float
    sigma_tilde2: float
    t_stat: float
    alpha: float
    decision: Decision
    components: VarianceComponents
    diagnostics: HDiagnostics
    n: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = self.diagnostics
        return {
            "model_a": self.model_a,
            "model_b": self.model_b,
            "n": self.n,
            "lr_tilde": self.lr_tilde,
            "h_n": self.h_n,
            "sigma_tilde2": self.sigma_tilde2,
            "t_stat": self.t_stat,
            "alpha": self.alpha,
            "decision": self.decision.value,
            "diagnostics": {
                "sigma_p2": self.components.sigma_p2,
                "sigma_pq": self.components.sigma_pq,
                "sigma_q2": self.components.sigma_q2,
                "sigma2": self.components.sigma2,
                "z": d.z,
                "delta": d.delta,
                "c_sd": d.c_sd,
                "c_pl": d.c_pl,
                "trace_a": d.trace_a,
                "trace_b": d.trace_b,
                "fallbacks": list(d.fallbacks),
            },
        }


def sw_test(fitA, fitB, alpha: float = 0.05, h: float | None = None) -> SwTestResult:
    """Run the full test on two fits of the same dataset.

    ``h`` overrides the data-driven regularisation when given.
    """
    logp = fitA.loglik_per_obs
    logq = fitB.loglik_per_obs
    if logp.shape != logq.shape:
        raise ValueError("fits were made on datasets of different size")
    n = logp.size
    vc = variance_components(logp, logq)
    h_opt, diag = optimal_h(vc, fitA, fitB, alpha, n)
    if h is None:
        h = h_opt
    lr = reweighted_lr(logp, logq, h)
    s2 = regularized_variance(vc, h)
    t = math.sqrt(n) * lr / math.sqrt(s2)
    return SwTestResult(
        getattr(fitA, "model_name", "A"), getattr(fitB, "model_name", "B"),
        lr, h, s2, t, alpha, decide(t, alpha), vc, diag, n,
    )

"""Pairwise S-W testing across a list of candidate models.

Every model is fitted once; the fits are shared by all pairs it takes
part in. Pairs are ordered by list index and the statistic is always
reported for (lower index, higher index), so a positive statistic favours
the earlier model.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from scipy.stats import norm

from .integrator import IntegrationError
from .likelihood import DegenerateFitError, FitFailure, FitOptions, FitResult, fit_mle
from .swtest import Decision, DegenerateVarianceError, SwTestResult, decide, sw_test

log = logging.getLogger(__name__)


class TournamentError(ValueError):
    pass


@dataclass(frozen=True)
class PairRow:
    index_a: int
    index_b: int
    result: SwTestResult
    adjusted_decision: Optional[Decision] = None

    @property
    def decision(self) -> Decision:
        return self.result.decision


@dataclass(frozen=True)
class Tally:
    wins: int = 0
    losses: int = 0
    retains: int = 0


@dataclass(frozen=True)
class TournamentReport:
    model_names: tuple[str, ...]
    fits: tuple[Optional[FitResult], ...]
    excluded: Mapping[str, str]     # model name -> reason
    rows: tuple[PairRow, ...]
    skipped: tuple[tuple[int, int], ...]
    alpha: float
    adjusted_alpha: Optional[float] = None

    def tally(self, adjusted: bool = False) -> dict[str, Tally]:
        counts = {nm: [0, 0, 0] for nm in self.model_names}
        for row in self.rows:
            dec = row.adjusted_decision if adjusted else row.decision
            if dec is None:
                raise ValueError("report has no adjusted decisions")
            a, b = self.model_names[row.index_a], self.model_names[row.index_b]
            if dec is Decision.FAVOR_A:
                counts[a][0] += 1
                counts[b][1] += 1
            elif dec is Decision.FAVOR_B:
                counts[b][0] += 1
                counts[a][1] += 1
            else:
                counts[a][2] += 1
                counts[b][2] += 1
        return {nm: Tally(*c) for nm, c in counts.items()}

    def ranking(self, adjusted: bool = False) -> list[str]:
        """Fitted models by (wins, fewest losses, total log-likelihood).

        A presentation order only; it carries no statistical meaning beyond
        the pairwise decisions.
        """
        tally = self.tally(adjusted)
        fitted = [(nm, f) for nm, f in zip(self.model_names, self.fits) if f is not None]
        fitted.sort(key=lambda x: (-tally[x[0]].wins, tally[x[0]].losses, -x[1].total_loglik))
        return [nm for nm, _ in fitted]


def _unique_names(models) -> tuple[str, ...]:
    names = [m.name for m in models]
    seen: dict[str, int] = {}
    out = []
    for nm in names:
        if names.count(nm) > 1:
            seen[nm] = seen.get(nm, 0) + 1
            out.append(f"{nm}#{seen[nm]}")
        else:
            out.append(nm)
    return tuple(out)


def run_tournament(
    models: Sequence,
    data,
    inits: Optional[Sequence] = None,
    alpha: float = 0.05,
    opts: Optional[FitOptions] = None,
    bonferroni: bool = False,
) -> TournamentReport:
    """Fit every model to ``data`` and test all ``N(N-1)/2`` pairs.

    ``inits`` is a per-model list of initial guesses (mapping or vector,
    ``None`` for the model-file defaults). A model whose fit fails is
    excluded and its pairs are listed in ``skipped``.
    """
    if len(models) < 2:
        raise TournamentError("a tournament needs at least 2 models")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    inits = list(inits) if inits is not None else [None] * len(models)
    if len(inits) != len(models):
        raise ValueError("one initial guess per model is required")
    names = _unique_names(models)
    fits: list[Optional[FitResult]] = []
    excluded: dict[str, str] = {}
    for nm, model, init in zip(names, models, inits):
        try:
            fit = fit_mle(model, data, init, opts)
            fits.append(replace(fit, model_name=nm))
        except (IntegrationError, DegenerateFitError, FitFailure) as exc:
            log.warning("model %s excluded: %s", nm, exc)
            excluded[nm] = f"{type(exc).__name__}: {exc}"
            fits.append(None)
    if sum(f is not None for f in fits) < 2:
        raise TournamentError(f"fewer than 2 models could be fitted: {excluded}")

    rows, skipped = [], []
    for i, j in itertools.combinations(range(len(models)), 2):
        if fits[i] is None or fits[j] is None:
            skipped.append((i, j))
            continue
        try:
            rows.append(PairRow(i, j, sw_test(fits[i], fits[j], alpha)))
        except DegenerateVarianceError as exc:
            log.warning("pair (%s, %s) skipped: %s", names[i], names[j], exc)
            skipped.append((i, j))
    report = TournamentReport(names, tuple(fits), excluded, tuple(rows), tuple(skipped), alpha)
    return bonferroni_adjust(report) if bonferroni else report


def bonferroni_adjust(report: TournamentReport, alpha: Optional[float] = None) -> TournamentReport:
    """Recompute decisions at ``alpha / (number of completed pairs)``.

    Unadjusted decisions are kept; adjusted ones sit alongside.
    """
    alpha = report.alpha if alpha is None else alpha
    m = max(len(report.rows), 1)
    adj = alpha / m
    rows = tuple(replace(r, adjusted_decision=decide(r.result.t_stat, adj)) for r in report.rows)
    return replace(report, rows=rows, adjusted_alpha=adj)


def critical_value(alpha: float) -> float:
    return float(norm.ppf(1.0 - alpha / 2.0))
